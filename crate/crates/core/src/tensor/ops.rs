use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;

use super::broadcast::{broadcast_shapes, offsets, reduce_to, reduce_with, Indexer};
use super::{numel, GradCtx, Tensor};
use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Splits `shape` around `axis` into (outer, extent, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    fn unary(&self, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let x = ctx.parents[0].data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x)
                    .zip(ctx.out)
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Result<Tensor> {
        let shape = broadcast_shapes(self.shape(), other.shape()).ok_or_else(|| Error::Shape {
            op,
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        })?;
        let (a, b) = (self.data(), other.data());
        let ia = Indexer::new(self.shape(), &shape);
        let ib = Indexer::new(other.shape(), &shape);
        let n = shape.iter().product::<usize>();
        let (data, tables): (Vec<f64>, Option<Rc<(Vec<usize>, Vec<usize>)>>) = if self.shape() == other.shape() {
            (a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(), None)
        } else {
            let (ta, tb) = (ia.table(n), ib.table(n));
            let d = ta.iter().zip(&tb).map(|(&i, &j)| f(a[i], b[j])).collect();
            (d, Some(Rc::new((ta, tb))))
        };
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let (a, b) = (pa.data(), pb.data());
                let local = |d: fn(f64, f64, f64) -> f64| -> Vec<f64> {
                    match &tables {
                        None => a
                            .iter()
                            .zip(b)
                            .zip(ctx.grad.iter().zip(ctx.out))
                            .map(|((x, y), (g, z))| g * d(*x, *y, *z))
                            .collect(),
                        Some(t) => t
                            .0
                            .iter()
                            .zip(&t.1)
                            .zip(ctx.grad.iter().zip(ctx.out))
                            .map(|((&i, &j), (g, z))| g * d(a[i], b[j], *z))
                            .collect(),
                    }
                };
                let ga = pa.requires_grad().then(|| reduce_with(&local(da), pa.numel(), &ia));
                let gb = pb.requires_grad().then(|| reduce_with(&local(db), pb.numel(), &ib));
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |_, b, _| 1.0 / b, |_, b, z| -z / b)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| vec![Some(ctx.grad.iter().map(|g| g * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|ctx: &GradCtx<'_>| vec![Some(ctx.grad.to_vec())]),
        )
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sin(&self) -> Tensor {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self) -> Tensor {
        self.unary(|x| x * normal_cdf(x), |x, _| normal_cdf(x) + x * normal_pdf(x))
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(|ctx: &GradCtx<'_>| {
                vec![Some(vec![ctx.grad[0]; ctx.parents[0].numel()])]
            }),
        )
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::invalid(
                "sum_axis",
                format!("axis {axis} out of range for shape {:?}", self.shape()),
            ));
        }
        let (outer, n, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let mut g = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        g.extend_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = *self.shape().get(axis).unwrap_or(&1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let err = || Error::Shape {
            op: "matmul",
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        };
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(err());
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let out = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
                let g = ctx.grad;
                // dA = G·Bᵀ
                let ga = a.requires_grad().then(|| matmul_raw(g, &transpose_raw(b.data(), k, n), m, n, k));
                // dB = Aᵀ·G
                let gb = b.requires_grad().then(|| {
                    let ad = a.data();
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (acc, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *acc += aip * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(
                "transpose",
                format!("expected a matrix, got shape {:?}", self.shape()),
            ));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let out = transpose_raw(self.data(), r, c);
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| vec![Some(transpose_raw(ctx.grad, c, r))]),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|ctx: &GradCtx<'_>| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        match broadcast_shapes(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::Shape {
                    op: "broadcast_to",
                    lhs: self.shape().to_vec(),
                    rhs: shape.to_vec(),
                })
            }
        }
        let x = self.data();
        let data = offsets(self.shape(), shape).into_iter().map(|i| x[i]).collect();
        let out_shape = shape.to_vec();
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                vec![Some(reduce_to(ctx.grad, ctx.parents[0].shape(), &out_shape))]
            }),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no tensors given"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for shape {:?}", first.shape()),
            ));
        }
        for p in &parts[1..] {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            shape,
            data,
            parts.iter().map(|p| (*p).clone()).collect(),
            Box::new(move |ctx: &GradCtx<'_>| {
                let mut grads: Vec<Vec<f64>> =
                    widths.iter().map(|w| Vec::with_capacity(w * outer)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &w) in grads.iter_mut().zip(&widths) {
                        g.extend_from_slice(&ctx.grad[pos..pos + w]);
                        pos += w;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.rank() || start > end || end > self.shape()[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of shape {:?}", self.shape()),
            ));
        }
        let (outer, n, inner) = axis_split(self.shape(), axis);
        let w = (end - start) * inner;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x[base..base + w]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let mut g = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    g[base..base + w].copy_from_slice(&ctx.grad[o * w..(o + 1) * w]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Reverses the order of elements along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::invalid(
                "flip",
                format!("axis {axis} out of range for shape {:?}", self.shape()),
            ));
        }
        let (outer, n, inner) = axis_split(self.shape(), axis);
        let data = flip_raw(self.data(), outer, n, inner);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| vec![Some(flip_raw(ctx.grad, outer, n, inner))]),
        ))
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// (population) variance. No affine parameters.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        if self.rank() == 0 || eps <= 0.0 {
            return Err(Error::invalid(
                "layer_norm",
                format!("shape {:?}, eps {eps}", self.shape()),
            ));
        }
        let d = *self.shape().last().unwrap();
        if d == 0 {
            return Err(Error::invalid("layer_norm", "empty feature axis"));
        }
        let rows = self.numel() / d;
        let x = self.data();
        let mut out = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|v| (v - mean) * inv));
            inv_std.push(inv);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let mut g = Vec::with_capacity(ctx.grad.len());
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &ctx.grad[r * d..(r + 1) * d];
                    let yr = &ctx.out[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    g.extend(gr.iter().zip(yr).map(|(gv, yv)| inv * (gv - mg - yv * mgy)));
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Elementwise choice: `on_true[i]` where `mask[i]`, else `on_false[i]`.
    pub fn select(mask: &[bool], on_true: &Tensor, on_false: &Tensor) -> Result<Tensor> {
        if on_true.shape() != on_false.shape() || mask.len() != on_true.numel() {
            return Err(Error::Shape {
                op: "select",
                lhs: on_true.shape().to_vec(),
                rhs: on_false.shape().to_vec(),
            });
        }
        let data = mask
            .iter()
            .zip(on_true.data().iter().zip(on_false.data()))
            .map(|(&m, (&a, &b))| if m { a } else { b })
            .collect();
        let mask: Rc<[bool]> = mask.into();
        Ok(Tensor::from_op(
            on_true.shape().to_vec(),
            data,
            vec![on_true.clone(), on_false.clone()],
            Box::new(move |ctx: &GradCtx<'_>| {
                let gt = mask.iter().zip(ctx.grad).map(|(&m, g)| if m { *g } else { 0.0 });
                let gf = mask.iter().zip(ctx.grad).map(|(&m, g)| if m { 0.0 } else { *g });
                vec![Some(gt.collect()), Some(gf.collect())]
            }),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    const R: usize = 4;
    const C: usize = 8;
    let mut out = vec![0.0; m * n];
    let (mb, nb) = (m - m % R, n - n % C);
    // 4×8 register tiles over the bulk of the output
    for i in (0..mb).step_by(R) {
        for j in (0..nb).step_by(C) {
            let mut acc = [[0.0f64; C]; R];
            for p in 0..k {
                let brow: &[f64; C] = b[p * n + j..p * n + j + C].try_into().expect("tile width");
                for (r, acc_r) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for c in 0..C {
                        acc_r[c] += av * brow[c];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                out[(i + r) * n + j..(i + r) * n + j + C].copy_from_slice(acc_r);
            }
        }
    }
    // ragged right columns for the tiled rows, then the leftover rows
    if nb < n {
        for i in 0..mb {
            for p in 0..k {
                let av = a[i * k + p];
                for (o, bv) in out[i * n + nb..(i + 1) * n].iter_mut().zip(&b[p * n + nb..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
    }
    for i in mb..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

fn flip_raw(x: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for o in 0..outer {
        for k in (0..n).rev() {
            let base = (o * n + k) * inner;
            out.extend_from_slice(&x[base..base + inner]);
        }
    }
    out
}
