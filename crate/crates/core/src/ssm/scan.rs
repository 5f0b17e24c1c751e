//! Linear recurrence `h_t = a ⊙ h_{t-1} + x_t` over complex diagonal states,
//! evaluated either step by step or with a Blelloch work-efficient scan.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{GradCtx, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanMode {
    Sequential,
    #[default]
    Parallel,
}

/// One element of the recurrence viewed as the affine map `h ↦ a·h + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub a: Complex64,
    pub b: Complex64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
    };

    /// Applies `self` first, then `next`: `(a₁,b₁)∘(a₂,b₂) = (a₂a₁, a₂b₁ + b₂)`.
    pub fn then(self, next: Affine) -> Affine {
        Affine {
            a: next.a * self.a,
            b: next.a * self.b + next.b,
        }
    }
}

/// In-place exclusive scan with an associative (not necessarily
/// commutative) operator, using the up-sweep/down-sweep tree. The length is
/// padded with `identity` to the next power of two internally.
pub fn blelloch_exclusive<T: Copy>(xs: &mut Vec<T>, identity: T, op: impl Fn(T, T) -> T) {
    let n = xs.len();
    if n == 0 {
        return;
    }
    let size = n.next_power_of_two();
    xs.resize(size, identity);

    let mut half = 1;
    while half < size {
        let stride = half * 2;
        let mut i = stride - 1;
        while i < size {
            xs[i] = op(xs[i - half], xs[i]);
            i += stride;
        }
        half = stride;
    }

    xs[size - 1] = identity;
    let mut half = size / 2;
    while half >= 1 {
        let stride = half * 2;
        let mut i = stride - 1;
        while i < size {
            let left = xs[i - half];
            xs[i - half] = xs[i];
            xs[i] = op(xs[i], left);
            i += stride;
        }
        half /= 2;
    }
    xs.truncate(n);
}

/// Runs the recurrence from `h_{-1} = 0`. `x` is `len × states`, row-major.
pub fn recurrence(a: &[Complex64], x: &[Complex64], len: usize, mode: ScanMode) -> Vec<Complex64> {
    let p = a.len();
    debug_assert_eq!(x.len(), len * p);
    match mode {
        ScanMode::Sequential => {
            let mut h = vec![Complex64::new(0.0, 0.0); p];
            let mut out = Vec::with_capacity(len * p);
            for t in 0..len {
                for k in 0..p {
                    h[k] = a[k] * h[k] + x[t * p + k];
                }
                out.extend_from_slice(&h);
            }
            out
        }
        ScanMode::Parallel => {
            let mut out = vec![Complex64::new(0.0, 0.0); len * p];
            let mut elems = Vec::with_capacity(len.next_power_of_two());
            for k in 0..p {
                elems.clear();
                elems.extend((0..len).map(|t| Affine { a: a[k], b: x[t * p + k] }));
                blelloch_exclusive(&mut elems, Affine::IDENTITY, Affine::then);
                for t in 0..len {
                    // prefix of everything before t, then element t, applied to h = 0
                    out[t * p + k] = a[k] * elems[t].b + x[t * p + k];
                }
            }
            out
        }
    }
}

fn to_complex(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

fn reverse_rows(x: &[Complex64], len: usize, p: usize) -> Vec<Complex64> {
    (0..len).rev().flat_map(|t| x[t * p..(t + 1) * p].iter().copied()).collect()
}

/// Differentiable recurrence. `a` is `[P]` with `x: [L, P]`, or `[B, P]`
/// with `x: [B, L, P]` for `B` independent sequences. Real and imaginary
/// parts come in separately; the output packs `h` as `[2, ..x.shape]`
/// (real part first).
pub fn recurrence_op(
    a_re: &Tensor,
    a_im: &Tensor,
    x_re: &Tensor,
    x_im: &Tensor,
    mode: ScanMode,
) -> Result<Tensor> {
    let shape_err = |lhs: &Tensor, rhs: &Tensor| Error::Shape {
        op: "recurrence",
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    };
    if a_im.shape() != a_re.shape() || !(1..=2).contains(&a_re.rank()) {
        return Err(shape_err(a_re, a_im));
    }
    let (batch, p) = match *a_re.shape() {
        [p] => (1, p),
        [b, p] => (b, p),
        _ => unreachable!(),
    };
    let len_axis = a_re.rank() - 1;
    let xs = x_re.shape();
    if x_im.shape() != xs
        || x_re.rank() != a_re.rank() + 1
        || xs[xs.len() - 1] != p
        || (a_re.rank() == 2 && xs[0] != batch)
    {
        return Err(shape_err(a_re, x_re));
    }
    let len = xs[len_axis];
    let n = batch * len * p;

    let a = to_complex(a_re.data(), a_im.data());
    let x = to_complex(x_re.data(), x_im.data());
    let mut h = Vec::with_capacity(n);
    for b in 0..batch {
        let seq = &x[b * len * p..(b + 1) * len * p];
        h.extend(recurrence(&a[b * p..(b + 1) * p], seq, len, mode));
    }
    let mut data = Vec::with_capacity(2 * n);
    data.extend(h.iter().map(|c| c.re));
    data.extend(h.iter().map(|c| c.im));
    let mut shape = vec![2];
    shape.extend_from_slice(xs);

    Ok(Tensor::from_op(
        shape,
        data,
        vec![a_re.clone(), a_im.clone(), x_re.clone(), x_im.clone()],
        Box::new(move |ctx: &GradCtx<'_>| {
            let a = to_complex(ctx.parents[0].data(), ctx.parents[1].data());
            let h = to_complex(&ctx.out[..n], &ctx.out[n..]);
            let g = to_complex(&ctx.grad[..n], &ctx.grad[n..]);
            let mut da = vec![Complex64::new(0.0, 0.0); batch * p];
            let mut dx = Vec::with_capacity(n);
            for b in 0..batch {
                let rows = b * len * p..(b + 1) * len * p;
                // adjoint: λ_t = g_t + conj(a) ⊙ λ_{t+1}, a reversed recurrence
                let a_conj: Vec<Complex64> = a[b * p..(b + 1) * p].iter().map(|c| c.conj()).collect();
                let g_rev = reverse_rows(&g[rows.clone()], len, p);
                let lam = reverse_rows(&recurrence(&a_conj, &g_rev, len, mode), len, p);
                let hb = &h[rows];
                let dab = &mut da[b * p..(b + 1) * p];
                for t in 1..len {
                    for k in 0..p {
                        dab[k] += lam[t * p + k] * hb[(t - 1) * p + k].conj();
                    }
                }
                dx.extend(lam);
            }
            vec![
                Some(da.iter().map(|c| c.re).collect()),
                Some(da.iter().map(|c| c.im).collect()),
                Some(dx.iter().map(|c| c.re).collect()),
                Some(dx.iter().map(|c| c.im).collect()),
            ]
        }),
    ))
}
