//! Training losses and evaluation metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Components whose Frobenius norm falls below this drop out of the
/// orthogonality penalty.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_orth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 0.1,
            lambda_orth: 0.01,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_rec: 0.0,
        lambda_orth: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("lambda_rec", self.lambda_rec), ("lambda_orth", self.lambda_orth)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    key: key.into(),
                    msg: format!("must be a finite non-negative number, got {v}"),
                });
            }
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape("mse", pred, target)?;
    Ok(pred.sub(target)?.square().mean())
}

/// `‖Σ_c H′_c − X′‖²_F / (M·D)`.
pub fn reconstruction_loss(components: [&Tensor; 3], embedded: &Tensor) -> Result<Tensor> {
    for c in components {
        same_shape("reconstruction_loss", c, embedded)?;
    }
    let sum = components[0].add(components[1])?.add(components[2])?;
    Ok(sum.sub(embedded)?.square().mean())
}

/// Frobenius cosine similarity, or `None` when either operand is (numerically) zero.
pub fn frobenius_cosine(a: &Tensor, b: &Tensor) -> Result<Option<Tensor>> {
    same_shape("frobenius_cosine", a, b)?;
    let na = a.square().sum().sqrt();
    let nb = b.square().sum().sqrt();
    if na.item() < NORM_EPS || nb.item() < NORM_EPS {
        return Ok(None);
    }
    Ok(Some(a.mul(b)?.sum().div(&na.mul(&nb)?)?))
}

/// `Σ_{c<d} |ρ(H′_c, H′_d)|` over the three component pairs, in `[0, 3]`.
/// Components may carry a leading batch axis (`[B, M, D]`); the loss is
/// then computed per window and averaged.
pub fn orthogonality_loss(components: [&Tensor; 3]) -> Result<Tensor> {
    let shape = components[0].shape();
    for c in &components[1..] {
        same_shape("orthogonality_loss", components[0], c)?;
    }
    let batch = match shape.len() {
        2 => 1,
        3 => shape[0],
        _ => {
            return Err(Error::invalid(
                "orthogonality_loss",
                format!("expected [M, D] or [B, M, D], got {shape:?}"),
            ))
        }
    };
    let flat: Vec<Tensor> = components
        .iter()
        .map(|c| c.reshape(&[batch, c.numel() / batch]))
        .collect::<Result<_>>()?;
    let sq: Vec<Tensor> = flat.iter().map(|f| f.square().sum_axis(1)).collect::<Result<_>>()?;
    let tiny: Vec<Vec<bool>> = sq
        .iter()
        .map(|s| s.data().iter().map(|v| v.sqrt() < NORM_EPS).collect())
        .collect();
    let ones = Tensor::full(&[batch, 1], 1.0);
    let zeros = Tensor::zeros(&[batch, 1]);
    let mut total = Tensor::zeros(&[batch, 1]);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let skip: Vec<bool> = tiny[i].iter().zip(&tiny[j]).map(|(a, b)| *a || *b).collect();
        if skip.iter().all(|&s| s) {
            continue;
        }
        // swap in unit norms where a pair is skipped, so the graph stays finite
        let den = Tensor::select(&skip, &ones, &sq[i].mul(&sq[j])?)?.sqrt();
        let rho = flat[i].mul(&flat[j])?.sum_axis(1)?.div(&den)?;
        total = total.add(&Tensor::select(&skip, &zeros, &rho.abs())?)?;
    }
    Ok(total.mean())
}

#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Tensor,
    pub mse: f64,
    pub reconstruction: f64,
    pub orthogonality: f64,
}

/// `MSE + λ_rec·L_rec + λ_orth·L_orth`. Auxiliary terms with zero weight
/// are still reported but kept out of the graph.
pub fn total_loss(
    pred: &Tensor,
    target: &Tensor,
    components: [&Tensor; 3],
    embedded: &Tensor,
    weights: LossWeights,
) -> Result<LossParts> {
    let primary = mse(pred, target)?;
    let rec = reconstruction_loss(components, embedded)?;
    let orth = orthogonality_loss(components)?;
    let mut total = primary.clone();
    if weights.lambda_rec != 0.0 {
        total = total.add(&rec.scale(weights.lambda_rec))?;
    }
    if weights.lambda_orth != 0.0 {
        total = total.add(&orth.scale(weights.lambda_orth))?;
    }
    Ok(LossParts {
        total,
        mse: primary.item(),
        reconstruction: rec.item(),
        orthogonality: orth.item(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Mean squared and mean absolute error over all entries.
pub fn metrics(pred: &[f64], target: &[f64]) -> Result<Metrics> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    let mut acc = MetricAccumulator::default();
    acc.add(pred, target);
    Ok(acc.finish())
}

/// Running sums for metrics over many windows.
#[derive(Clone, Debug, Default)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    n: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &[f64], target: &[f64]) {
        for (p, t) in pred.iter().zip(target) {
            let e = p - t;
            self.sq += e * e;
            self.abs += e.abs();
        }
        self.n += pred.len();
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn finish(&self) -> Metrics {
        if self.n == 0 {
            return Metrics {
                mse: f64::NAN,
                mae: f64::NAN,
            };
        }
        Metrics {
            mse: self.sq / self.n as f64,
            mae: self.abs / self.n as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let x = m(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let a = m(&[&[0.5, 1.0], &[1.0, 0.0]]);
        let b = m(&[&[0.5, 0.5], &[1.0, -2.0]]);
        let c = m(&[&[0.0, 0.5], &[1.0, 1.0]]);
        assert_eq!(reconstruction_loss([&a, &b, &c], &x).unwrap().item(), 0.0);

        let zero = Tensor::zeros(&[2, 2]);
        let ones = Tensor::full(&[2, 2], 1.0);
        assert_eq!(reconstruction_loss([&ones, &zero, &zero], &zero).unwrap().item(), 1.0);

        let base = reconstruction_loss([&a, &b, &zero], &x).unwrap().item();
        let s = 3.0;
        let scaled = reconstruction_loss([&a.scale(s), &b.scale(s), &zero], &x.scale(s)).unwrap().item();
        assert!((scaled - s * s * base).abs() < 1e-12);
    }

    #[test]
    fn orthogonality_examples() {
        let a = m(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let zero = Tensor::zeros(&[2, 2]);
        assert!((orthogonality_loss([&a, &a, &zero]).unwrap().item() - 1.0).abs() < 1e-15);

        let e1 = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let e2 = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let e3 = m(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(orthogonality_loss([&e1, &e2, &e3]).unwrap().item(), 0.0);

        let ones = Tensor::full(&[2, 2], 1.0);
        assert!((orthogonality_loss([&ones, &e1, &zero]).unwrap().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orthogonality_saturates_for_parallel_components() {
        let a = m(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let loss = orthogonality_loss([&a, &a.scale(2.0), &a.scale(-0.5)]).unwrap().item();
        assert!((loss - 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        // Build components with L_rec = 1 and L_orth = 0.5 and predictions with MSE 0.2.
        let zero = Tensor::zeros(&[2, 2]);
        let ones = Tensor::full(&[2, 2], 1.0);
        let e1 = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let x = ones.add(&e1).unwrap();
        let pred = Tensor::new(&[5], vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let target = Tensor::zeros(&[5]);
        let w = LossWeights {
            lambda_rec: 0.1,
            lambda_orth: 0.01,
        };
        let parts = total_loss(&pred, &target, [&ones, &e1, &zero], &x.scale(2.0).sub(&e1).unwrap(), w).unwrap();
        assert!((parts.mse - 0.2).abs() < 1e-15);
        assert!((parts.orthogonality - 0.5).abs() < 1e-15);
        assert!((parts.reconstruction - 1.0).abs() < 1e-15, "{}", parts.reconstruction);
        assert!((parts.total.item() - 0.305).abs() < 1e-15);

        let pure = total_loss(&pred, &target, [&ones, &e1, &zero], &x, LossWeights::ZERO).unwrap();
        assert_eq!(pure.total.item(), pure.mse);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), Metrics { mse: 0.0, mae: 0.0 });
        assert_eq!(metrics(&[1.5, 2.5], &[1.0, 2.0]).unwrap(), Metrics { mse: 0.25, mae: 0.5 });
        assert_eq!(metrics(&[1.0, -1.0, 0.0, 0.0], &[0.0; 4]).unwrap(), Metrics { mse: 0.5, mae: 0.5 });
        assert!(metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn batched_orthogonality_averages_windows() {
        let a = m(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let e1 = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let e2 = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let zero = Tensor::zeros(&[2, 2]);
        let stack = |x: &Tensor, y: &Tensor| Tensor::concat(&[x, y], 0).unwrap().reshape(&[2, 2, 2]).unwrap();
        let loss = orthogonality_loss([&stack(&a, &e1), &stack(&a, &e2), &stack(&zero, &e1)]).unwrap();
        // window 0: |ρ(a,a)| = 1; window 1: ρ(e1,e2) = 0, ρ(e1,e1) = 1, ρ(e2,e1) = 0
        assert!((loss.item() - 1.0).abs() < 1e-15);
    }
}
