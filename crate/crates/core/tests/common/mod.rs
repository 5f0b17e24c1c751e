#![allow(dead_code)]

use decomp_ssm::Tensor;

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is (numerically) zero are judged on absolute error instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares analytic gradients of `f` (which must return a scalar) with
/// central finite differences at step `h`. Returns the worst relative error.
pub fn grad_check(
    shapes: &[Vec<usize>],
    values: &[Vec<f64>],
    h: f64,
    f: impl Fn(&[Tensor]) -> Tensor,
) -> f64 {
    let leaves: Vec<Tensor> = shapes
        .iter()
        .zip(values)
        .map(|(s, v)| Tensor::param(s, v.clone()).unwrap())
        .collect();
    f(&leaves).backward().unwrap();
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().map(|g| g.clone()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |vals: &[Vec<f64>]| -> f64 {
        let ts: Vec<Tensor> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| Tensor::new(s, v.clone()).unwrap())
            .collect();
        f(&ts).item()
    };

    let mut worst = 0.0f64;
    let mut vals = values.to_vec();
    for i in 0..vals.len() {
        for j in 0..vals[i].len() {
            let orig = vals[i][j];
            vals[i][j] = orig + h;
            let up = eval(&vals);
            vals[i][j] = orig - h;
            let down = eval(&vals);
            vals[i][j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Reduces an arbitrary tensor to a scalar with fixed pseudo-random weights,
/// so that every output element contributes a distinct cotangent.
pub fn weighted_sum(t: &Tensor) -> Tensor {
    let w: Vec<f64> = (0..t.numel())
        .map(|i| ((i as f64 + 1.0) * 0.7548776662).fract() * 2.0 - 1.0)
        .collect();
    t.mul(&Tensor::new(t.shape(), w).unwrap()).unwrap().sum()
}

pub mod oracle;
pub mod fixtures;
