//! Diagonal complex MIMO state-space layer.
//!
//! The continuous system `ḣ = Λh + Bu`, `y = 2·Re(Ch) + D⊙u` keeps `P`
//! complex states, each standing for a conjugate pair of real states. The
//! real part of every eigenvalue is stored as `log(−Re λ)`, so the system is
//! stable for any parameter value.

pub mod scan;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ComplexPair, Tensor};
pub use scan::{Affine, ScanMode};

/// Eigenvalues with modulus below this use the `Δ·B` limit of the ZOH input map.
pub const LAMBDA_EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SsmParams {
    pub state_dim: usize,
    pub in_dim: usize,
    /// `log(−Re λ)`, shape `[P]`.
    pub lambda_log_neg_re: Tensor,
    /// `Im λ`, shape `[P]`.
    pub lambda_im: Tensor,
    /// Input matrix, `[P, D]`.
    pub b: ComplexPair,
    /// Output matrix, `[D, P]`.
    pub c: ComplexPair,
    /// Diagonal feedthrough, `[D]`.
    pub dmat: Tensor,
    /// Per-state base timescale `log Δ`, `[P]`.
    pub log_delta: Tensor,
}

/// Tensor names used when an [`SsmParams`] is flattened into a parameter store.
pub const SSM_TENSOR_NAMES: [&str; 8] = [
    "lambda_log_neg_re",
    "lambda_im",
    "b_re",
    "b_im",
    "c_re",
    "c_im",
    "dmat",
    "log_delta",
];

impl SsmParams {
    pub fn from_tensors(tensors: [Tensor; 8]) -> Result<Self> {
        let [lre, lim, b_re, b_im, c_re, c_im, dmat, log_delta] = tensors;
        let p = lre.numel();
        let d = dmat.numel();
        let check = |t: &Tensor, want: &[usize]| -> Result<()> {
            if t.shape() != want {
                return Err(Error::Shape {
                    op: "ssm_params",
                    lhs: want.to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            Ok(())
        };
        check(&lre, &[p])?;
        check(&lim, &[p])?;
        check(&log_delta, &[p])?;
        check(&dmat, &[d])?;
        check(&b_re, &[p, d])?;
        check(&c_re, &[d, p])?;
        Ok(Self {
            state_dim: p,
            in_dim: d,
            lambda_log_neg_re: lre,
            lambda_im: lim,
            b: ComplexPair::new(b_re, b_im)?,
            c: ComplexPair::new(c_re, c_im)?,
            dmat,
            log_delta,
        })
    }

    /// Tensors in [`SSM_TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.lambda_log_neg_re,
            &self.lambda_im,
            &self.b.re,
            &self.b.im,
            &self.c.re,
            &self.c.im,
            &self.dmat,
            &self.log_delta,
        ]
    }

    /// `λ = −exp(raw) + i·Im λ`.
    pub fn lambda(&self) -> ComplexPair {
        ComplexPair {
            re: self.lambda_log_neg_re.exp().neg(),
            im: self.lambda_im.clone(),
        }
    }

    /// `Δ = exp(log Δ)` per state.
    pub fn base_delta(&self) -> Tensor {
        self.log_delta.exp()
    }
}

/// S4D-Lin style initialization: `λ_k = −1/2 + iπk`, Gaussian `B` and `C`
/// with variance `1/P` per real component, unit feedthrough, and
/// `log Δ ~ U(log Δ_min, log Δ_max)`.
pub fn init_s5<R: Rng + ?Sized>(
    state_dim: usize,
    in_dim: usize,
    delta_min: f64,
    delta_max: f64,
    rng: &mut R,
) -> Result<SsmParams> {
    if state_dim == 0 || state_dim % 2 != 0 {
        return Err(Error::invalid(
            "init_s5",
            format!("state dimension must be positive and even, got {state_dim}"),
        ));
    }
    if in_dim == 0 {
        return Err(Error::invalid("init_s5", "input dimension must be positive"));
    }
    if !(delta_min > 0.0 && delta_min <= delta_max && delta_max.is_finite()) {
        return Err(Error::invalid(
            "init_s5",
            format!("need 0 < delta_min <= delta_max, got ({delta_min}, {delta_max})"),
        ));
    }
    let (p, d) = (state_dim, in_dim);
    let normal = Normal::new(0.0, (1.0 / p as f64).sqrt()).expect("valid normal");
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(rng)).collect() };
    let b_re = gauss(p * d);
    let b_im = gauss(p * d);
    let c_re = gauss(d * p);
    let c_im = gauss(d * p);
    let (lo, hi) = (delta_min.ln(), delta_max.ln());
    let log_delta: Vec<f64> = (0..p).map(|_| rng.gen_range(lo..=hi)).collect();

    SsmParams::from_tensors([
        Tensor::param(&[p], vec![0.5f64.ln(); p])?,
        Tensor::param(&[p], (0..p).map(|k| PI * k as f64).collect())?,
        Tensor::param(&[p, d], b_re)?,
        Tensor::param(&[p, d], b_im)?,
        Tensor::param(&[d, p], c_re)?,
        Tensor::param(&[d, p], c_im)?,
        Tensor::param(&[d], vec![1.0; d])?,
        Tensor::param(&[p], log_delta)?,
    ])
}

/// Zero-order-hold discretization of the diagonal system, possibly for a
/// batch of timescales.
#[derive(Clone, Debug)]
pub struct DiscreteSsm {
    /// `exp(Δλ)`, shaped like the timescale (`[P]` or `[B, P]`).
    pub a_bar: ComplexPair,
    /// Input gain `(exp(Δλ) − 1)/λ`, shaped like `a_bar`.
    pub gain: ComplexPair,
    /// Continuous input matrix `B`, `[P, D]`.
    pub b: ComplexPair,
}

impl DiscreteSsm {
    /// `B̄ = gain ⊙ B`: `[P, D]`, or `[B, P, D]` for a batch.
    pub fn b_bar(&self) -> Result<ComplexPair> {
        let mut shape = self.gain.shape().to_vec();
        shape.push(1);
        self.b.mul(&self.gain.reshape(&shape)?)
    }
}

/// `Ā = exp(Δλ)`, `B̄ = λ⁻¹(Ā − 1)·B`; `C` and `D` are unchanged by ZOH.
/// `delta_eff` is `[P]`, or `[B, P]` to discretize once per batch row.
pub fn zoh_discretize(params: &SsmParams, delta_eff: &Tensor) -> Result<DiscreteSsm> {
    let p = params.state_dim;
    let ds = delta_eff.shape();
    if !(1..=2).contains(&ds.len()) || ds[ds.len() - 1] != p {
        return Err(Error::Shape {
            op: "zoh_discretize",
            lhs: vec![p],
            rhs: ds.to_vec(),
        });
    }
    if delta_eff.data().iter().any(|&d| !(d > 0.0)) {
        return Err(Error::invalid("zoh_discretize", "timescale must be positive"));
    }
    let lambda = params.lambda();
    let a_bar = lambda.mul_real(delta_eff)?.exp()?;

    let tiny: Vec<bool> = lambda
        .re
        .data()
        .iter()
        .zip(lambda.im.data())
        .map(|(r, i)| r.hypot(*i) < LAMBDA_EPS)
        .collect();
    let gain = if tiny.iter().any(|&t| t) {
        // Removable singularity: (e^{Δλ} − 1)/λ → Δ as λ → 0.
        let safe = Tensor::full(&[p], 1.0);
        let guarded = a_bar.add_real_scalar(-1.0).div(&ComplexPair {
            re: Tensor::select(&tiny, &safe, &lambda.re)?,
            im: Tensor::select(&tiny, &Tensor::zeros(&[p]), &lambda.im)?,
        })?;
        let mask: Vec<bool> = tiny.iter().copied().cycle().take(delta_eff.numel()).collect();
        ComplexPair {
            re: Tensor::select(&mask, delta_eff, &guarded.re)?,
            im: Tensor::select(&mask, &Tensor::zeros(ds), &guarded.im)?,
        }
    } else {
        a_bar.add_real_scalar(-1.0).div(&lambda)?
    };
    Ok(DiscreteSsm {
        a_bar,
        gain,
        b: params.b.clone(),
    })
}

/// Runs the discretized system from a zero state:
/// `h_t = Ā⊙h_{t−1} + B̄u_t`, `y_t = 2·Re(C h_t) + D⊙u_t`.
///
/// `u` is `[L, D]`, or `[B, L, D]` when `d` was discretized with a batch of
/// timescales.
pub fn scan(d: &DiscreteSsm, params: &SsmParams, u: &Tensor, mode: ScanMode) -> Result<Tensor> {
    let batched = d.a_bar.shape().len() == 2;
    let us = u.shape();
    let rank = if batched { 3 } else { 2 };
    if us.len() != rank
        || us[rank - 1] != params.in_dim
        || us[rank - 2] == 0
        || (batched && us[0] != d.a_bar.shape()[0])
    {
        let mut want = d.a_bar.shape()[..rank - 2].to_vec();
        want.extend([us.get(rank - 2).copied().unwrap_or(0), params.in_dim]);
        return Err(Error::Shape {
            op: "scan",
            lhs: want,
            rhs: us.to_vec(),
        });
    }
    let p = params.state_dim;
    let rows = u.numel() / params.in_dim;
    let flat = u.reshape(&[rows, params.in_dim])?;
    let mut xshape = us[..rank - 1].to_vec();
    xshape.push(p);
    // B̄u = gain ⊙ (B u) with u real
    let bu = ComplexPair {
        re: flat.matmul(&d.b.re.transpose()?)?.reshape(&xshape)?,
        im: flat.matmul(&d.b.im.transpose()?)?.reshape(&xshape)?,
    };
    let mut gshape = d.gain.shape().to_vec();
    gshape.insert(gshape.len() - 1, 1);
    let x = bu.mul(&d.gain.reshape(&gshape)?)?;
    let h = scan::recurrence_op(&d.a_bar.re, &d.a_bar.im, &x.re, &x.im, mode)?;
    let h = h.reshape(&[2 * rows, p])?;
    let h_re = h.slice(0, 0, rows)?;
    let h_im = h.slice(0, rows, 2 * rows)?;
    let real_part = h_re
        .matmul(&params.c.re.transpose()?)?
        .sub(&h_im.matmul(&params.c.im.transpose()?)?)?;
    real_part.scale(2.0).add(&flat.mul(&params.dmat)?)?.reshape(us)
}

pub fn scan_sequential(d: &DiscreteSsm, params: &SsmParams, u: &Tensor) -> Result<Tensor> {
    scan(d, params, u, ScanMode::Sequential)
}

pub fn scan_parallel(d: &DiscreteSsm, params: &SsmParams, u: &Tensor) -> Result<Tensor> {
    scan(d, params, u, ScanMode::Parallel)
}

/// Forward scan and reversed-sequence backward scan, concatenated along the
/// feature axis and projected back to `D` by `mix: [2D, D]`. Works on
/// `[L, D]` or, with `[B, P]` timescales, on `[B, L, D]`.
pub fn s5_bidirectional(
    fwd: &SsmParams,
    bwd: &SsmParams,
    mix: &Tensor,
    u: &Tensor,
    delta_fwd: &Tensor,
    delta_bwd: &Tensor,
    mode: ScanMode,
) -> Result<Tensor> {
    if u.rank() < 2 {
        return Err(Error::invalid("s5_bidirectional", format!("input must be [L, D] or [B, L, D], got {:?}", u.shape())));
    }
    let seq_axis = u.rank() - 2;
    let forward = scan(&zoh_discretize(fwd, delta_fwd)?, fwd, u, mode)?;
    let reversed = u.flip(seq_axis)?;
    let backward = scan(&zoh_discretize(bwd, delta_bwd)?, bwd, &reversed, mode)?.flip(seq_axis)?;
    let feat = u.shape()[u.rank() - 1];
    let rows = u.numel() / feat;
    let both = Tensor::concat(&[&forward, &backward], u.rank() - 1)?.reshape(&[rows, 2 * feat])?;
    both.matmul(mix)?.reshape(u.shape())
}
