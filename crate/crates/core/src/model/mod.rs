//! The decomposition forecaster: instance normalization, variate embedding,
//! three gated state-space branches, global context refinement and the
//! forecasting head.
//!
//! Everything below `embed` works on variate tokens: a window `X: [T, M]`
//! becomes `X′: [M, D]`, and the S5 scan runs along the variable axis
//! (sequence length `M`, feature width `D`). Token-level functions also
//! accept a leading batch axis, `[B, M, D]`, with every window handled
//! independently.

mod config;

use rand::Rng;

pub use config::{Activation, BranchKind, Component, ModelConfig};

use crate::error::{Error, Result};
use crate::params::{gaussian, uniform_fan_in, Bound, ParamStore};
use crate::ssm::{init_s5, s5_bidirectional, ScanMode, SsmParams, SSM_TENSOR_NAMES};
use crate::tensor::Tensor;

/// LayerNorm epsilon inside the refinement operator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-variable statistics of the input window(s). `std` already includes
/// eps. Shapes keep the reduced time axis so they broadcast against the
/// forecast.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Tensor,
    pub std: Tensor,
}

/// Standardizes `x` along `axis` with population variance:
/// `(x − μ)/sqrt(σ² + eps)`.
fn normalize_along(x: &Tensor, axis: usize, eps: f64) -> Result<(Tensor, NormStats)> {
    if !(eps > 0.0) {
        return Err(Error::invalid("instance_normalize", "eps must be positive"));
    }
    let mean = x.mean_axis(axis)?;
    let centered = x.sub(&mean)?;
    let var = centered.square().mean_axis(axis)?;
    let std = var.add_scalar(eps).sqrt();
    let xn = centered.div(&std)?;
    Ok((xn, NormStats { mean, std }))
}

/// Standardizes every column of `x: [T, M]` with its own mean and
/// population variance. The returned statistics are `[M]`.
pub fn instance_normalize(x: &Tensor, eps: f64) -> Result<(Tensor, NormStats)> {
    if x.rank() != 2 || x.shape()[0] == 0 {
        return Err(Error::invalid(
            "instance_normalize",
            format!("expected a [T, M] window, got {:?}", x.shape()),
        ));
    }
    let m = x.shape()[1];
    let (xn, stats) = normalize_along(x, 0, eps)?;
    Ok((
        xn,
        NormStats {
            mean: stats.mean.reshape(&[m])?,
            std: stats.std.reshape(&[m])?,
        },
    ))
}

/// Inverse of the normalization, applied to a forecast laid out like the
/// statistics broadcast (`[H, M]` with `[M]` stats, `[B, M, H]` with
/// `[B, M, 1]` stats).
pub fn denormalize(yn: &Tensor, stats: &NormStats) -> Result<Tensor> {
    yn.mul(&stats.std)?.add(&stats.mean)
}

/// `X′ = Xnᵀ · W_e`: each variable's whole window becomes one `D`-vector.
pub fn embed(xn: &Tensor, w_e: &Tensor) -> Result<Tensor> {
    xn.transpose()?.matmul(w_e)
}

fn activate(x: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Tanh => x.tanh(),
        Activation::Gelu => x.gelu(),
        Activation::Relu => x.relu(),
    }
}

/// `x·W + b` on the last axis of `x`, with `W: [in, out]`, `b: [out]`.
fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() == 2 {
        return x.matmul(w)?.add(b);
    }
    let k = x.shape()[x.rank() - 1];
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().expect("rank checked") = w.shape()[1];
    x.reshape(&[x.numel() / k, k])?.matmul(w)?.add(b)?.reshape(&out_shape)
}

fn token_batch(x: &Tensor, op: &'static str) -> Result<usize> {
    match x.rank() {
        2 => Ok(1),
        3 => Ok(x.shape()[0]),
        _ => Err(Error::invalid(op, format!("expected [M, D] or [B, M, D], got {:?}", x.shape()))),
    }
}

/// Two-layer FFN producing the timescale multiplier.
#[derive(Clone, Debug)]
pub struct AspWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Scalar timescale multiplier `2·σ(FFN(mean over variables of X_c))` in
/// `(0, 2)`; exactly 1 when the FFN output is 0. Shape `[1]` for one window,
/// `[B, 1]` for a batch.
pub fn adaptive_step(x_c: &Tensor, asp: &AspWeights) -> Result<Tensor> {
    let batch = token_batch(x_c, "adaptive_step")?;
    let d = x_c.shape()[x_c.rank() - 1];
    let pooled = x_c.mean_axis(x_c.rank() - 2)?.reshape(&[batch, d])?;
    let hidden = linear(&pooled, &asp.w1, &asp.b1)?.gelu();
    let scale = linear(&hidden, &asp.w2, &asp.b2)?.sigmoid().scale(2.0);
    if x_c.rank() == 2 {
        scale.reshape(&[1])
    } else {
        Ok(scale)
    }
}

/// Gate MLP `D → D → D` with a branch-specific hidden nonlinearity.
#[derive(Clone, Debug)]
pub struct GateWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

impl GateWeights {
    /// Values in (0, 1), shaped like `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let hidden = activate(&linear(x, &self.w1, &self.b1)?, self.activation);
        Ok(linear(&hidden, &self.w2, &self.b2)?.sigmoid())
    }
}

#[derive(Clone, Debug)]
pub struct BranchParams {
    pub component: Component,
    pub pos_emb: Tensor,
    pub asp: AspWeights,
    pub gate: GateWeights,
    pub s5_fwd: SsmParams,
    pub s5_bwd: SsmParams,
    pub mix: Tensor,
}

#[derive(Clone, Debug)]
pub struct BranchOutput {
    pub h: Tensor,
    /// The timescale multiplier applied to both scan directions, one per window.
    pub delta_scale: Vec<f64>,
}

/// One gated state-space branch: `H_c = σ(MLP_c(X_c)) ⊙ S5(X_c; Δ′)` with
/// `X_c = X′ + pos_emb` and `Δ′ = Δ_scale·Δ` for each scan direction.
pub fn branch_forward(x: &Tensor, bp: &BranchParams, mode: ScanMode) -> Result<BranchOutput> {
    let x_c = x.add(&bp.pos_emb)?;
    let scale = adaptive_step(&x_c, &bp.asp)?;
    let delta_fwd = scale.mul(&bp.s5_fwd.base_delta())?;
    let delta_bwd = scale.mul(&bp.s5_bwd.base_delta())?;
    let s = s5_bidirectional(&bp.s5_fwd, &bp.s5_bwd, &bp.mix, &x_c, &delta_fwd, &delta_bwd, mode)?;
    let g = bp.gate.forward(&x_c)?;
    Ok(BranchOutput {
        h: g.mul(&s)?,
        delta_scale: scale.to_vec(),
    })
}

#[derive(Clone, Debug)]
pub struct GcrmParams {
    pub w_g: Tensor,
    pub alpha: Tensor,
}

/// Cross-variable summary `g`: the mean of `H` over variables, `[1, D]`
/// (or `[B, 1, D]`).
pub fn global_summary(h: &Tensor) -> Result<Tensor> {
    token_batch(h, "global_summary")?;
    h.mean_axis(h.rank() - 2)
}

/// `LayerNorm(H + σ(α)·G)` where every row of `G` is `z = W_g·g`.
pub fn gcrm_refine(h: &Tensor, gp: &GcrmParams) -> Result<Tensor> {
    let batch = token_batch(h, "gcrm_refine")?;
    let g = global_summary(h)?;
    let d = h.shape()[h.rank() - 1];
    let z = g.reshape(&[batch, d])?.matmul(&gp.w_g.transpose()?)?.reshape(g.shape())?;
    let injected = z.mul(&gp.alpha.sigmoid())?;
    h.add(&injected)?.layer_norm(LAYER_NORM_EPS)
}

#[derive(Clone, Debug)]
pub struct HeadWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Per-variable forecast in token layout: `[.., M, 3D] → [.., M, H]`.
fn head_tokens(components: [&Tensor; 3], head: &HeadWeights) -> Result<Tensor> {
    let cat = Tensor::concat(&components, components[0].rank() - 1)?;
    let hidden = linear(&cat, &head.w1, &head.b1)?.gelu();
    linear(&hidden, &head.w2, &head.b2)
}

/// Concatenates the refined components per variable (`[M, 3D]`), maps them
/// through a GELU FFN to `H` steps and returns `[H, M]`.
pub fn head_project(components: [&Tensor; 3], head: &HeadWeights) -> Result<Tensor> {
    if components[0].rank() != 2 {
        return Err(Error::invalid("head_project", format!("expected [M, D] components, got {:?}", components[0].shape())));
    }
    head_tokens(components, head)?.transpose()
}

/// Rearranges row-major `[len, M]` windows into one variate-major batch
/// `[B, M, len]`, the layout [`DecompModel::forward_batch`] consumes and
/// produces.
pub fn variate_major(windows: &[&[f64]], len: usize, m: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(windows.len() * len * m);
    for w in windows {
        if w.len() != len * m {
            return Err(Error::invalid(
                "variate_major",
                format!("window has {} values, expected {len}x{m}", w.len()),
            ));
        }
        for j in 0..m {
            data.extend((0..len).map(|t| w[t * m + j]));
        }
    }
    Tensor::new(&[windows.len(), m, len], data)
}

/// Model outputs for a single window.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// De-normalized forecast `[H, M]`.
    pub forecast: Tensor,
    /// Shared variate embedding `X′: [M, D]`.
    pub embedded: Tensor,
    /// Branch outputs before refinement, trend/seasonal/residual.
    pub branches: [Tensor; 3],
    /// Refined components `H′_c`.
    pub components: [Tensor; 3],
    pub delta_scales: [f64; 3],
    /// Statistics of the input window, `[M]` each.
    pub stats: NormStats,
}

/// Model outputs for a batch of windows, all in variate-major layout.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    /// De-normalized forecast `[B, M, H]`.
    pub forecast: Tensor,
    /// `X′: [B, M, D]`.
    pub embedded: Tensor,
    pub branches: [Tensor; 3],
    pub components: [Tensor; 3],
    /// Per-branch timescale multipliers, one per window.
    pub delta_scales: [Vec<f64>; 3],
    /// `[B, M, 1]` each.
    pub stats: NormStats,
}

/// Architecture description; all weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DecompModel {
    config: ModelConfig,
}

impl DecompModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh parameters. The ASP and head output layers start at zero, so
    /// every branch begins with `Δ′ = Δ` and the forecast with the window mean.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore> {
        let c = &self.config;
        let (t, d, m, h, a) = (c.lookback, c.d_model, c.n_vars, c.horizon, c.asp_hidden);
        let mut s = ParamStore::new();
        s.insert("embed.w", &[t, d], uniform_fan_in(rng, t, t * d))?;
        for (comp, (lo, hi)) in Component::ALL.iter().zip(c.bands) {
            let p = |k: &str| format!("{comp}.{k}");
            s.insert(p("pos_emb"), &[m, d], gaussian(rng, 0.02, m * d))?;
            if c.branch == BranchKind::SharedLinear {
                continue;
            }
            s.insert(p("asp.w1"), &[d, a], uniform_fan_in(rng, d, d * a))?;
            s.insert(p("asp.b1"), &[a], vec![0.0; a])?;
            s.insert(p("asp.w2"), &[a, 1], vec![0.0; a])?;
            s.insert(p("asp.b2"), &[1], vec![0.0])?;
            s.insert(p("gate.w1"), &[d, d], uniform_fan_in(rng, d, d * d))?;
            s.insert(p("gate.b1"), &[d], vec![0.0; d])?;
            s.insert(p("gate.w2"), &[d, d], uniform_fan_in(rng, d, d * d))?;
            s.insert(p("gate.b2"), &[d], vec![0.0; d])?;
            for dir in ["fwd", "bwd"] {
                let ssm = init_s5(c.state_dim, d, lo, hi, rng)?;
                for (name, tensor) in SSM_TENSOR_NAMES.iter().zip(ssm.tensors()) {
                    s.insert_tensor(format!("{comp}.{dir}.{name}"), tensor)?;
                }
            }
            s.insert(p("mix"), &[2 * d, d], uniform_fan_in(rng, 2 * d, 2 * d * d))?;
        }
        if c.branch == BranchKind::SharedLinear {
            s.insert("shared.w", &[d, d], uniform_fan_in(rng, d, d * d))?;
            s.insert("shared.b", &[d], vec![0.0; d])?;
        }
        if c.use_gcrm {
            s.insert("gcrm.w_g", &[d, d], uniform_fan_in(rng, d, d * d))?;
            s.insert("gcrm.alpha", &[1], vec![0.0])?;
        }
        s.insert("head.w1", &[3 * d, d], uniform_fan_in(rng, 3 * d, 3 * d * d))?;
        s.insert("head.b1", &[d], vec![0.0; d])?;
        s.insert("head.w2", &[d, h], vec![0.0; d * h])?;
        s.insert("head.b2", &[h], vec![0.0; h])?;
        Ok(s)
    }

    pub fn branch_params(&self, p: &Bound<'_>, comp: Component) -> Result<BranchParams> {
        let get = |k: &str| p.get(&format!("{comp}.{k}")).cloned();
        let ssm = |dir: &str| -> Result<SsmParams> {
            let mut ts = Vec::with_capacity(8);
            for name in SSM_TENSOR_NAMES {
                ts.push(get(&format!("{dir}.{name}"))?);
            }
            SsmParams::from_tensors(ts.try_into().expect("eight tensors"))
        };
        Ok(BranchParams {
            component: comp,
            pos_emb: get("pos_emb")?,
            asp: AspWeights {
                w1: get("asp.w1")?,
                b1: get("asp.b1")?,
                w2: get("asp.w2")?,
                b2: get("asp.b2")?,
            },
            gate: GateWeights {
                w1: get("gate.w1")?,
                b1: get("gate.b1")?,
                w2: get("gate.w2")?,
                b2: get("gate.b2")?,
                activation: comp.gate_activation(),
            },
            s5_fwd: ssm("fwd")?,
            s5_bwd: ssm("bwd")?,
            mix: get("mix")?,
        })
    }

    pub fn gcrm_params(&self, p: &Bound<'_>) -> Result<GcrmParams> {
        Ok(GcrmParams {
            w_g: p.get("gcrm.w_g")?.clone(),
            alpha: p.get("gcrm.alpha")?.clone(),
        })
    }

    pub fn head_weights(&self, p: &Bound<'_>) -> Result<HeadWeights> {
        Ok(HeadWeights {
            w1: p.get("head.w1")?.clone(),
            b1: p.get("head.b1")?.clone(),
            w2: p.get("head.w2")?.clone(),
            b2: p.get("head.b2")?.clone(),
        })
    }

    /// Full forward pass on one window `x: [T, M]`.
    pub fn forward(&self, p: &Bound<'_>, x: &Tensor) -> Result<ForwardOutput> {
        let c = &self.config;
        if x.shape() != [c.lookback, c.n_vars] {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: vec![c.lookback, c.n_vars],
                rhs: x.shape().to_vec(),
            });
        }
        let (m, d, h) = (c.n_vars, c.d_model, c.horizon);
        let xt = x.transpose()?.reshape(&[1, m, c.lookback])?;
        let out = self.forward_batch(p, &xt)?;
        let tokens = |t: &Tensor| t.reshape(&[m, d]);
        Ok(ForwardOutput {
            forecast: out.forecast.reshape(&[m, h])?.transpose()?,
            embedded: tokens(&out.embedded)?,
            branches: [tokens(&out.branches[0])?, tokens(&out.branches[1])?, tokens(&out.branches[2])?],
            components: [
                tokens(&out.components[0])?,
                tokens(&out.components[1])?,
                tokens(&out.components[2])?,
            ],
            delta_scales: out.delta_scales.map(|v| v[0]),
            stats: NormStats {
                mean: out.stats.mean.reshape(&[m])?,
                std: out.stats.std.reshape(&[m])?,
            },
        })
    }

    /// Forward pass on a batch of variate-major windows `xt: [B, M, T]`
    /// (see [`variate_major`]).
    pub fn forward_batch(&self, p: &Bound<'_>, xt: &Tensor) -> Result<BatchOutput> {
        let c = &self.config;
        let xs = xt.shape();
        if xs.len() != 3 || xs[0] == 0 || xs[1..] != [c.n_vars, c.lookback] {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: vec![xs.first().copied().unwrap_or(0).max(1), c.n_vars, c.lookback],
                rhs: xs.to_vec(),
            });
        }
        if !xt.all_finite() {
            return Err(Error::NonFinite("model input window".into()));
        }
        let (b, m, t, d) = (xs[0], c.n_vars, c.lookback, c.d_model);
        let (xn, stats) = normalize_along(xt, 2, c.eps_norm)?;
        let embedded = xn
            .reshape(&[b * m, t])?
            .matmul(p.get("embed.w")?)?
            .reshape(&[b, m, d])?;

        let mut branches = Vec::with_capacity(3);
        let mut delta_scales: [Vec<f64>; 3] = Default::default();
        for (i, comp) in Component::ALL.into_iter().enumerate() {
            let h = match c.branch {
                BranchKind::GtSsm => {
                    let out = branch_forward(&embedded, &self.branch_params(p, comp)?, c.scan_mode)?;
                    delta_scales[i] = out.delta_scale;
                    out.h
                }
                BranchKind::SharedLinear => {
                    delta_scales[i] = vec![1.0; b];
                    let x_c = embedded.add(p.get(&format!("{comp}.pos_emb"))?)?;
                    linear(&x_c, p.get("shared.w")?, p.get("shared.b")?)?
                }
            };
            branches.push(h);
        }
        let branches: [Tensor; 3] = branches.try_into().expect("three branches");

        let components: [Tensor; 3] = if c.use_gcrm {
            let gp = self.gcrm_params(p)?;
            [
                gcrm_refine(&branches[0], &gp)?,
                gcrm_refine(&branches[1], &gp)?,
                gcrm_refine(&branches[2], &gp)?,
            ]
        } else {
            branches.clone()
        };

        let yn = head_tokens([&components[0], &components[1], &components[2]], &self.head_weights(p)?)?;
        let forecast = denormalize(&yn, &stats)?;
        Ok(BatchOutput {
            forecast,
            embedded,
            branches,
            components,
            delta_scales,
            stats,
        })
    }
}
