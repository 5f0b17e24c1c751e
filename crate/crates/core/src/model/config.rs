use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ssm::ScanMode;

/// The three decomposition branches, in their fixed evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Trend,
    Seasonal,
    Residual,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Trend, Component::Seasonal, Component::Residual];

    pub fn name(self) -> &'static str {
        match self {
            Component::Trend => "trend",
            Component::Seasonal => "seasonal",
            Component::Residual => "residual",
        }
    }

    /// Hidden nonlinearity of the branch gate.
    pub fn gate_activation(self) -> Activation {
        match self {
            Component::Trend => Activation::Tanh,
            Component::Seasonal => Activation::Gelu,
            Component::Residual => Activation::Relu,
        }
    }

    /// Default `(Δ_min, Δ_max)` band: wide for trend, narrow for residual.
    pub fn default_band(self) -> (f64, f64) {
        match self {
            Component::Trend => (1e-4, 1e-1),
            Component::Seasonal => (1e-3, 1e-1),
            Component::Residual => (1e-2, 1e-1),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Gelu,
    Relu,
}

/// What produces each branch's `H_c` from its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BranchKind {
    /// Positional embedding, adaptive timescale, bidirectional S5 and gate.
    #[default]
    GtSsm,
    /// One linear layer shared by all branches (ablation baseline).
    SharedLinear,
}

impl FromStr for BranchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt_ssm" => Ok(BranchKind::GtSsm),
            "shared_linear" => Ok(BranchKind::SharedLinear),
            other => Err(Error::Config {
                key: "branch".into(),
                msg: format!("unknown branch kind `{other}` (expected gt_ssm or shared_linear)"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of variables `M`.
    pub n_vars: usize,
    /// Look-back length `T`.
    pub lookback: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    /// Embedding width `D`.
    pub d_model: usize,
    /// Complex state dimension `P` of every S5 layer.
    pub state_dim: usize,
    /// Hidden width of the adaptive step predictor.
    pub asp_hidden: usize,
    /// `(Δ_min, Δ_max)` per branch in trend, seasonal, residual order.
    pub bands: [(f64, f64); 3],
    pub eps_norm: f64,
    pub scan_mode: ScanMode,
    pub use_gcrm: bool,
    pub branch: BranchKind,
}

impl ModelConfig {
    pub fn new(n_vars: usize, lookback: usize, horizon: usize, d_model: usize, state_dim: usize) -> Self {
        Self {
            n_vars,
            lookback,
            horizon,
            d_model,
            state_dim,
            asp_hidden: (d_model / 2).max(1),
            bands: Component::ALL.map(Component::default_band),
            eps_norm: 1e-5,
            scan_mode: ScanMode::Parallel,
            use_gcrm: true,
            branch: BranchKind::GtSsm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_vars", self.n_vars),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("d_model", self.d_model),
            ("state_dim", self.state_dim),
            ("asp_hidden", self.asp_hidden),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    key: key.into(),
                    msg: "must be at least 1".into(),
                });
            }
        }
        if self.state_dim % 2 != 0 {
            return Err(Error::Config {
                key: "state_dim".into(),
                msg: format!("must be even, got {}", self.state_dim),
            });
        }
        for (c, (lo, hi)) in Component::ALL.iter().zip(self.bands) {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Config {
                    key: format!("{c}_band"),
                    msg: format!("need 0 < delta_min < delta_max, got ({lo}, {hi})"),
                });
            }
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::Config {
                key: "eps_norm".into(),
                msg: "must be positive".into(),
            });
        }
        Ok(())
    }
}
