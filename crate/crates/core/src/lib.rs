//! Multivariate forecasting with three gated state-space branches (trend,
//! seasonal, residual), cross-variable context refinement and decomposition
//! losses, trained end to end on a small reverse-mode autodiff core.

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod objective;
pub mod params;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexPair, Tensor};
