//! Adaptive Bridge-type penalized estimation for discretely observed
//! diffusions.
//!
//! The pipeline is: simulate or load a path ([`simulate`],
//! [`experiments::load_series_csv`]), fit the Gaussian quasi-likelihood
//! ([`qmle`]), shrink with drift and diffusion penalties ([`bridge`]), and
//! pick the penalty configuration from standardized residuals ([`tuning`]).
//! [`experiments`] wraps these into Monte Carlo and bootstrap studies.
//!
//! Every routine is generic over [`scalar::Real`]; the aliases below fix the
//! scalar to `f64` or `f32`.

pub mod bridge;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod qmle;
pub mod scalar;
pub mod simulate;
pub mod tuning;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type SdeModel64 = model::SdeModel<f64>;
pub type SdeModel32 = model::SdeModel<f32>;
pub type ParamVector64 = model::ParamVector<f64>;
pub type ParamVector32 = model::ParamVector<f32>;
pub type SamplePath64 = simulate::SamplePath<f64>;
pub type SamplePath32 = simulate::SamplePath<f32>;
pub type PenaltyConfig64 = bridge::PenaltyConfig<f64>;
pub type PenaltyConfig32 = bridge::PenaltyConfig<f32>;
pub type BridgeResult64 = bridge::BridgeResult<f64>;
pub type BridgeResult32 = bridge::BridgeResult<f32>;
pub type FitResult64 = qmle::FitResult<f64>;
pub type FitResult32 = qmle::FitResult<f32>;
pub type McConfig64 = experiments::McConfig<f64>;
pub type McSummary64 = experiments::McSummary<f64>;
pub type TuneResult64 = tuning::TuneResult<f64>;
pub type TuneResult32 = tuning::TuneResult<f32>;
