//! Kullback proximal point (KPP) algorithms for maximum-likelihood estimation.
//!
//! The KPP recursion maximizes `l(θ) − β_k I(θ_k, θ)` at each step, where `I`
//! is the KL divergence between complete-data posteriors. With `β_k = 1` it is
//! exactly the EM algorithm; letting `β_k → 0` gives superlinear convergence.
//!
//! - [`model`]: the [`ProblemModel`] interface and relaxation schedules
//! - [`diagnostics`]: finite-difference derivative checks
//! - [`poisson`]: the Poisson deblurring instance
//! - [`proximal`]: exact KPP and EM iterations
//! - [`trust_region`]: second-order KPP with trust-region control
//! - [`harness`]: experiment runner, trace files and rate diagnostics

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod model;
pub mod poisson;
pub mod proximal;
pub mod trust_region;

pub use error::{Error, Result};
pub use model::{beta_at, ConcaveQuadratic, ParameterVector, ProblemModel, RelaxationSchedule};
pub use poisson::PoissonDeblurModel;
