//! Hessian Penalty toolkit.
//!
//! The penalty is the variance of second directional derivatives `vᵀHv` of a function
//! along Rademacher probes `v`, estimated with central finite differences. Its expectation
//! is twice the sum of squared off-diagonal Hessian entries, so minimizing it pushes a
//! generator towards an input parameterization whose components act independently.
//!
//! Modules:
//! - [`autodiff`]: tensor tape used to backpropagate through multi-pass losses.
//! - [`penalty`]: the stochastic estimator and the exact off-diagonal sum.
//! - [`oracle`]: brute-force Hessians, exhaustive probe enumeration, diagonality statistics.
//! - [`nets`]: small generator/discriminator MLPs with named activation taps.
//! - [`training`]: GAN and reconstruction trainers, warm-up, direction discovery.
//! - [`metrics`]: activeness and path length.
//! - [`data`]: procedural square-sprite datasets with known factors.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod functions;
pub mod metrics;
pub mod nets;
pub mod oracle;
pub mod penalty;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Toolkit version recorded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
