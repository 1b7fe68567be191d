//! Fixed-effects maximum likelihood for nonlinear panel single-index models
//! with interactive individual × time effects `α_i γ_t`.
//!
//! The crate covers the alternating concave estimator, the expected
//! incidental-parameter Hessian and its projections, analytical and
//! split-panel jackknife bias corrections for coefficients and average
//! partial effects, a principal-components oracle for the Gaussian model,
//! and a Monte Carlo harness.

pub mod ape;
pub mod bias;
pub mod error;
pub mod estimator;
pub mod family;
pub mod jackknife;
pub mod oracle;
pub mod panel;
pub mod projection;
pub mod simulation;

pub use error::{Error, Result};
pub use estimator::{fit_ife, FitOptions, FitResult, Params};
pub use family::Family;
pub use panel::Panel;
