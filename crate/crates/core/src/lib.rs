//! Optimistic-rate generalization bounds for interpolating predictors
//! under Gaussian multi-index data, with the samplers, interpolant solvers
//! and experiment harness needed to check them numerically.

pub mod bounds;
pub mod error;
pub mod harness;
pub mod interpolants;
pub mod linalg;
pub mod losses;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
pub use losses::{Activation, EnvelopeReport, Grid, LossKind, LossSpec};
pub use harness::{ExperimentReport, RunOptions, TrialRecord};
pub use interpolants::InterpolantSolution;
pub use models::{Covariance, CovarianceSpec, MultiIndexModel};
