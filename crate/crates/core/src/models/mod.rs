//! Data models: Gaussian multi-index samplers, covariance geometry, matrix
//! sensing and the non-Gaussian counterexample.

pub mod counterexample;
pub mod covariance;
pub mod geometry;
pub mod matrix;
pub mod multi_index;

pub use counterexample::{sample_counterexample, CounterexampleModel, GKind, HKind};
pub use covariance::{make_covariance, Covariance, CovarianceSpec};
pub use geometry::ModelGeometry;
pub use matrix::{sample_matrix_sensing, MatrixSensingInstance};
pub use multi_index::{
    IndexSpec, Link, MeanEstimate, ModelConfig, MultiIndexModel, Noise, ProjectedDraws, ProjectedPredictor,
    SampleSet, Table,
};
