//! Interpolating predictors of minimal (or constructively bounded) norm.
//!
//! Vector solvers take features with one sample per column (`xt`, `d × n`);
//! the `*_rows` wrappers accept the `n × d` design matrix instead.

mod linear;
mod nuclear;

use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use linear::{
    min_norm_linear, min_norm_linear_rows, phase_brute, phase_brute_rows, phase_construct, phase_construct_rows,
    phase_construct_with, relu_construct, relu_construct_rows, relu_construct_with, relu_min_norm_qp_with, relu_min_norm_qp, MinNormSolver, PHASE_BRUTE_MAX_N,
};
pub use nuclear::{certify_nuclear, nuclear_min, AdmmParams, NuclearCertificate};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionKind {
    Linear,
    PhaseConstruct,
    PhaseBrute,
    ReluConstruct,
    /// Exact minimum-norm ReLU interpolant with fixed bias, zero labels
    /// relaxed to `ŷ ≤ 0`.
    ReluQp,
    Nuclear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Exact,
    IterativeConverged,
    IterationBudgetHit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Vector { w: DVector<f64>, b: Option<f64> },
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantSolution {
    pub kind: SolutionKind,
    pub predictor: Predictor,
    pub norm: f64,
    pub max_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// ADMM only: the scaled dual `ρU`, an approximate subgradient of the
    /// nuclear norm at the solution lying near the range of the adjoint.
    pub subgradient: Option<DMatrix<f64>>,
    /// ADMM only: `‖X‖_*` of the feasible iterate over the final iterations.
    pub trace: Vec<f64>,
}

impl InterpolantSolution {
    pub fn w(&self) -> Option<&DVector<f64>> {
        match &self.predictor {
            Predictor::Vector { w, .. } => Some(w),
            Predictor::Matrix(_) => None,
        }
    }

    pub fn b(&self) -> f64 {
        match &self.predictor {
            Predictor::Vector { b, .. } => b.unwrap_or(0.0),
            Predictor::Matrix(_) => 0.0,
        }
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.predictor {
            Predictor::Matrix(m) => Some(m),
            Predictor::Vector { .. } => None,
        }
    }

    /// Norm of the stored predictor, recomputed (ℓ₂ or nuclear).
    pub fn recomputed_norm(&self) -> f64 {
        match &self.predictor {
            Predictor::Vector { w, .. } => w.norm(),
            Predictor::Matrix(m) => crate::linalg::nuclear_norm(m),
        }
    }

    pub fn export(&self) -> SolutionExport {
        let (shape, data, b) = match &self.predictor {
            Predictor::Vector { w, b } => (vec![w.len()], w.as_slice().to_vec(), *b),
            Predictor::Matrix(m) => (vec![m.nrows(), m.ncols()], m.as_slice().to_vec(), None),
        };
        let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        SolutionExport {
            kind: self.kind,
            norm: self.norm,
            max_residual: self.max_residual,
            status: self.status,
            iterations: self.iterations,
            predictor: PredictorExport {
                shape,
                layout: "f64-le column-major".into(),
                b,
                data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionExport {
    pub kind: SolutionKind,
    pub norm: f64,
    pub max_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub predictor: PredictorExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorExport {
    pub shape: Vec<usize>,
    pub layout: String,
    pub b: Option<f64>,
    pub data_base64: String,
}

impl PredictorExport {
    pub fn decode(&self) -> Result<Vec<f64>> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data_base64)
            .map_err(|e| crate::Error::Config(format!("bad base64 predictor: {e}")))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}
