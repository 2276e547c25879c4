//! Feature covariances: diagonal spectra for large `d`, dense PSD matrices
//! for small `d`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest dimension accepted for a dense covariance.
pub const DENSE_MAX_DIM: usize = 500;
/// Eigenvalues above `−PSD_TOL · λ_max` are accepted as PSD.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    Isotropic {
        d: usize,
        scale: f64,
    },
    Bilevel {
        d: usize,
        spike_count: usize,
        spike_value: f64,
        tail_value: f64,
    },
    Spectrum {
        values: Vec<f64>,
    },
    /// Row-major dense matrix, `d ≤ 500`.
    Dense {
        rows: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Dense {
        matrix: DMatrix<f64>,
        /// Symmetric square root, used by the sampler.
        root: DMatrix<f64>,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive, got {v}")))
    }
}

pub fn make_covariance(spec: &CovarianceSpec) -> Result<Covariance> {
    match spec {
        CovarianceSpec::Isotropic { d, scale } => {
            positive("scale", *scale)?;
            if *d == 0 {
                return Err(Error::domain("dimension must be positive"));
            }
            Ok(Covariance::Diagonal(DVector::from_element(*d, *scale)))
        }
        CovarianceSpec::Bilevel {
            d,
            spike_count,
            spike_value,
            tail_value,
        } => {
            positive("spike_value", *spike_value)?;
            positive("tail_value", *tail_value)?;
            if *d == 0 || spike_count > d {
                return Err(Error::domain(format!(
                    "bilevel needs 0 < d and spike_count ≤ d, got d={d}, spike_count={spike_count}"
                )));
            }
            Ok(Covariance::Diagonal(DVector::from_fn(*d, |i, _| {
                if i < *spike_count {
                    *spike_value
                } else {
                    *tail_value
                }
            })))
        }
        CovarianceSpec::Spectrum { values } => {
            if values.is_empty() {
                return Err(Error::domain("spectrum must be nonempty"));
            }
            for &v in values {
                positive("spectrum value", v)?;
            }
            Ok(Covariance::Diagonal(DVector::from_vec(values.clone())))
        }
        CovarianceSpec::Dense { rows } => {
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) || d == 0 {
                return Err(Error::domain("dense covariance must be a nonempty square matrix"));
            }
            let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
            Covariance::dense(DMatrix::from_row_slice(d, d, &flat))
        }
    }
}

impl Covariance {
    /// Validates symmetry and positive semi-definiteness.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if matrix.ncols() != d {
            return Err(Error::domain("covariance must be square"));
        }
        if d > DENSE_MAX_DIM {
            return Err(Error::domain(format!(
                "dense covariance limited to d ≤ {DENSE_MAX_DIM}, got {d}"
            )));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::domain("covariance is not symmetric"));
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL * max.abs().max(f64::MIN_POSITIVE) || !min.is_finite() {
            return Err(Error::domain(format!("covariance is not PSD (min eigenvalue {min:e})")));
        }
        let root = linalg::psd_sqrt(&matrix);
        Ok(Covariance::Dense { matrix, root })
    }

    /// The all-zero covariance (degenerate features at the mean).
    pub fn zero(d: usize) -> Self {
        Covariance::Diagonal(DVector::zeros(d))
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Covariance::Diagonal(_))
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Diagonal(v) => v.sum(),
            Covariance::Dense { matrix, .. } => matrix.trace(),
        }
    }

    /// `Tr(Σ²)`.
    pub fn trace_sq(&self) -> f64 {
        match self {
            Covariance::Diagonal(v) => v.norm_squared(),
            Covariance::Dense { matrix, .. } => matrix.norm_squared(),
        }
    }

    /// Effective rank `Tr(Σ)² / Tr(Σ²)` (0 for the zero matrix).
    pub fn eff_rank(&self) -> f64 {
        eff_rank(self.trace(), self.trace_sq())
    }

    /// `Σ v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Diagonal(s) => s.component_mul(v),
            Covariance::Dense { matrix, .. } => matrix * v,
        }
    }

    /// `Σ M` for a `d × k` matrix.
    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(s) => {
                let mut out = m.clone();
                for mut col in out.column_iter_mut() {
                    col.component_mul_assign(s);
                }
                out
            }
            Covariance::Dense { matrix, .. } => matrix * m,
        }
    }

    /// `vᵀ Σ v`.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        match self {
            Covariance::Diagonal(s) => s.iter().zip(v.iter()).map(|(a, b)| a * b * b).sum(),
            Covariance::Dense { matrix, .. } => v.dot(&(matrix * v)),
        }
    }

    /// Writes `Σ^{1/2} z` into `out`.
    pub fn root_mul_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Covariance::Diagonal(s) => {
                for ((o, zi), si) in out.iter_mut().zip(z).zip(s.iter()) {
                    *o = si.sqrt() * zi;
                }
            }
            Covariance::Dense { root, .. } => {
                let d = root.nrows();
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    let mut acc = 0.0;
                    for (j, zj) in z.iter().enumerate() {
                        acc += root[(i, j)] * zj;
                    }
                    *o = acc;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(s) => DMatrix::from_diagonal(s),
            Covariance::Dense { matrix, .. } => matrix.clone(),
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        match self {
            Covariance::Diagonal(s) => s.max(),
            Covariance::Dense { matrix, .. } => SymmetricEigen::new(matrix.clone()).eigenvalues.max(),
        }
    }
}

pub(crate) fn eff_rank(trace: f64, trace_sq: f64) -> f64 {
    if trace_sq > 0.0 {
        trace * trace / trace_sq
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariance_examples() {
        let iso = make_covariance(&CovarianceSpec::Isotropic { d: 4, scale: 1.0 }).unwrap();
        assert_eq!(iso.to_dense(), DMatrix::identity(4, 4));
        assert_abs_diff_eq!(iso.eff_rank(), 4.0, epsilon = 1e-12);

        let sp = make_covariance(&CovarianceSpec::Spectrum {
            values: vec![2.0, 1.0, 1.0],
        })
        .unwrap();
        assert_abs_diff_eq!(sp.eff_rank(), 8.0 / 3.0, epsilon = 1e-12);

        let bi = make_covariance(&CovarianceSpec::Bilevel {
            d: 1000,
            spike_count: 1,
            spike_value: 100.0,
            tail_value: 1.0,
        })
        .unwrap();
        assert_abs_diff_eq!(bi.trace(), 1099.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bi.eff_rank(), 1099.0 * 1099.0 / 10999.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_covariance(&CovarianceSpec::Isotropic { d: 3, scale: 0.0 }).is_err());
        assert!(make_covariance(&CovarianceSpec::Spectrum { values: vec![1.0, -1.0] }).is_err());
        assert!(make_covariance(&CovarianceSpec::Dense {
            rows: vec![vec![1.0, 2.0], vec![2.0, 1.0]]
        })
        .is_err());
        assert!(make_covariance(&CovarianceSpec::Dense {
            rows: vec![vec![2.0, 1.0], vec![1.0, 2.0]]
        })
        .is_ok());
    }

    #[test]
    fn dense_root_squares_back() {
        let c = make_covariance(&CovarianceSpec::Dense {
            rows: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
        })
        .unwrap();
        if let Covariance::Dense { matrix, root } = &c {
            assert!((root * root - matrix).amax() < 1e-12);
        } else {
            unreachable!();
        }
    }
}
