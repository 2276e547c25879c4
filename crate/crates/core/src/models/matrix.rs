//! Matrix sensing: `y_i = ⟨A_i, X*⟩ + ξ_i` with i.i.d. standard normal
//! sensing matrices.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSensingInstance {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub x_star: DMatrix<f64>,
    pub sigma_noise: f64,
    /// `vec(A_i)` (column-major) as column `i`; shape `d1·d2 × n`.
    pub a_cols: DMatrix<f64>,
    pub y: DVector<f64>,
    pub seed: u64,
}

impl MatrixSensingInstance {
    pub fn n(&self) -> usize {
        self.a_cols.ncols()
    }

    pub fn sensing_matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.d1, self.d2, self.a_cols.column(i).as_slice())
    }

    /// `(⟨A_i, X⟩)_i`.
    pub fn measure(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.a_cols.tr_mul(&DVector::from_column_slice(x.as_slice()))
    }

    /// `Σ_i ν_i A_i`.
    pub fn adjoint(&self, nu: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.a_cols * nu;
        DMatrix::from_column_slice(self.d1, self.d2, v.as_slice())
    }

    /// Closed-form risk `‖X − X*‖²_F + σ²`.
    pub fn population_loss(&self, x: &DMatrix<f64>) -> f64 {
        (x - &self.x_star).norm_squared() + self.sigma_noise * self.sigma_noise
    }

    /// Builds an instance from explicit parts (used by tests with hand-made
    /// sensing matrices).
    pub fn from_parts(
        x_star: DMatrix<f64>,
        r: usize,
        sigma_noise: f64,
        sensing: &[DMatrix<f64>],
        y: DVector<f64>,
    ) -> Result<Self> {
        let (d1, d2) = x_star.shape();
        if sensing.len() != y.len() || sensing.iter().any(|a| a.shape() != (d1, d2)) {
            return Err(Error::domain("sensing matrices must match X* and y"));
        }
        let mut a_cols = DMatrix::zeros(d1 * d2, sensing.len());
        for (i, a) in sensing.iter().enumerate() {
            a_cols.column_mut(i).copy_from_slice(a.as_slice());
        }
        Ok(Self {
            d1,
            d2,
            r,
            x_star,
            sigma_noise,
            a_cols,
            y,
            seed: 0,
        })
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `X* = c·U Vᵀ` with Gaussian `d1 × r`, `d2 × r` factors rescaled so that
/// `‖X*‖_F = x_star_scale`; then each `A_i` entrywise followed by `ξ_i`.
pub fn sample_matrix_sensing(
    d1: usize,
    d2: usize,
    r: usize,
    n: usize,
    sigma_noise: f64,
    x_star_scale: f64,
    seed: u64,
) -> Result<MatrixSensingInstance> {
    if d1 == 0 || d2 == 0 || r == 0 || r > d1.min(d2) {
        return Err(Error::domain(format!("need 1 ≤ r ≤ min(d1, d2), got r={r}, d1={d1}, d2={d2}")));
    }
    if n == 0 {
        return Err(Error::domain("need at least one measurement"));
    }
    if !(sigma_noise >= 0.0) || !(x_star_scale >= 0.0) {
        return Err(Error::domain("noise level and scale must be nonnegative"));
    }
    let mut rng = rng::stream(seed, rng::streams::DATA);
    let u = gaussian(d1, r, &mut rng);
    let v = gaussian(d2, r, &mut rng);
    let mut x_star = &u * v.transpose();
    let fro = x_star.norm();
    x_star *= x_star_scale / fro;
    let mut a_cols = DMatrix::zeros(d1 * d2, n);
    let mut y = DVector::zeros(n);
    let xs = x_star.as_slice();
    for i in 0..n {
        let mut col = a_cols.column_mut(i);
        let mut dot = 0.0;
        for (j, e) in col.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = z;
            dot += z * xs[j];
        }
        let xi: f64 = StandardNormal.sample(&mut rng);
        y[i] = dot + sigma_noise * xi;
    }
    Ok(MatrixSensingInstance {
        d1,
        d2,
        r,
        x_star,
        sigma_noise,
        a_cols,
        y,
        seed,
    })
}
