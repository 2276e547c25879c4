//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative cutoff below which eigenvalues of a Gram matrix count as zero.
pub const GRAM_RANK_TOL: f64 = 1e-10;

/// `X Xᵀ` for a row-sample matrix.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = x * x.transpose();
    symmetrize(&mut g);
    g
}

/// `XᵀX` for a matrix whose columns are samples (`d × n`), i.e. the Gram
/// matrix of the samples.
pub fn gram_cols(xt: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = xt.transpose() * xt;
    symmetrize(&mut g);
    g
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Pseudo-inverse of a symmetric positive semi-definite matrix, kept in
/// eigen-factored form.
#[derive(Debug, Clone)]
pub struct PsdPinv {
    vectors: DMatrix<f64>,
    inv_values: DVector<f64>,
    rank: usize,
    max_eig: f64,
}

impl PsdPinv {
    pub fn new(m: &DMatrix<f64>, rel_tol: f64) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self {
                vectors: DMatrix::zeros(0, 0),
                inv_values: DVector::zeros(0),
                rank: 0,
                max_eig: 0.0,
            };
        }
        let eig = SymmetricEigen::new(m.clone());
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = rel_tol * max_eig;
        let mut rank = 0;
        let inv_values = eig.eigenvalues.map(|l| {
            if max_eig > 0.0 && l > cutoff {
                rank += 1;
                1.0 / l
            } else {
                0.0
            }
        });
        Self {
            vectors: eig.eigenvectors,
            inv_values,
            rank,
            max_eig,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.inv_values.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eig
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(0);
        }
        let mut coef = self.vectors.tr_mul(b);
        coef.component_mul_assign(&self.inv_values);
        &self.vectors * coef
    }

    /// `bᵀ M⁺ b`.
    pub fn quad(&self, b: &DVector<f64>) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let coef = self.vectors.tr_mul(b);
        coef.iter()
            .zip(self.inv_values.iter())
            .map(|(c, l)| c * c * l)
            .sum()
    }
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().sum()
}

pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().cloned().unwrap_or(0.0)
}

/// Inverse of a small symmetric positive-definite matrix, refusing
/// numerically singular input.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > 1e-12 * max) || !min.is_finite() {
        return Err(Error::Conditioning(format!(
            "{what} is singular (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let inv = eig.eigenvalues.map(|l| 1.0 / l);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// Empirical quantile by order statistic: the `ceil(p·m)`-th smallest value.
pub fn order_quantile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    let k = ((p * m as f64).ceil() as usize).clamp(1, m);
    values[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = PsdPinv::new(&m, GRAM_RANK_TOL);
        assert_eq!(p.rank(), 1);
        let x = p.solve(&DVector::from_vec(vec![2.0, 2.0]));
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn norms_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, -4.0, 0.0]);
        assert_abs_diff_eq!(nuclear_norm(&m), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(op_norm(&m), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_inverse(&m, "m"), Err(Error::Conditioning(_))));
    }

    #[test]
    fn quantile_order_statistic() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(order_quantile(&mut v, 0.95), 95.0);
        assert_eq!(order_quantile(&mut v, 1.0), 100.0);
    }
}
