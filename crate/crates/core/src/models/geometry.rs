//! The oblique projection `Q = I − W (WᵀΣW)⁻¹ WᵀΣ` and the covariance
//! `Σ⊥ = QᵀΣQ` of the label-independent part of the features.
//!
//! Nothing `d × d` is formed: with `U = ΣW` and `M = WᵀΣW`,
//! `Qv = v − W M⁻¹ Uᵀv`, `Qᵀv = v − U M⁻¹ Wᵀv` and `Σ⊥ = Σ − U M⁻¹ Uᵀ`.

use nalgebra::{DMatrix, DVector};

use super::covariance::{eff_rank, Covariance};
use crate::error::{Error, Result};
use crate::linalg;

/// Dense `Q` / `Σ⊥` are only materialized up to this dimension.
pub const DENSE_GEOMETRY_MAX_DIM: usize = 2000;

#[derive(Debug, Clone)]
pub struct ModelGeometry {
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    m_inv: DMatrix<f64>,
    sigma: Covariance,
    pub trace_perp: f64,
    pub trace_perp_sq: f64,
    pub eff_rank_perp: f64,
}

impl ModelGeometry {
    pub fn new(sigma: &Covariance, w: &DMatrix<f64>) -> Result<Self> {
        let d = sigma.dim();
        if w.nrows() != d {
            return Err(Error::domain(format!(
                "index matrix has {} rows, covariance dimension is {d}",
                w.nrows()
            )));
        }
        let k = w.ncols();
        if k >= d {
            return Err(Error::domain(format!("need k < d, got k={k}, d={d}")));
        }
        let u = sigma.mul_mat(w);
        let m = w.transpose() * &u;
        let m_inv = linalg::spd_inverse(&m, "WᵀΣW")?;
        let (trace_perp, trace_perp_sq) = if k == 0 {
            (sigma.trace(), sigma.trace_sq())
        } else {
            let utu = u.transpose() * &u;
            let sigma_u = sigma.mul_mat(&u);
            let ut_sigma_u = u.transpose() * sigma_u;
            let a = &m_inv * &utu;
            let tr = sigma.trace() - a.trace();
            let tr_sq = sigma.trace_sq() - 2.0 * (&m_inv * ut_sigma_u).trace() + (&a * &a).trace();
            (tr.max(0.0), tr_sq.max(0.0))
        };
        Ok(Self {
            w: w.clone(),
            u,
            m_inv,
            sigma: sigma.clone(),
            trace_perp,
            trace_perp_sq,
            eff_rank_perp: eff_rank(trace_perp, trace_perp_sq),
        })
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    /// `(WᵀΣW)⁻¹`.
    pub fn m_inv(&self) -> &DMatrix<f64> {
        &self.m_inv
    }

    /// `Q v`.
    pub fn q_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.k() == 0 {
            return v.clone();
        }
        v - &self.w * (&self.m_inv * self.u.tr_mul(v))
    }

    /// `Qᵀ v`.
    pub fn qt_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.k() == 0 {
            return v.clone();
        }
        v - &self.u * (&self.m_inv * self.w.tr_mul(v))
    }

    /// Coefficients `c = M⁻¹ WᵀΣ w` of `⟨w, x⟩` on the centered index
    /// variables `η − Wᵀμ`.
    pub fn index_coeffs(&self, w: &DVector<f64>) -> DVector<f64> {
        if self.k() == 0 {
            return DVector::zeros(0);
        }
        &self.m_inv * self.u.tr_mul(w)
    }

    /// `wᵀ Σ⊥ w`, clipped at zero.
    pub fn perp_quad(&self, w: &DVector<f64>) -> f64 {
        let full = self.sigma.quad(w);
        if self.k() == 0 {
            return full.max(0.0);
        }
        let t = self.u.tr_mul(w);
        (full - t.dot(&(&self.m_inv * &t))).max(0.0)
    }

    /// `Σ⊥ v`.
    pub fn sigma_perp_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let sv = self.sigma.mul_vec(v);
        if self.k() == 0 {
            return sv;
        }
        sv - &self.u * (&self.m_inv * self.u.tr_mul(v))
    }

    fn check_dense(&self) -> Result<()> {
        if self.dim() > DENSE_GEOMETRY_MAX_DIM {
            return Err(Error::domain(format!(
                "dense geometry limited to d ≤ {DENSE_GEOMETRY_MAX_DIM}"
            )));
        }
        Ok(())
    }

    pub fn q_dense(&self) -> Result<DMatrix<f64>> {
        self.check_dense()?;
        let d = self.dim();
        Ok(DMatrix::identity(d, d) - &self.w * &self.m_inv * self.u.transpose())
    }

    pub fn sigma_perp_dense(&self) -> Result<DMatrix<f64>> {
        self.check_dense()?;
        let mut s = self.sigma.to_dense() - &self.u * &self.m_inv * self.u.transpose();
        linalg::symmetrize(&mut s);
        Ok(s)
    }

    /// Writes `Qᵀ x` for a centered feature vector `x` into `out`; when `x`
    /// is `N(0, Σ)`, the result is `N(0, Σ⊥)`.
    pub fn qt_apply_slice(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
        let k = self.k();
        if k == 0 {
            return;
        }
        let mut wx = DVector::zeros(k);
        for j in 0..k {
            wx[j] = self.w.column(j).iter().zip(x).map(|(a, b)| a * b).sum();
        }
        let coef = &self.m_inv * wx;
        for j in 0..k {
            let cj = coef[j];
            if cj != 0.0 {
                for (o, uij) in out.iter_mut().zip(self.u.column(j).iter()) {
                    *o -= uij * cj;
                }
            }
        }
    }

    /// Nonzero eigenvalues of `Σ⊥` grouped as `(value, multiplicity)`, so
    /// that `‖z‖²` for `z ~ N(0, Σ⊥)` is `Σ_g λ_g χ²_{m_g}`.
    ///
    /// For diagonal `Σ`, `Σ⊥` is block diagonal: a dense block on the rows
    /// where `W` is supported and `Σ` itself elsewhere. Returns `None` when
    /// that dense block (or a dense `Σ`) is too large to diagonalize.
    pub fn perp_spectrum(&self) -> Option<Vec<(f64, usize)>> {
        let d = self.dim();
        let mut eigs: Vec<f64> = Vec::new();
        match &self.sigma {
            Covariance::Diagonal(s) => {
                let support: Vec<usize> = (0..d)
                    .filter(|&i| self.w.row(i).iter().any(|v| *v != 0.0))
                    .collect();
                if support.len() > DENSE_GEOMETRY_MAX_DIM {
                    return None;
                }
                let mut on = vec![false; d];
                for &i in &support {
                    on[i] = true;
                }
                for i in 0..d {
                    if !on[i] {
                        eigs.push(s[i]);
                    }
                }
                if !support.is_empty() {
                    let m = support.len();
                    let us = DMatrix::from_fn(m, self.k(), |a, j| self.u[(support[a], j)]);
                    let mut block = DMatrix::from_fn(m, m, |a, b| if a == b { s[support[a]] } else { 0.0 });
                    block -= &us * &self.m_inv * us.transpose();
                    linalg::symmetrize(&mut block);
                    eigs.extend(nalgebra::SymmetricEigen::new(block).eigenvalues.iter());
                }
            }
            Covariance::Dense { .. } => {
                let sp = self.sigma_perp_dense().ok()?;
                eigs.extend(nalgebra::SymmetricEigen::new(sp).eigenvalues.iter());
            }
        }
        let top = eigs.iter().cloned().fold(0.0_f64, f64::max);
        let mut kept: Vec<f64> = eigs.into_iter().filter(|&l| l > 1e-12 * top).collect();
        kept.sort_by(|a, b| a.total_cmp(b));
        let mut groups: Vec<(f64, usize)> = Vec::new();
        for l in kept {
            match groups.last_mut() {
                Some((v, m)) if (l - *v).abs() <= 1e-12 * top => *m += 1,
                _ => groups.push((l, 1)),
            }
        }
        Some(groups)
    }

    pub fn sigma(&self) -> &Covariance {
        &self.sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e1(d: usize) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(d, 1);
        w[(0, 0)] = 1.0;
        w
    }

    #[test]
    fn identity_with_unit_index() {
        let g = ModelGeometry::new(&Covariance::Diagonal(DVector::from_element(5, 1.0)), &e1(5)).unwrap();
        let q = g.q_dense().unwrap();
        let mut expect = DMatrix::identity(5, 5);
        expect[(0, 0)] = 0.0;
        assert!((q - &expect).amax() < 1e-14);
        assert!((g.sigma_perp_dense().unwrap() - expect).amax() < 1e-14);
        assert_abs_diff_eq!(g.trace_perp, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_index_is_identity_projection() {
        let sigma = Covariance::Diagonal(DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let g = ModelGeometry::new(&sigma, &DMatrix::zeros(3, 0)).unwrap();
        assert_eq!(g.q_dense().unwrap(), DMatrix::identity(3, 3));
        assert_eq!(g.sigma_perp_dense().unwrap(), sigma.to_dense());
        assert_abs_diff_eq!(g.eff_rank_perp, 36.0 / 14.0, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_hand_case() {
        let sigma = Covariance::Diagonal(DVector::from_vec(vec![4.0, 1.0]));
        let g = ModelGeometry::new(&sigma, &e1(2)).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((g.q_dense().unwrap() - &expect).amax() < 1e-14);
        assert!((g.sigma_perp_dense().unwrap() - &expect).amax() < 1e-14);
    }

    #[test]
    fn spectrum_groups_match_dense_eigenvalues() {
        let sigma = Covariance::Diagonal(DVector::from_vec(vec![4.0, 2.0, 2.0, 1.0, 1.0, 1.0]));
        let mut w = DMatrix::zeros(6, 1);
        w[(0, 0)] = 1.0;
        w[(3, 0)] = 2.0;
        let g = ModelGeometry::new(&sigma, &w).unwrap();
        let groups = g.perp_spectrum().unwrap();
        let total: f64 = groups.iter().map(|(l, m)| l * *m as f64).sum();
        assert_abs_diff_eq!(total, g.trace_perp, epsilon = 1e-12);
        let mut dense: Vec<f64> = nalgebra::SymmetricEigen::new(g.sigma_perp_dense().unwrap())
            .eigenvalues
            .iter()
            .cloned()
            .filter(|l| *l > 1e-12)
            .collect();
        dense.sort_by(|a, b| a.total_cmp(b));
        let flat: Vec<f64> = groups.iter().flat_map(|(l, m)| std::iter::repeat(*l).take(*m)).collect();
        assert_eq!(flat.len(), dense.len());
        for (a, b) in flat.iter().zip(&dense) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn singular_index_covariance() {
        let sigma = Covariance::Diagonal(DVector::from_vec(vec![0.0, 1.0, 1.0]));
        assert!(matches!(ModelGeometry::new(&sigma, &e1(3)), Err(Error::Conditioning(_))));
    }
}
