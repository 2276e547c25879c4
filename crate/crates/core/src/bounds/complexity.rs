//! Monte Carlo quantiles of `‖z‖₂`, `z ~ N(0, Σ⊥)`, and the closed-form
//! nuclear-norm constant.

use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::order_quantile;
use crate::models::ModelGeometry;
use crate::rng::{self, StreamRng};

/// `max(10⁵, ⌈100/δ⌉)`.
pub fn default_mc_draws(delta: f64) -> usize {
    ((100.0 / delta).ceil() as usize).max(100_000)
}

fn check_delta(delta: f64, m: usize) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta = {delta} outside (0, 1)")));
    }
    if (m as f64) < 100.0 / delta {
        return Err(Error::domain(format!(
            "m = {m} draws is too few for the 1 − δ/4 quantile at δ = {delta} (need ≥ {})",
            (100.0 / delta).ceil()
        )));
    }
    Ok(())
}

/// Draws `‖z‖₂` for `z ~ N(0, Σ⊥)`.
pub enum PerpNormSampler<'a> {
    /// `‖z‖² = Σ_g λ_g χ²_{m_g}`.
    Spectral(Vec<(f64, ChiSquared<f64>)>),
    /// `z = Qᵀx`, `x ~ N(0, Σ)`; cost `O(d)` per draw.
    Direct { geom: &'a ModelGeometry, buf: Vec<f64>, x: Vec<f64>, out: Vec<f64> },
}

impl<'a> PerpNormSampler<'a> {
    pub fn new(geom: &'a ModelGeometry) -> Result<Self> {
        match geom.perp_spectrum() {
            Some(groups) => Self::from_spectrum(&groups),
            None => {
                let d = geom.dim();
                Ok(Self::Direct {
                    geom,
                    buf: vec![0.0; d],
                    x: vec![0.0; d],
                    out: vec![0.0; d],
                })
            }
        }
    }

    pub fn from_spectrum(groups: &[(f64, usize)]) -> Result<Self> {
        let mut parts = Vec::with_capacity(groups.len());
        for &(l, m) in groups {
            if !(l >= 0.0) {
                return Err(Error::domain("negative eigenvalue in Σ⊥ spectrum"));
            }
            if l > 0.0 && m > 0 {
                let chi = ChiSquared::new(m as f64).map_err(|e| Error::domain(e.to_string()))?;
                parts.push((l, chi));
            }
        }
        Ok(Self::Spectral(parts))
    }

    pub fn draw(&mut self, rng: &mut StreamRng) -> f64 {
        match self {
            Self::Spectral(parts) => parts.iter().map(|(l, chi)| l * chi.sample(rng)).sum::<f64>().sqrt(),
            Self::Direct { geom, buf, x, out } => {
                for v in buf.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                geom.sigma().root_mul_into(buf, x);
                geom.qt_apply_slice(x, out);
                out.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        }
    }
}

fn quantile_of(mut sampler: PerpNormSampler<'_>, delta: f64, m: usize, seed: u64) -> Result<f64> {
    check_delta(delta, m)?;
    let mut rng = rng::stream(seed, rng::streams::AUX);
    let mut norms: Vec<f64> = (0..m).map(|_| sampler.draw(&mut rng)).collect();
    Ok(order_quantile(&mut norms, 1.0 - delta / 4.0))
}

/// Empirical `(1 − δ/4)`-quantile of `‖z‖₂` over `m` draws of
/// `z ~ N(0, Σ⊥)`; `C_δ(w) = c · ‖w‖₂`.
pub fn c_delta_l2(geom: &ModelGeometry, delta: f64, m: usize, seed: u64) -> Result<f64> {
    check_delta(delta, m)?;
    quantile_of(PerpNormSampler::new(geom)?, delta, m, seed)
}

/// As [`c_delta_l2`], from the grouped spectrum `(λ, multiplicity)` of `Σ⊥`.
pub fn c_delta_l2_spectrum(groups: &[(f64, usize)], delta: f64, m: usize, seed: u64) -> Result<f64> {
    check_delta(delta, m)?;
    quantile_of(PerpNormSampler::from_spectrum(groups)?, delta, m, seed)
}

/// `√d1 + √d2 + √(8 log(32/δ))`; `C_δ(X) = c · ‖X‖_*`.
///
/// Any `δ ∈ (0, 32]` is accepted so the formula itself can be exercised;
/// only `δ < 1` is meaningful as a failure probability.
pub fn c_delta_nuclear(d1: usize, d2: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 32.0) {
        return Err(Error::domain(format!("delta = {delta} outside (0, 32]")));
    }
    Ok((d1 as f64).sqrt() + (d2 as f64).sqrt() + (8.0 * (32.0 / delta).ln()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Covariance;
    use nalgebra::{DMatrix, DVector};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn iso(d: usize) -> ModelGeometry {
        ModelGeometry::new(&Covariance::Diagonal(DVector::from_element(d, 1.0)), &DMatrix::zeros(d, 0)).unwrap()
    }

    #[test]
    fn zero_perp_gives_zero() {
        let g = ModelGeometry::new(&Covariance::zero(4), &DMatrix::zeros(4, 0)).unwrap();
        assert_eq!(c_delta_l2(&g, 0.05, 100_000, 1).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_matches_normal_quantile() {
        let mut s = DVector::zeros(6);
        s[0] = 1.0;
        let g = ModelGeometry::new(&Covariance::Diagonal(s), &DMatrix::zeros(6, 0)).unwrap();
        let c = c_delta_l2(&g, 0.2, 100_000, 3).unwrap();
        // 0.95 quantile of |N(0,1)| is the 0.975 quantile of N(0,1)
        let oracle = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);
        assert!((c - oracle).abs() < 0.05, "c = {c}, oracle = {oracle}");
    }

    #[test]
    fn isotropic_tail_conformance() {
        let delta = 0.05;
        let d = 3000;
        let c = c_delta_l2(&iso(d), delta, 100_000, 11).unwrap();
        let t = (4.0 * (16.0 / delta).ln()).sqrt();
        let r = (d as f64).sqrt();
        assert!(c >= r - t && c <= r + t);
    }

    #[test]
    fn spectral_and_direct_paths_agree() {
        let sigma = Covariance::Diagonal(DVector::from_fn(40, |i, _| if i < 5 { 4.0 } else { 1.0 }));
        let mut w = DMatrix::zeros(40, 1);
        w[(0, 0)] = 1.0;
        w[(7, 0)] = 0.5;
        let g = ModelGeometry::new(&sigma, &w).unwrap();
        let spectral = c_delta_l2(&g, 0.1, 100_000, 5).unwrap();
        let direct = PerpNormSampler::Direct {
            geom: &g,
            buf: vec![0.0; 40],
            x: vec![0.0; 40],
            out: vec![0.0; 40],
        };
        let direct = quantile_of(direct, 0.1, 100_000, 6).unwrap();
        assert!((spectral - direct).abs() < 0.02 * direct, "{spectral} vs {direct}");
    }

    #[test]
    fn too_few_draws_is_domain_error() {
        assert!(matches!(c_delta_l2(&iso(3), 0.01, 5000, 0), Err(Error::Domain(_))));
        assert!(c_delta_l2(&iso(3), 1.0, 100_000, 0).is_err());
        assert_eq!(default_mc_draws(0.05), 100_000);
        assert_eq!(default_mc_draws(1e-4), 1_000_000);
    }
}
