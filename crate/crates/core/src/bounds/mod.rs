//! Right-hand sides of the generalization and norm bounds, the complexity
//! functionals `C_δ`, and empirical stand-ins for the unspecified
//! constants (`ε̂`, `τ̂`).

mod complexity;
mod estimators;

use serde::{Deserialize, Serialize};

pub use complexity::{c_delta_l2, c_delta_l2_spectrum, c_delta_nuclear, default_mc_draws, PerpNormSampler};
pub use estimators::{
    default_projected_grid, estimate_eps, estimate_eps_counterexample, estimate_eps_grid, estimate_tau,
    EpsEstimate, ProjectedCandidate, TauEstimate,
};

use crate::error::{Error, Result};
use crate::losses::sort_units;

/// Default failure probability.
pub const DEFAULT_DELTA: f64 = 0.05;

fn check_eps(eps_hat: f64) -> Result<()> {
    if !(eps_hat < 1.0) || !eps_hat.is_finite() {
        return Err(Error::domain(format!("eps_hat = {eps_hat} makes the bound vacuous")));
    }
    Ok(())
}

/// `(1 − ε̂)⁻¹ (√L̂ + C √(H/n))²`.
pub fn optimistic_rhs(train_loss: f64, h: f64, c: f64, n: usize, eps_hat: f64) -> Result<f64> {
    check_eps(eps_hat)?;
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let root = train_loss.max(0.0).sqrt() + c * (h / n as f64).sqrt();
    Ok(root * root / (1.0 - eps_hat))
}

/// One instance of the optimistic-rate bound with its empirical left side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub train_loss: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub n: usize,
    pub eps_hat: f64,
    pub tau_hat: Option<f64>,
    pub rhs: f64,
    pub lhs: f64,
    pub holds: bool,
    pub slack: f64,
}

impl BoundEvaluation {
    pub fn new(train_loss: f64, h: f64, c: f64, n: usize, eps_hat: f64, lhs: f64) -> Result<Self> {
        let rhs = optimistic_rhs(train_loss, h, c, n, eps_hat)?;
        Ok(Self::from_rhs(train_loss, h, c, n, eps_hat, rhs, lhs))
    }

    pub(crate) fn from_rhs(train_loss: f64, h: f64, c: f64, n: usize, eps_hat: f64, rhs: f64, lhs: f64) -> Self {
        Self {
            train_loss,
            h,
            c,
            n,
            eps_hat,
            tau_hat: None,
            rhs,
            lhs,
            holds: lhs <= rhs,
            slack: rhs - lhs,
        }
    }
}

/// `‖w♯‖ + (1 + ε̂)√(n L / Tr(Σ⊥))`; also the ReLU norm bound.
pub fn norm_bound_phase(w_sharp_norm: f64, l_pop: f64, n: usize, trace_perp: f64, eps_hat: f64) -> Result<f64> {
    if !(trace_perp > 0.0) {
        return Err(Error::domain("Tr(Σ⊥) must be positive"));
    }
    Ok(w_sharp_norm + (1.0 + eps_hat) * (n as f64 * l_pop.max(0.0) / trace_perp).sqrt())
}

/// `(1 + ε̂) ‖ξ‖² / Tr(Σ)`, a prediction of the squared norm.
pub fn norm_bound_linear(xi_norm_sq: f64, trace: f64, eps_hat: f64) -> Result<f64> {
    if !(trace > 0.0) {
        return Err(Error::domain("trace must be positive"));
    }
    Ok((1.0 + eps_hat) * xi_norm_sq / trace)
}

/// `√r ‖X*‖_F + (1 + ε̂)√(nσ² / (d1 ∨ d2))`.
pub fn norm_bound_matrix(
    r: usize,
    xstar_fro: f64,
    n: usize,
    sigma_sq: f64,
    d1: usize,
    d2: usize,
    eps_hat: f64,
) -> Result<f64> {
    if d1 == 0 || d2 == 0 || n == 0 {
        return Err(Error::domain("d1, d2 and n must be positive"));
    }
    let dmax = d1.max(d2) as f64;
    Ok((r as f64).sqrt() * xstar_fro + (1.0 + eps_hat) * (n as f64 * sigma_sq / dmax).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTerms {
    pub rank_term: f64,
    pub cross_term: f64,
    pub noise_term: f64,
    pub sum: f64,
}

/// The three terms bounding `‖X̂ − X*‖²_F / ‖X*‖²_F` up to a constant,
/// with `d1 ≤ d2` after normalization.
pub fn consistency_rhs_matrix(r: usize, d1: usize, d2: usize, n: usize, sigma: f64, xstar_fro: f64) -> Result<ConsistencyTerms> {
    if n == 0 || d1 == 0 || d2 == 0 || !(xstar_fro > 0.0) {
        return Err(Error::domain("need positive n, d1, d2 and ‖X*‖_F"));
    }
    let (a, b) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
    let (a, b, n) = (a as f64, b as f64, n as f64);
    let ratio = r as f64 * (a + b) / n;
    let snr = sigma / xstar_fro;
    let rank_term = ratio;
    let cross_term = ratio.sqrt() * snr;
    let noise_term = ((a / b).sqrt() + n / (a * b)) * snr * snr;
    Ok(ConsistencyTerms {
        rank_term,
        cross_term,
        noise_term,
        sum: rank_term + cross_term + noise_term,
    })
}

/// `max_j |Σ_{i≤j} a_i| · ‖w‖` with units sorted by `b`.
pub fn nn_complexity(a: &[f64], b: &[f64], w_norm: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::domain("a and b must have equal nonzero length"));
    }
    let (a, _) = sort_units(a, b);
    let mut acc = 0.0_f64;
    let mut best = 0.0_f64;
    for ai in a {
        acc += ai;
        best = best.max(acc.abs());
    }
    Ok(best * w_norm)
}

/// `(1 − ε̂)⁻¹ (√L̂_w + C_tail/√n)²` for the `h²`-weighted training loss.
pub fn weighted_optimistic_rhs(train_weighted_loss: f64, c_tail: f64, n: usize, eps_hat: f64) -> Result<f64> {
    optimistic_rhs(train_weighted_loss, 1.0, c_tail, n, eps_hat)
}

/// `sup_{λ ≥ 0} −λa + λb/(H + λ) = (√b − √(Ha))₊²`.
pub fn sup_envelope_gap(a: f64, b: f64, h: f64) -> f64 {
    let v = (b.max(0.0).sqrt() - (h * a).max(0.0).sqrt()).max(0.0);
    v * v
}

/// `sup_{λ > 0} −λa − b/λ = −√(4ab)`.
pub fn sup_lipschitz_gap(a: f64, b: f64) -> f64 {
    -(4.0 * a * b).max(0.0).sqrt()
}
