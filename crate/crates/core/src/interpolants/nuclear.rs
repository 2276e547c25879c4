//! Minimum-nuclear-norm interpolation by scaled ADMM, and a dual
//! certificate for the result.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{InterpolantSolution, Predictor, SolutionKind, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{self, PsdPinv, GRAM_RANK_TOL};
use crate::models::MatrixSensingInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmParams {
    pub rho: f64,
    pub max_iters: usize,
    /// Relative tolerance on the primal (`‖X − Z‖`) and dual residuals.
    pub residual_tol: f64,
    /// Relative change of `‖X‖_*` allowed across the final window.
    pub stationarity_tol: f64,
    pub window: usize,
    /// Factor applied to `ρ` when one residual exceeds the other by
    /// `imbalance`.
    pub rescale_factor: f64,
    pub imbalance: f64,
    /// Iterations between penalty rescaling checks.
    pub rescale_every: usize,
    /// Length of the objective trace kept on the solution.
    pub trace_len: usize,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 5000,
            residual_tol: 1e-9,
            stationarity_tol: 1e-6,
            window: 10,
            rescale_factor: 10.0,
            imbalance: 10.0,
            rescale_every: 10,
            trace_len: 50,
        }
    }
}

struct AffineProjector<'a> {
    inst: &'a MatrixSensingInstance,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> AffineProjector<'a> {
    fn new(inst: &'a MatrixSensingInstance) -> Result<Self> {
        let g = linalg::gram_cols(&inst.a_cols);
        let chol = g
            .cholesky()
            .ok_or_else(|| Error::Conditioning("sensing Gram matrix is singular".into()))?;
        Ok(Self { inst, chol })
    }

    /// Euclidean projection onto `{X : ⟨A_i, X⟩ = y_i}`.
    fn project(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.inst.measure(v) - &self.inst.y;
        let nu = self.chol.solve(&r);
        v - self.inst.adjoint(&nu)
    }
}

/// Singular-value soft-thresholding; returns the result and its nuclear norm.
fn svt(v: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, f64) {
    let svd = v.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    let mut nuc = 0.0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let t = s - tau;
        if t > 0.0 {
            nuc += t;
            out += t * u.column(i) * vt.row(i);
        }
    }
    (out, nuc)
}

/// `argmin ‖X‖_*` subject to `⟨A_i, X⟩ = y_i`, by ADMM on the splitting
/// `X ∈ affine set`, `Z = X` with the nuclear norm on `Z`.
pub fn nuclear_min(inst: &MatrixSensingInstance, params: &AdmmParams) -> Result<InterpolantSolution> {
    if !(params.rho > 0.0) || params.window == 0 {
        return Err(Error::Config("ADMM needs rho > 0 and a positive window".into()));
    }
    let proj = AffineProjector::new(inst)?;
    let (d1, d2) = (inst.d1, inst.d2);
    // y = 0 makes X = 0 feasible and optimal
    if inst.y.amax() == 0.0 {
        return Ok(InterpolantSolution {
            kind: SolutionKind::Nuclear,
            predictor: Predictor::Matrix(DMatrix::zeros(d1, d2)),
            norm: 0.0,
            max_residual: 0.0,
            status: SolveStatus::Exact,
            iterations: 0,
            subgradient: Some(DMatrix::zeros(d1, d2)),
            trace: Vec::new(),
        });
    }
    let mut rho = params.rho;
    let mut z = DMatrix::zeros(d1, d2);
    let mut u = DMatrix::zeros(d1, d2);
    let mut history: Vec<f64> = Vec::with_capacity(params.max_iters.min(1 << 16));
    let mut x = proj.project(&z);
    let mut status = SolveStatus::IterationBudgetHit;
    let mut iters = 0;
    for k in 1..=params.max_iters {
        iters = k;
        x = proj.project(&(&z - &u));
        let z_old = std::mem::replace(&mut z, svt(&(&x + &u), 1.0 / rho).0);
        u += &x - &z;
        history.push(linalg::nuclear_norm(&x));

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_old).norm();
        let scale_p = x.norm().max(z.norm()).max(1e-300);
        let scale_d = (rho * u.norm()).max(1e-300);
        let converged_res = primal <= params.residual_tol * scale_p && dual <= params.residual_tol * scale_d;
        if converged_res && history.len() > params.window {
            let tail = &history[history.len() - params.window - 1..];
            let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi - lo <= params.stationarity_tol * hi.max(1e-300) {
                status = SolveStatus::IterativeConverged;
                break;
            }
        }
        if k % params.rescale_every == 0 {
            if primal > params.imbalance * dual {
                rho *= params.rescale_factor;
                u /= params.rescale_factor;
            } else if dual > params.imbalance * primal {
                rho /= params.rescale_factor;
                u *= params.rescale_factor;
            }
        }
    }
    let max_residual = (inst.measure(&x) - &inst.y).amax();
    let norm = linalg::nuclear_norm(&x);
    let keep = history.len().saturating_sub(params.trace_len);
    Ok(InterpolantSolution {
        kind: SolutionKind::Nuclear,
        predictor: Predictor::Matrix(x),
        norm,
        max_residual,
        status,
        iterations: iters,
        subgradient: Some(rho * u),
        trace: history[keep..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearCertificate {
    pub rank: usize,
    pub nu: Vec<f64>,
    /// `‖Σ ν_i A_i‖_op`.
    pub op_norm: f64,
    /// `‖U_rᵀ (Σ ν_i A_i) V_r − I_r‖_max` on the top-`r` singular subspaces.
    pub alignment_error: f64,
    pub feasibility: f64,
    /// `νᵀy / max(1, ‖Σ ν_i A_i‖_op)`, a lower bound on the optimal value.
    pub dual_bound: f64,
    pub tol: f64,
    pub passes: bool,
}

/// Fits dual coefficients `ν` so that `Σ ν_i A_i` matches a subgradient of
/// the nuclear norm at the solution (the ADMM dual if available, else
/// `U_r V_rᵀ`), then checks the two optimality conditions at `tol`.
pub fn certify_nuclear(
    solution: &InterpolantSolution,
    inst: &MatrixSensingInstance,
    tol: f64,
) -> Result<NuclearCertificate> {
    let xh = solution
        .matrix()
        .ok_or_else(|| Error::domain("nuclear certificate needs a matrix predictor"))?;
    if xh.shape() != (inst.d1, inst.d2) {
        return Err(Error::domain("solution shape does not match the instance"));
    }
    let feasibility = (inst.measure(xh) - &inst.y).amax();
    let svd = xh.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let rank = if smax > 0.0 {
        order.iter().filter(|&&i| svd.singular_values[i] > 1e-6 * smax).count()
    } else {
        0
    };
    let top = &order[..rank];
    let ur = DMatrix::from_fn(inst.d1, rank, |i, j| u[(i, top[j])]);
    let vr = DMatrix::from_fn(inst.d2, rank, |i, j| vt[(top[j], i)]);
    let target = match &solution.subgradient {
        Some(s) => s.clone(),
        None => &ur * vr.transpose(),
    };
    let g = linalg::gram_cols(&inst.a_cols);
    let pinv = PsdPinv::new(&g, GRAM_RANK_TOL);
    let rhs = inst.a_cols.tr_mul(&DVector::from_column_slice(target.as_slice()));
    let nu = pinv.solve(&rhs);
    let m = inst.adjoint(&nu);
    let op_norm = linalg::op_norm(&m);
    let alignment_error = if rank == 0 {
        0.0
    } else {
        (ur.transpose() * &m * &vr - DMatrix::identity(rank, rank)).amax()
    };
    let dual_bound = nu.dot(&inst.y) / op_norm.max(1.0);
    let feas_ok = feasibility <= 1e-6 * inst.y.amax().max(1.0);
    Ok(NuclearCertificate {
        rank,
        nu: nu.iter().cloned().collect(),
        op_norm,
        alignment_error,
        feasibility,
        dual_bound,
        tol,
        passes: feas_ok && op_norm <= 1.0 + tol && alignment_error <= tol,
    })
}
