use nalgebra::{DMatrix, DVector};

use super::{InterpolantSolution, Predictor, SolutionKind, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{self, PsdPinv, GRAM_RANK_TOL};

/// Largest `n` accepted by the sign-enumeration oracle.
pub const PHASE_BRUTE_MAX_N: usize = 20;
/// Interpolation residuals above this (relative to the target scale) are
/// infeasible.
const FEAS_TOL: f64 = 1e-6;

fn scale(t: &DVector<f64>) -> f64 {
    t.amax().max(1.0)
}

/// Minimum-norm solves against a fixed design, reusing one factorization of
/// the `n × n` Gram matrix.
pub struct MinNormSolver<'a> {
    xt: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    pinv: PsdPinv,
}

impl<'a> MinNormSolver<'a> {
    pub fn new(xt: &'a DMatrix<f64>) -> Self {
        let gram = linalg::gram_cols(xt);
        let pinv = PsdPinv::new(&gram, GRAM_RANK_TOL);
        Self { xt, gram, pinv }
    }

    pub fn n(&self) -> usize {
        self.xt.ncols()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn full_rank(&self) -> bool {
        self.pinv.rank() == self.n()
    }

    /// `‖w‖²` of the least-norm solution of `Xw = t`, or `None` when the
    /// system is inconsistent.
    pub fn norm_sq(&self, t: &DVector<f64>) -> Option<f64> {
        let alpha = self.pinv.solve(t);
        if !self.full_rank() {
            let r = &self.gram * &alpha - t;
            if r.amax() > FEAS_TOL * scale(t) {
                return None;
            }
        }
        Some(t.dot(&alpha).max(0.0))
    }

    /// `w = Xᵀ(XXᵀ)⁺t` and the residual `max |Xw − t|`.
    pub fn solve(&self, t: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if t.len() != self.n() {
            return Err(Error::domain(format!("target length {} ≠ n = {}", t.len(), self.n())));
        }
        let alpha = self.pinv.solve(t);
        let w = self.xt * alpha;
        let resid = (self.xt.tr_mul(&w) - t).amax();
        if resid > FEAS_TOL * scale(t) {
            return Err(Error::Infeasible(format!(
                "inconsistent linear system (residual {resid:e}, rank {} of {})",
                self.pinv.rank(),
                self.n()
            )));
        }
        Ok((w, resid))
    }
}

/// Minimum-ℓ₂-norm solution of `Xw = t`.
pub fn min_norm_linear(xt: &DMatrix<f64>, t: &DVector<f64>) -> Result<InterpolantSolution> {
    let (w, resid) = MinNormSolver::new(xt).solve(t)?;
    Ok(vector_solution(SolutionKind::Linear, w, None, resid))
}

pub fn min_norm_linear_rows(x: &DMatrix<f64>, t: &DVector<f64>) -> Result<InterpolantSolution> {
    min_norm_linear(&x.transpose(), t)
}

fn vector_solution(kind: SolutionKind, w: DVector<f64>, b: Option<f64>, resid: f64) -> InterpolantSolution {
    InterpolantSolution {
        kind,
        norm: w.norm(),
        predictor: Predictor::Vector { w, b },
        max_residual: resid,
        status: SolveStatus::Exact,
        iterations: 0,
        subgradient: None,
        trace: Vec::new(),
    }
}

fn check_nonneg(y: &DVector<f64>) -> Result<()> {
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::domain(format!("labels must be nonnegative, got {v}")));
    }
    Ok(())
}

fn check_shapes(xt: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
    if xt.ncols() != y.len() || xt.nrows() != w.len() {
        return Err(Error::domain(format!(
            "shape mismatch: X is {}×{}, y has {}, w♯ has {}",
            xt.ncols(),
            xt.nrows(),
            y.len(),
            w.len()
        )));
    }
    Ok(())
}

/// `w♯ + ` the minimum-norm correction making `|⟨w, x_i⟩| = y_i`, keeping
/// the sign of `⟨w♯, x_i⟩` (ties at zero count as nonnegative).
pub fn phase_construct(xt: &DMatrix<f64>, y: &DVector<f64>, w_sharp: &DVector<f64>) -> Result<InterpolantSolution> {
    phase_construct_with(&MinNormSolver::new(xt), y, w_sharp)
}

pub fn phase_construct_rows(x: &DMatrix<f64>, y: &DVector<f64>, w_sharp: &DVector<f64>) -> Result<InterpolantSolution> {
    phase_construct(&x.transpose(), y, w_sharp)
}

pub fn phase_construct_with(
    solver: &MinNormSolver<'_>,
    y: &DVector<f64>,
    w_sharp: &DVector<f64>,
) -> Result<InterpolantSolution> {
    check_shapes(solver.xt, y, w_sharp)?;
    check_nonneg(y)?;
    let p = solver.xt.tr_mul(w_sharp);
    let xi = DVector::from_fn(y.len(), |i, _| {
        if p[i] >= 0.0 {
            y[i] - p[i].abs()
        } else {
            p[i].abs() - y[i]
        }
    });
    let (corr, _) = solver.solve(&xi)?;
    let w = w_sharp + corr;
    let pred = solver.xt.tr_mul(&w);
    let sq_resid = pred
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a * a - b * b).abs())
        .fold(0.0, f64::max);
    let ymax = y.amax().max(1.0);
    if sq_resid > FEAS_TOL * ymax * ymax {
        return Err(Error::Infeasible(format!(
            "phase construction misses |⟨w,x⟩|² = y² by {sq_resid:e}"
        )));
    }
    Ok(vector_solution(SolutionKind::PhaseConstruct, w, None, sq_resid))
}

/// Exact minimum-norm phase-retrieval interpolant by enumerating sign
/// patterns (`s` and `−s` give the same norm, so `s₁ = +1` is fixed).
pub fn phase_brute(xt: &DMatrix<f64>, y: &DVector<f64>) -> Result<InterpolantSolution> {
    let n = y.len();
    if n > PHASE_BRUTE_MAX_N {
        return Err(Error::Refused(format!(
            "sign enumeration limited to n ≤ {PHASE_BRUTE_MAX_N}, got {n}"
        )));
    }
    if xt.ncols() != n {
        return Err(Error::domain("X and y disagree on n"));
    }
    check_nonneg(y)?;
    let solver = MinNormSolver::new(xt);
    let patterns: u64 = if n == 0 { 1 } else { 1 << (n - 1) };
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut t = DVector::zeros(n);
    for mask in 0..patterns {
        for i in 0..n {
            let neg = i > 0 && (mask >> (i - 1)) & 1 == 1;
            t[i] = if neg { -y[i] } else { y[i] };
        }
        if let Some(v) = solver.norm_sq(&t) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, t.clone()));
            }
        }
    }
    let (_, t) = best.ok_or_else(|| Error::Infeasible("no sign pattern is interpolable".into()))?;
    let (w, _) = solver.solve(&t)?;
    let pred = xt.tr_mul(&w);
    let sq_resid = pred
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a * a - b * b).abs())
        .fold(0.0, f64::max);
    Ok(vector_solution(SolutionKind::PhaseBrute, w, None, sq_resid))
}

pub fn phase_brute_rows(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<InterpolantSolution> {
    phase_brute(&x.transpose(), y)
}

/// `(w♯ + correction, b♯)` with `σ(⟨w, x_i⟩ + b) = y_i`: positive labels are
/// matched exactly, zero labels only pushed to a nonpositive pre-activation.
pub fn relu_construct(
    xt: &DMatrix<f64>,
    y: &DVector<f64>,
    w_sharp: &DVector<f64>,
    b_sharp: f64,
) -> Result<InterpolantSolution> {
    relu_construct_with(&MinNormSolver::new(xt), y, w_sharp, b_sharp)
}

pub fn relu_construct_rows(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w_sharp: &DVector<f64>,
    b_sharp: f64,
) -> Result<InterpolantSolution> {
    relu_construct(&x.transpose(), y, w_sharp, b_sharp)
}

pub fn relu_construct_with(
    solver: &MinNormSolver<'_>,
    y: &DVector<f64>,
    w_sharp: &DVector<f64>,
    b_sharp: f64,
) -> Result<InterpolantSolution> {
    check_shapes(solver.xt, y, w_sharp)?;
    check_nonneg(y)?;
    let p = solver.xt.tr_mul(w_sharp).add_scalar(b_sharp);
    let xi = DVector::from_fn(y.len(), |i, _| {
        if y[i] > 0.0 {
            y[i] - p[i]
        } else {
            -p[i].max(0.0)
        }
    });
    let (corr, _) = solver.solve(&xi)?;
    let w = w_sharp + corr;
    let resid = relu_residual(solver.xt, y, &w, b_sharp);
    if resid > FEAS_TOL * scale(y) {
        return Err(Error::Infeasible(format!("ReLU construction misses labels by {resid:e}")));
    }
    Ok(vector_solution(SolutionKind::ReluConstruct, w, Some(b_sharp), resid))
}

fn relu_residual(xt: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, b: f64) -> f64 {
    let pred = xt.tr_mul(w).add_scalar(b);
    pred.iter()
        .zip(y.iter())
        .map(|(p, t)| (p.max(0.0) - t).abs())
        .fold(0.0, f64::max)
}

/// Minimum-norm `w` with `⟨w, x_i⟩ + b = y_i` for `y_i > 0` and
/// `⟨w, x_i⟩ + b ≤ 0` for `y_i = 0`.
///
/// Solved in the dual: with `w = −Xᵀλ`, minimize `½λᵀGλ + cᵀλ` subject to
/// `λ_i ≥ 0` on the zero labels, by a primal active-set method.
pub fn relu_min_norm_qp(xt: &DMatrix<f64>, y: &DVector<f64>, b: f64) -> Result<InterpolantSolution> {
    relu_min_norm_qp_with(&MinNormSolver::new(xt), y, b)
}

pub fn relu_min_norm_qp_with(solver: &MinNormSolver<'_>, y: &DVector<f64>, b: f64) -> Result<InterpolantSolution> {
    check_nonneg(y)?;
    let n = y.len();
    if solver.n() != n {
        return Err(Error::domain("X and y disagree on n"));
    }
    if !solver.full_rank() {
        return Err(Error::Conditioning("ReLU QP needs a full-rank design".into()));
    }
    let g = solver.gram();
    let c = DVector::from_fn(n, |i, _| if y[i] > 0.0 { y[i] - b } else { -b });
    let bounded: Vec<bool> = y.iter().map(|&v| v == 0.0).collect();
    // working set: bounded indices currently pinned at λ = 0
    let mut pinned = bounded.clone();
    let mut lambda = DVector::zeros(n);
    let tol = 1e-12 * (1.0 + g.diagonal().amax()) * scale(&c);
    let max_iters = 10 * n + 100;
    let mut iters = 0;
    loop {
        iters += 1;
        if iters > max_iters {
            return Err(Error::Numerical {
                message: "ReLU QP active set did not converge".into(),
                best: f64::NAN,
            });
        }
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        let cand = solve_free(g, &c, &free)?;
        let mut step = 1.0_f64;
        let mut block = None;
        for (fi, &i) in free.iter().enumerate() {
            if bounded[i] && cand[fi] < 0.0 {
                let denom = lambda[i] - cand[fi];
                let t = if denom > 0.0 { lambda[i] / denom } else { 0.0 };
                if t < step {
                    step = t;
                    block = Some(i);
                }
            }
        }
        for (fi, &i) in free.iter().enumerate() {
            lambda[i] += step * (cand[fi] - lambda[i]);
        }
        if let Some(i) = block {
            lambda[i] = 0.0;
            pinned[i] = true;
            continue;
        }
        let grad = g * &lambda + &c;
        let mut worst = None;
        let mut worst_val = -tol;
        for i in 0..n {
            if pinned[i] && grad[i] < worst_val {
                worst_val = grad[i];
                worst = Some(i);
            }
        }
        match worst {
            Some(i) => pinned[i] = false,
            None => break,
        }
    }
    let w = -(solver.xt * &lambda);
    let resid = relu_residual(solver.xt, y, &w, b);
    if resid > FEAS_TOL * scale(y) {
        return Err(Error::Infeasible(format!("ReLU QP solution misses labels by {resid:e}")));
    }
    let mut sol = vector_solution(SolutionKind::ReluQp, w, Some(b), resid);
    sol.iterations = iters;
    Ok(sol)
}

fn solve_free(g: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>> {
    let k = free.len();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let sub = DMatrix::from_fn(k, k, |a, b| g[(free[a], free[b])]);
    let rhs = DVector::from_fn(k, |a, _| -c[free[a]]);
    let chol = sub
        .cholesky()
        .ok_or_else(|| Error::Conditioning("Gram submatrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rows(n: usize, d: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, d, v)
    }

    #[test]
    fn linear_examples() {
        let s = min_norm_linear_rows(&rows(2, 2, &[1.0, 0.0, 0.0, 2.0]), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let w = s.w().unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-12);

        let s = min_norm_linear_rows(&rows(1, 2, &[3.0, 4.0]), &DVector::from_vec(vec![5.0])).unwrap();
        assert_abs_diff_eq!(s.w().unwrap()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(s.w().unwrap()[1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(s.norm, 1.0, epsilon = 1e-12);

        let s = min_norm_linear_rows(&rows(1, 2, &[3.0, 4.0]), &DVector::zeros(1)).unwrap();
        assert_eq!(s.norm, 0.0);
    }

    #[test]
    fn rank_deficient_cases() {
        let x = rows(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let ok = min_norm_linear_rows(&x, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(ok.w().unwrap()[0], 0.5, epsilon = 1e-10);
        assert!(matches!(
            min_norm_linear_rows(&x, &DVector::from_vec(vec![1.0, 3.0])),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn phase_examples() {
        let x = rows(1, 2, &[1.0, 0.0]);
        let s = phase_construct_rows(&x, &DVector::from_vec(vec![2.0]), &DVector::zeros(2)).unwrap();
        assert_abs_diff_eq!(s.w().unwrap()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.w().unwrap()[1], 0.0, epsilon = 1e-12);

        let x = rows(2, 3, &[1.0, 2.0, 0.0, 0.0, -1.0, 1.0]);
        let ws = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let y = x.clone() * &ws;
        let y = y.map(f64::abs);
        let s = phase_construct_rows(&x, &y, &ws).unwrap();
        assert!((s.w().unwrap() - &ws).amax() < 1e-12);

        let b = phase_brute_rows(&x, &DVector::zeros(2)).unwrap();
        assert_eq!(b.norm, 0.0);
        assert!(matches!(
            phase_brute(&DMatrix::zeros(30, 21), &DVector::zeros(21)),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn phase_tie_goes_to_nonnegative_set() {
        // ⟨w♯, x⟩ = 0 → target y − 0, so the solution has ⟨w, x⟩ = +y
        let x = rows(1, 2, &[1.0, 1.0]);
        let s = phase_construct_rows(&x, &DVector::from_vec(vec![3.0]), &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let p = x * s.w().unwrap();
        assert_abs_diff_eq!(p[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn relu_examples() {
        let x = rows(1, 2, &[1.0, 0.0]);
        let s = relu_construct_rows(&x, &DVector::zeros(1), &DVector::zeros(2), 0.0).unwrap();
        assert_eq!(s.norm, 0.0);

        let x = rows(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let s = relu_construct_rows(&x, &y, &DVector::zeros(3), 0.0).unwrap();
        let w = s.w().unwrap();
        assert_abs_diff_eq!(w[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-12);
        assert_eq!(s.b(), 0.0);
    }

    #[test]
    fn relu_qp_relaxes_zero_labels() {
        // w = e₁ already gives ⟨w, x₂⟩ = −1 < 0: the zero-label constraint is
        // inactive and the QP beats forcing ŷ₂ = 0
        let x = rows(2, 2, &[1.0, 0.0, -1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let qp = relu_min_norm_qp_rows(&x, &y, 0.0);
        let w = qp.w().unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(w[1], 0.0, epsilon = 1e-10);
        let eq = min_norm_linear_rows(&x, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(eq.norm, 2f64.sqrt(), epsilon = 1e-12);

        // here w = e₁ gives ⟨w, x₂⟩ = 1 > 0, so the zero row binds
        let x = rows(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let qp = relu_min_norm_qp_rows(&x, &y, 0.0);
        let p = x * qp.w().unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-10);
    }

    fn relu_min_norm_qp_rows(x: &DMatrix<f64>, y: &DVector<f64>, b: f64) -> InterpolantSolution {
        relu_min_norm_qp(&x.transpose(), y, b).unwrap()
    }
}
