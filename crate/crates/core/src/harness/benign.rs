//! Benign-overfitting suites: linear regression, phase retrieval and ReLU
//! regression on single-index Gaussian models.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{default_delta, default_eps_trials, default_test_draws, flag_of, point_seed, run_pool, ExperimentReport, RunOptions, TrialRecord};
use crate::bounds::{self, c_delta_l2, default_mc_draws, estimate_eps, EpsEstimate};
use crate::error::{Error, Result};
use crate::interpolants::{phase_construct_with, relu_construct_with, relu_min_norm_qp_with, MinNormSolver};
use crate::losses::{Activation, LossKind, LossSpec};
use crate::models::{make_covariance, CovarianceSpec, Link, ModelGeometry, MultiIndexModel, Noise, ProjectedPredictor};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub n: usize,
    pub covariance: CovarianceSpec,
}

fn default_signal() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub points: Vec<GridPoint>,
    /// Standard deviation of `⟨w*, x⟩`; `0` gives pure-noise targets (`k = 0`).
    #[serde(default = "default_signal")]
    pub signal_std: f64,
    pub noise_std: f64,
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps_trials")]
    pub eps_trials: usize,
    #[serde(default)]
    pub c_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub points: Vec<GridPoint>,
    #[serde(default = "default_signal")]
    pub signal_std: f64,
    pub noise_std: f64,
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps_trials")]
    pub eps_trials: usize,
    #[serde(default = "default_test_draws")]
    pub test_draws: usize,
    /// Draws used to locate and evaluate `w♯`.
    #[serde(default = "default_test_draws")]
    pub sharp_draws: usize,
    #[serde(default)]
    pub c_draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReluConfig {
    pub points: Vec<GridPoint>,
    #[serde(default = "default_signal")]
    pub signal_std: f64,
    pub noise_std: f64,
    /// Label `max(s + offset + ξ, 0)`; `0` gives `P(y = 0) = 1/2`.
    #[serde(default)]
    pub offset: f64,
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps_trials")]
    pub eps_trials: usize,
    #[serde(default = "default_test_draws")]
    pub test_draws: usize,
    #[serde(default = "default_test_draws")]
    pub sharp_draws: usize,
    #[serde(default)]
    pub c_draws: Option<usize>,
}

fn check_common(points: &[GridPoint], trials: usize, delta: f64) -> Result<()> {
    if points.is_empty() || trials == 0 {
        return Err(Error::Config("need at least one grid point and one trial".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta = {delta} outside (0, 1)")));
    }
    Ok(())
}

/// Single-index model with `w* = (signal/√Σ₁₁) e₁`, or `k = 0` when the
/// signal is zero.
fn single_index(cov: &CovarianceSpec, signal_std: f64, link: Link, noise_std: f64) -> Result<MultiIndexModel> {
    let sigma = make_covariance(cov)?;
    let noise = Noise::Gaussian { std: noise_std };
    if signal_std == 0.0 {
        let d = sigma.dim();
        return MultiIndexModel::new(None, sigma, DMatrix::zeros(d, 0), link, noise);
    }
    let s11 = sigma.quad(&DVector::from_fn(sigma.dim(), |i, _| if i == 0 { 1.0 } else { 0.0 }));
    if !(s11 > 0.0) {
        return Err(Error::Config("Σ₁₁ must be positive for the signal direction".into()));
    }
    MultiIndexModel::single_index(sigma, signal_std / s11.sqrt(), link, noise)
}

struct PointSetup {
    model: MultiIndexModel,
    geom: ModelGeometry,
    c: f64,
    eps: EpsEstimate,
    params: BTreeMap<String, f64>,
}

fn setup_point(
    model: MultiIndexModel,
    loss: &LossSpec,
    n: usize,
    delta: f64,
    eps_trials: usize,
    c_draws: Option<usize>,
    pseed: u64,
) -> Result<PointSetup> {
    let geom = model.geometry()?;
    let c = c_delta_l2(&geom, delta, c_draws.unwrap_or_else(|| default_mc_draws(delta)), pseed)?;
    let eps = estimate_eps(&model, loss, n, eps_trials, delta, pseed)?;
    let mut params = BTreeMap::new();
    params.insert("c_delta".into(), c);
    params.insert("eps_hat".into(), eps.eps_hat);
    params.insert("trace_perp".into(), geom.trace_perp);
    params.insert("eff_rank_perp".into(), geom.eff_rank_perp);
    params.insert("rank_condition_met".into(), if geom.eff_rank_perp > n as f64 { 1.0 } else { 0.0 });
    Ok(PointSetup {
        model,
        geom,
        c,
        eps,
        params,
    })
}

fn train_loss(loss: &LossSpec, xt: &DMatrix<f64>, w: &DVector<f64>, b: f64, y: &[f64]) -> f64 {
    let p = xt.tr_mul(w);
    p.iter().zip(y).map(|(pi, yi)| loss.value(pi + b, *yi)).sum::<f64>() / y.len() as f64
}

/// Minimum-norm interpolation of `y = ⟨w*, x⟩ + ξ`, with the closed-form
/// risk against the optimistic rate and the norm against `‖ξ‖²/Tr(Σ⊥)`.
pub fn run_benign_linear(cfg: &LinearConfig, opts: RunOptions) -> Result<ExperimentReport> {
    check_common(&cfg.points, cfg.trials, cfg.delta)?;
    let mut report = ExperimentReport::new("benign_linear", opts, cfg)?;
    let loss = LossSpec::square();
    let h = loss.sqrt_lip_sq.expect("square loss is sqrt-Lipschitz");
    for (pi, pt) in cfg.points.iter().enumerate() {
        let model = single_index(&pt.covariance, cfg.signal_std, Link::LinearNoise, cfg.noise_std)?;
        let n = pt.n;
        let setup = report.time(&format!("point{pi}.setup"), || {
            setup_point(model, &loss, n, cfg.delta, cfg.eps_trials, cfg.c_draws, point_seed(opts.seed, pi))
        })?;
        let wsum = setup.model.index_sum();
        let records = report.time(&format!("point{pi}.trials"), || {
            run_pool(opts.workers, cfg.trials, |t| {
                let seed = rng::trial_seed(opts.seed, pi, t);
                let data = setup.model.sample(n, seed);
                let mut rec = TrialRecord::new(pi, t, seed, n, data.d());
                let y = data.y_vec();
                let (w, _) = match MinNormSolver::new(&data.xt).solve(&y) {
                    Ok(s) => s,
                    Err(e) => return rec.flagged(flag_of(&e)),
                };
                let xi = &y - data.xt.tr_mul(&wsum);
                let lhs = setup.model.linear_population_loss(&w, 0.0).expect("linear link");
                let train = train_loss(&loss, &data.xt, &w, 0.0, &data.y);
                let cw = setup.c * w.norm();
                let rhs0 = bounds::optimistic_rhs(train, h, cw, n, 0.0).expect("eps 0");
                let rhs1 = bounds::optimistic_rhs(train, h, cw, n, setup.eps.eps_hat).expect("eps < 1");
                rec.train_loss = Some(train);
                rec.set_bounds(lhs, rhs0, rhs1);
                let w_perp = setup.geom.q_apply(&w);
                let xi2 = xi.norm_squared();
                let nb = bounds::norm_bound_linear(xi2, setup.geom.trace_perp, setup.eps.eps_hat).expect("trace > 0");
                rec.set_norm(w_perp.norm_squared(), nb);
                rec.put("norm_ratio", w_perp.norm_squared() * setup.geom.trace_perp / xi2);
                rec.put("w_norm", w.norm());
                rec
            })
        })?;
        report.push_point(pi, records, setup.params);
    }
    Ok(report)
}

/// Population minimizer along the index direction: `w♯ = a · w*`, with an
/// intercept `b` when `with_bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpFit {
    pub a: f64,
    pub b: f64,
    /// `L(w♯, b♯)` on an independent pool.
    pub loss: f64,
    pub loss_se: f64,
}

fn argmin_on(grid: impl Iterator<Item = f64>, f: impl Fn(f64) -> f64) -> (f64, f64) {
    grid.map(|v| (v, f(v))).fold((f64::NAN, f64::INFINITY), |acc, (v, l)| if l < acc.1 { (v, l) } else { acc })
}

fn linspace(lo: f64, hi: f64, m: usize) -> impl Iterator<Item = f64> {
    (0..m).map(move |i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
}

/// Plain Nelder-Mead from `x0` with an axis-aligned initial simplex.
fn nelder_mead_2d(f: impl Fn([f64; 2]) -> f64, x0: [f64; 2], scale: [f64; 2], iters: usize) -> (f64, f64) {
    let mut s: Vec<([f64; 2], f64)> = [x0, [x0[0] + scale[0], x0[1]], [x0[0], x0[1] + scale[1]]]
        .into_iter()
        .map(|p| (p, f(p)))
        .collect();
    let lerp = |p: [f64; 2], q: [f64; 2], t: f64| [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
    for _ in 0..iters {
        s.sort_by(|x, y| x.1.total_cmp(&y.1));
        let c = lerp(s[0].0, s[1].0, 0.5);
        let worst = s[2];
        let refl = lerp(c, worst.0, -1.0);
        let fr = f(refl);
        if fr < s[0].1 {
            let exp = lerp(c, worst.0, -2.0);
            let fe = f(exp);
            s[2] = if fe < fr { (exp, fe) } else { (refl, fr) };
        } else if fr < s[1].1 {
            s[2] = (refl, fr);
        } else {
            let con = lerp(c, worst.0, 0.5);
            let fc = f(con);
            if fc < worst.1 {
                s[2] = (con, fc);
            } else {
                for i in 1..3 {
                    let p = lerp(s[0].0, s[i].0, 0.5);
                    s[i] = (p, f(p));
                }
            }
        }
        let spread = (s[1].0[0] - s[0].0[0]).abs().max((s[2].0[0] - s[0].0[0]).abs())
            + (s[1].0[1] - s[0].0[1]).abs().max((s[2].0[1] - s[0].0[1]).abs());
        if spread < 1e-9 {
            break;
        }
    }
    s.sort_by(|x, y| x.1.total_cmp(&y.1));
    (s[0].0[0], s[0].0[1])
}

/// Grid search over `a ∈ [−3, 3]` (401 points, in units of `w*`) refined
/// once on the bracketing cells; with a bias, alternates with a 401-point
/// search over `b ∈ [−3, 3]·sd(s)` and finishes with a simplex search.
pub fn fit_sharp(model: &MultiIndexModel, loss: &LossSpec, with_bias: bool, draws: usize, seed: u64) -> Result<SharpFit> {
    if model.k() != 1 {
        return Err(Error::domain("w♯ search supports k = 1 only"));
    }
    let mut r = rng::stream(seed, streams::AUX);
    let pool = model.draw_projected(draws, &mut r);
    for y in &pool.y {
        loss.check_label(*y)?;
    }
    let eval = |a: f64, b: f64| pool.mean_loss(&ProjectedPredictor::index_only(DVector::from_element(1, a), b), loss).mean;
    let sd = (model.w.transpose() * model.sigma.mul_mat(&model.w))[(0, 0)].sqrt();
    let step_a = 6.0 / 400.0;
    let step_b = 6.0 * sd / 400.0;
    let mut b = 0.0;
    let (mut a, _) = argmin_on(linspace(-3.0, 3.0, 401), |a| eval(a, b));
    if with_bias {
        for _ in 0..2 {
            b = argmin_on(linspace(-3.0 * sd, 3.0 * sd, 401), |b| eval(a, b)).0;
            a = argmin_on(linspace(-3.0, 3.0, 401), |a| eval(a, b)).0;
        }
        b = argmin_on(linspace(b - step_b, b + step_b, 401), |b| eval(a, b)).0;
        a = argmin_on(linspace(a - step_a, a + step_a, 401), |a| eval(a, b)).0;
        (a, b) = nelder_mead_2d(|p| eval(p[0], p[1]), [a, b], [4.0 * step_a, 4.0 * step_b], 400);
    } else {
        a = argmin_on(linspace(a - step_a, a + step_a, 401), |a| eval(a, b)).0;
    }
    let mut r = rng::stream(seed, streams::TEST);
    let fresh = model.draw_projected(draws, &mut r);
    let est = fresh.mean_loss(&ProjectedPredictor::index_only(DVector::from_element(1, a), b), loss);
    Ok(SharpFit {
        a,
        b,
        loss: est.mean,
        loss_se: est.std_err,
    })
}

/// Phase retrieval: the constructive interpolant around `w♯` against the
/// population minimizer, the optimistic rate and the norm bound.
pub fn run_benign_phase(cfg: &PhaseConfig, opts: RunOptions) -> Result<ExperimentReport> {
    check_common(&cfg.points, cfg.trials, cfg.delta)?;
    let mut report = ExperimentReport::new("benign_phase", opts, cfg)?;
    let loss = LossSpec::phase_retrieval();
    let h = loss.sqrt_lip_sq.expect("phase loss is sqrt-Lipschitz");
    for (pi, pt) in cfg.points.iter().enumerate() {
        if cfg.signal_std == 0.0 {
            return Err(Error::Config("phase retrieval needs a signal direction (k = 1)".into()));
        }
        let model = single_index(&pt.covariance, cfg.signal_std, Link::MagnitudeNoise, cfg.noise_std)?;
        let n = pt.n;
        let pseed = point_seed(opts.seed, pi);
        let (setup, sharp) = report.time(&format!("point{pi}.setup"), || -> Result<_> {
            let s = setup_point(model, &loss, n, cfg.delta, cfg.eps_trials, cfg.c_draws, pseed)?;
            let sharp = fit_sharp(&s.model, &loss, false, cfg.sharp_draws, pseed)?;
            Ok((s, sharp))
        })?;
        let w_sharp = setup.model.index_sum() * sharp.a;
        let sharp_norm = w_sharp.norm();
        let tr = setup.geom.trace_perp;
        let eps = setup.eps.eps_hat;
        let mut params = setup.params.clone();
        params.insert("a_sharp".into(), sharp.a);
        params.insert("L_sharp".into(), sharp.loss);
        params.insert("L_sharp_se".into(), sharp.loss_se);
        params.insert("w_sharp_norm".into(), sharp_norm);
        let corollary = (sharp.loss.sqrt() + sharp_norm * (tr / n as f64).sqrt()).powi(2);
        params.insert("corollary_rhs".into(), corollary);
        let records = report.time(&format!("point{pi}.trials"), || {
            run_pool(opts.workers, cfg.trials, |t| {
                let seed = rng::trial_seed(opts.seed, pi, t);
                let data = setup.model.sample(n, seed);
                let mut rec = TrialRecord::new(pi, t, seed, n, data.d());
                let y = data.y_vec();
                let solver = MinNormSolver::new(&data.xt);
                let sol = match phase_construct_with(&solver, &y, &w_sharp) {
                    Ok(s) => s,
                    Err(e) => return rec.flagged(flag_of(&e)),
                };
                let w = sol.w().expect("vector predictor").clone();
                let mut r = rng::stream(seed, streams::TEST);
                let test = setup.model.draw_projected(cfg.test_draws, &mut r);
                let est = test.mean_loss(&setup.model.projected(&setup.geom, &w, 0.0), &loss);
                let train = train_loss(&loss, &data.xt, &w, 0.0, &data.y);
                let cw = setup.c * w.norm();
                rec.train_loss = Some(train);
                rec.lhs_se = Some(est.std_err);
                rec.set_bounds(
                    est.mean,
                    bounds::optimistic_rhs(train, h, cw, n, 0.0).expect("eps 0"),
                    bounds::optimistic_rhs(train, h, cw, n, eps).expect("eps < 1"),
                );
                let nb0 = bounds::norm_bound_phase(sharp_norm, sharp.loss, n, tr, 0.0).expect("trace > 0");
                let nb = bounds::norm_bound_phase(sharp_norm, sharp.loss, n, tr, eps).expect("trace > 0");
                rec.set_norm(w.norm(), nb);
                rec.put("norm_bound_eps0", nb0);
                rec.put("norm_holds_eps0", if w.norm() <= nb0 { 1.0 } else { 0.0 });
                rec.put("ratio", est.mean / sharp.loss);
                rec
            })
        })?;
        report.push_point(pi, records, params);
    }
    Ok(report)
}

/// ReLU regression with a point mass at zero: the constructive interpolant
/// under the relaxed loss, plus the exact minimum norm with zero labels
/// relaxed to `ŷ ≤ 0` against the equality-constrained minimum norm.
pub fn run_benign_relu(cfg: &ReluConfig, opts: RunOptions) -> Result<ExperimentReport> {
    check_common(&cfg.points, cfg.trials, cfg.delta)?;
    let mut report = ExperimentReport::new("benign_relu", opts, cfg)?;
    let loss = LossSpec::relu_interp();
    let compare = LossSpec::new(LossKind::SigmaSquare {
        sigma: Activation::Relu,
    })?;
    let h = loss.sqrt_lip_sq.expect("relu loss is sqrt-Lipschitz");
    for (pi, pt) in cfg.points.iter().enumerate() {
        if cfg.signal_std == 0.0 {
            return Err(Error::Config("ReLU regression needs a signal direction (k = 1)".into()));
        }
        let link = Link::ReluPointmass { offset: cfg.offset };
        let model = single_index(&pt.covariance, cfg.signal_std, link, cfg.noise_std)?;
        let n = pt.n;
        let pseed = point_seed(opts.seed, pi);
        let (setup, sharp) = report.time(&format!("point{pi}.setup"), || -> Result<_> {
            let s = setup_point(model, &loss, n, cfg.delta, cfg.eps_trials, cfg.c_draws, pseed)?;
            let sharp = fit_sharp(&s.model, &loss, true, cfg.sharp_draws, pseed)?;
            Ok((s, sharp))
        })?;
        let w_sharp = setup.model.index_sum() * sharp.a;
        let b_sharp = sharp.b;
        let sharp_norm = w_sharp.norm();
        let tr = setup.geom.trace_perp;
        let eps = setup.eps.eps_hat;
        let mut params = setup.params.clone();
        params.insert("a_sharp".into(), sharp.a);
        params.insert("b_sharp".into(), b_sharp);
        params.insert("L_sharp".into(), sharp.loss);
        params.insert("L_sharp_se".into(), sharp.loss_se);
        params.insert("w_sharp_norm".into(), sharp_norm);
        let records = report.time(&format!("point{pi}.trials"), || {
            run_pool(opts.workers, cfg.trials, |t| {
                let seed = rng::trial_seed(opts.seed, pi, t);
                let data = setup.model.sample(n, seed);
                let mut rec = TrialRecord::new(pi, t, seed, n, data.d());
                let y = data.y_vec();
                let solver = MinNormSolver::new(&data.xt);
                let sol = match relu_construct_with(&solver, &y, &w_sharp, b_sharp) {
                    Ok(s) => s,
                    Err(e) => return rec.flagged(flag_of(&e)),
                };
                let qp = match relu_min_norm_qp_with(&solver, &y, b_sharp) {
                    Ok(s) => s,
                    Err(e) => return rec.flagged(format!("qp-{}", flag_of(&e))),
                };
                let eq_target = DVector::from_fn(n, |i, _| y[i] - b_sharp);
                let eq_norm = match solver.solve(&eq_target) {
                    Ok((w, _)) => w.norm(),
                    Err(e) => return rec.flagged(format!("eq-{}", flag_of(&e))),
                };
                let w = sol.w().expect("vector predictor").clone();
                let mut r = rng::stream(seed, streams::TEST);
                let test = setup.model.draw_projected(cfg.test_draws, &mut r);
                let pred = setup.model.projected(&setup.geom, &w, b_sharp);
                let est = test.mean_loss(&pred, &loss);
                let cmp = test.mean_loss(&pred, &compare);
                let train = train_loss(&loss, &data.xt, &w, b_sharp, &data.y);
                let cw = setup.c * w.norm();
                rec.train_loss = Some(train);
                rec.lhs_se = Some(est.std_err);
                rec.set_bounds(
                    est.mean,
                    bounds::optimistic_rhs(train, h, cw, n, 0.0).expect("eps 0"),
                    bounds::optimistic_rhs(train, h, cw, n, eps).expect("eps < 1"),
                );
                let nb0 = bounds::norm_bound_phase(sharp_norm, sharp.loss, n, tr, 0.0).expect("trace > 0");
                let nb = bounds::norm_bound_phase(sharp_norm, sharp.loss, n, tr, eps).expect("trace > 0");
                rec.set_norm(w.norm(), nb);
                rec.put("norm_bound_eps0", nb0);
                rec.put("ratio", est.mean / sharp.loss);
                rec.put("compare_loss", cmp.mean);
                rec.put("zero_fraction", y.iter().filter(|v| **v == 0.0).count() as f64 / n as f64);
                rec.put("norm_qp", qp.norm);
                rec.put("norm_eq", eq_norm);
                rec.put("norm_saving", eq_norm - qp.norm);
                rec
            })
        })?;
        report.push_point(pi, records, params);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(d: usize) -> CovarianceSpec {
        CovarianceSpec::Isotropic { d, scale: 1.0 }
    }

    #[test]
    fn noiseless_linear_is_realizable() {
        let cfg = LinearConfig {
            points: vec![GridPoint { n: 30, covariance: iso(300) }],
            signal_std: 1.0,
            noise_std: 0.0,
            trials: 3,
            delta: 0.05,
            eps_trials: 100,
            c_draws: None,
        };
        let rep = run_benign_linear(&cfg, RunOptions::new(1, 1)).unwrap();
        for r in &rep.records {
            assert!(r.train_loss.unwrap() < 1e-20);
            // the target direction is one of d; the rest of the excess is the
            // unexplained part of w*
            assert!(r.lhs.unwrap() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn noiseless_phase_recovers_signal() {
        let cfg = PhaseConfig {
            points: vec![GridPoint { n: 40, covariance: iso(400) }],
            signal_std: 1.0,
            noise_std: 0.0,
            trials: 2,
            delta: 0.05,
            eps_trials: 100,
            test_draws: 20_000,
            sharp_draws: 20_000,
            c_draws: None,
        };
        let rep = run_benign_phase(&cfg, RunOptions::new(2, 1)).unwrap();
        let p = &rep.points[0].params;
        assert!(p["L_sharp"] < 1e-6, "{p:?}");
        assert!((p["a_sharp"].abs() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn sharp_fit_recovers_relu_bias() {
        let model = single_index(&iso(5), 1.0, Link::ReluPointmass { offset: 0.5 }, 0.0).unwrap();
        let s = fit_sharp(&model, &LossSpec::relu_interp(), true, 20_000, 4).unwrap();
        assert!((s.a - 1.0).abs() < 0.02 && (s.b - 0.5).abs() < 0.02, "{s:?}");
        assert!(s.loss < 1e-4);
    }
}
