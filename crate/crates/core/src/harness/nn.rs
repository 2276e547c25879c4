//! Weight-shared two-layer ReLU networks `Σ_j a_j σ(⟨w, x⟩ − b_j)`: the
//! optimistic rate with `H_θ = (max_j |Σ_{i≤j} a_i|)²` for random and
//! gradient-descent-fitted parameters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_delta, default_eps_trials, default_test_draws, point_seed, run_pool, ExperimentReport, RunOptions, TrialRecord};
use crate::bounds::{c_delta_l2, default_mc_draws, default_projected_grid, estimate_eps_grid, nn_complexity, optimistic_rhs, ProjectedCandidate};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::{Covariance, Link, MultiIndexModel, Noise};
use crate::rng::{self, streams, StreamRng};

/// Maximum width accepted.
const MAX_UNITS: usize = 16;
/// Consecutive loss increases that mark a fit as divergent.
const DIVERGE_RUN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub w: DVector<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl NnParams {
    /// Entries i.i.d. `N(0, std²)`, drawn `w`, then `a`, then `b`.
    pub fn random(d: usize, units: usize, std: f64, rng: &mut StreamRng) -> Self {
        let g = Normal::new(0.0, std).expect("finite std");
        let w = DVector::from_fn(d, |_, _| g.sample(rng));
        let a = (0..units).map(|_| g.sample(rng)).collect();
        let b = (0..units).map(|_| g.sample(rng)).collect();
        Self { w, a, b }
    }

    pub fn loss(&self) -> Result<LossSpec> {
        LossSpec::nn_weightshared(&self.a, &self.b)
    }

    /// Network outputs and mean squared error on `(xt, y)`.
    fn forward(&self, xt: &DMatrix<f64>, y: &[f64]) -> (DVector<f64>, DVector<f64>, f64) {
        let u = xt.tr_mul(&self.w);
        let out = DVector::from_fn(u.len(), |i, _| {
            self.a.iter().zip(&self.b).map(|(a, b)| a * (u[i] - b).max(0.0)).sum::<f64>()
        });
        let mse = out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / y.len() as f64;
        (u, out, mse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnFit {
    pub params: NnParams,
    pub train_loss: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Full-batch gradient descent on the mean squared error with a fixed
/// step (equivalently `step/n` on the summed loss); the ReLU subgradient
/// at a kink is 0. Stops early after `DIVERGE_RUN` consecutive increases.
pub fn fit_weightshared(xt: &DMatrix<f64>, y: &[f64], init: NnParams, steps: usize, step: f64) -> NnFit {
    let n = y.len() as f64;
    let mut p = init;
    let units = p.a.len();
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    let mut done = 0;
    let mut diverged = false;
    for k in 0..steps {
        let (u, out, mse) = p.forward(xt, y);
        if !mse.is_finite() {
            diverged = true;
            break;
        }
        if mse > prev {
            rising += 1;
            if rising >= DIVERGE_RUN {
                diverged = true;
                break;
            }
        } else {
            rising = 0;
        }
        prev = mse;
        let r = &out - DVector::from_column_slice(y);
        let mut gu = DVector::zeros(u.len());
        let mut ga = vec![0.0; units];
        let mut gb = vec![0.0; units];
        for i in 0..u.len() {
            let ri = 2.0 * r[i] / n;
            for j in 0..units {
                let pre = u[i] - p.b[j];
                if pre > 0.0 {
                    gu[i] += ri * p.a[j];
                    ga[j] += ri * pre;
                    gb[j] -= ri * p.a[j];
                }
            }
        }
        let gw = xt * gu;
        p.w.axpy(-step, &gw, 1.0);
        for j in 0..units {
            p.a[j] -= step * ga[j];
            p.b[j] -= step * gb[j];
        }
        done = k + 1;
    }
    let (_, _, train_loss) = p.forward(xt, y);
    NnFit {
        params: p,
        train_loss,
        steps: done,
        diverged,
    }
}

fn default_units() -> usize {
    4
}
fn default_steps() -> usize {
    2000
}
fn default_step() -> f64 {
    0.05
}
fn default_init_std() -> f64 {
    0.1
}
fn default_refs() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NnConfig {
    #[serde(default = "default_units")]
    pub units: usize,
    pub d: usize,
    pub n: usize,
    pub trials_random: usize,
    pub trials_fitted: usize,
    #[serde(default = "default_steps")]
    pub fit_steps: usize,
    /// Step on the mean loss (`step/n` on the summed loss).
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    pub noise_std: f64,
    /// Label `max(⟨w*, x⟩ + offset + ξ, 0)` with `‖w*‖ = 1`.
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps_trials")]
    pub eps_trials: usize,
    /// Random reference networks whose losses enter the `ε̂` grid.
    #[serde(default = "default_refs")]
    pub eps_refs: usize,
    #[serde(default = "default_test_draws")]
    pub test_draws: usize,
    #[serde(default)]
    pub c_draws: Option<usize>,
}

pub fn run_nn_bound(cfg: &NnConfig, opts: RunOptions) -> Result<ExperimentReport> {
    if cfg.units == 0 || cfg.units > MAX_UNITS {
        return Err(Error::Config(format!("units must be in 1..={MAX_UNITS}")));
    }
    if cfg.d < 2 || cfg.n == 0 {
        return Err(Error::Config("need d ≥ 2 and n ≥ 1".into()));
    }
    let mut report = ExperimentReport::new("nn_bound", opts, cfg)?;
    let model = MultiIndexModel::single_index(
        Covariance::Diagonal(DVector::from_element(cfg.d, 1.0)),
        1.0,
        Link::ReluPointmass { offset: cfg.offset },
        Noise::Gaussian { std: cfg.noise_std },
    )?;
    let geom = model.geometry()?;
    let n = cfg.n;
    let shared = point_seed(opts.seed, 0);
    let (c, eps) = report.time("setup", || -> Result<_> {
        let c = c_delta_l2(&geom, cfg.delta, cfg.c_draws.unwrap_or_else(|| default_mc_draws(cfg.delta)), shared)?;
        let grid = default_projected_grid(&model);
        let mut cands: Vec<ProjectedCandidate> = grid
            .iter()
            .map(|p| ProjectedCandidate {
                pred: p.clone(),
                loss: LossSpec::square(),
            })
            .collect();
        let mut r = rng::stream(shared, streams::FIT);
        for _ in 0..cfg.eps_refs {
            let th = NnParams::random(cfg.d, cfg.units, cfg.init_std, &mut r);
            let loss = th.loss()?;
            cands.push(ProjectedCandidate {
                pred: model.projected(&geom, &th.w, 0.0),
                loss: loss.clone(),
            });
            cands.extend(grid.iter().map(|p| ProjectedCandidate {
                pred: p.clone(),
                loss: loss.clone(),
            }));
        }
        let eps = estimate_eps_grid(&model, &cands, n, cfg.eps_trials, cfg.delta, shared)?;
        Ok((c, eps))
    })?;
    for (pi, (label, trials)) in [("random", cfg.trials_random), ("fitted", cfg.trials_fitted)].into_iter().enumerate() {
        let fitted = pi == 1;
        let mut params = BTreeMap::new();
        params.insert("c_delta".into(), c);
        params.insert("eps_hat".into(), eps.eps_hat);
        params.insert("fitted".into(), if fitted { 1.0 } else { 0.0 });
        let records = report.time(&format!("{label}.trials"), || {
            run_pool(opts.workers, trials, |t| {
                let seed = rng::trial_seed(opts.seed, pi, t);
                let data = model.sample(n, seed);
                let mut rec = TrialRecord::new(pi, t, seed, n, cfg.d);
                let mut r = rng::stream(seed, streams::FIT);
                let init = NnParams::random(cfg.d, cfg.units, cfg.init_std, &mut r);
                let (theta, train) = if fitted {
                    let fit = fit_weightshared(&data.xt, &data.y, init, cfg.fit_steps, cfg.step);
                    rec.put("fit_steps", fit.steps as f64);
                    if fit.diverged {
                        return rec.flagged("divergent-fit");
                    }
                    (fit.params, fit.train_loss)
                } else {
                    let (_, _, mse) = init.forward(&data.xt, &data.y);
                    (init, mse)
                };
                let loss = theta.loss().expect("equal lengths");
                let hc = nn_complexity(&theta.a, &theta.b, 1.0).expect("equal lengths");
                let h = hc * hc;
                let wn = theta.w.norm();
                let mut r = rng::stream(seed, streams::TEST);
                let test = model.draw_projected(cfg.test_draws, &mut r);
                let est = test.mean_loss(&model.projected(&geom, &theta.w, 0.0), &loss);
                rec.train_loss = Some(train);
                rec.lhs_se = Some(est.std_err);
                rec.set_bounds(
                    est.mean,
                    optimistic_rhs(train, h, c * wn, n, 0.0).expect("eps 0"),
                    optimistic_rhs(train, h, c * wn, n, eps.eps_hat).expect("eps < 1"),
                );
                rec.put("H_theta", h);
                rec.put("w_norm", wn);
                rec.put("complexity", hc * wn);
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
    use crate::interpolants::min_norm_linear;

    #[test]
    fn gradient_descent_decreases_loss() {
        let model = MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(50, 1.0)),
            1.0,
            Link::ReluPointmass { offset: 0.0 },
            Noise::Gaussian { std: 0.1 },
        )
        .unwrap();
        let data = model.sample(40, 3);
        let mut r = rng::stream(3, streams::FIT);
        let init = NnParams::random(50, 3, 0.1, &mut r);
        let (_, _, l0) = init.forward(&data.xt, &data.y);
        let fit = fit_weightshared(&data.xt, &data.y, init, 300, 0.05);
        assert!(!fit.diverged);
        assert!(fit.train_loss < 0.5 * l0, "{} vs {l0}", fit.train_loss);
    }

    #[test]
    fn single_active_unit_is_linear() {
        // a = (1), b = (−100): all pre-activations positive, so the network
        // is ⟨w, x⟩ + 100 and the loss is the square loss of that predictor
        let model = MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(30, 1.0)),
            1.0,
            Link::LinearNoise,
            Noise::Gaussian { std: 0.3 },
        )
        .unwrap();
        let data = model.sample(10, 1);
        let y = data.y_vec().add_scalar(100.0);
        let w = min_norm_linear(&data.xt, &y.add_scalar(-100.0)).unwrap().w().unwrap().clone();
        let th = NnParams { w, a: vec![1.0], b: vec![-100.0] };
        let (_, out, mse) = th.forward(&data.xt, y.as_slice());
        assert!(mse < 1e-18);
        assert!((out - y).amax() < 1e-9);
        assert_eq!(nn_complexity(&th.a, &th.b, 1.0).unwrap(), 1.0);
    }
}
