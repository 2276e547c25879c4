//! The non-Gaussian counterexample: `h²`-weighted optimistic rate against
//! the Gaussian-universality prediction for the unweighted loss.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{default_delta, default_eps_trials, default_test_draws, flag_of, point_seed, run_pool, ExperimentReport, RunOptions, TrialRecord};
use crate::bounds::{c_delta_l2, default_mc_draws, estimate_eps_counterexample, weighted_optimistic_rhs};
use crate::error::{Error, Result};
use crate::interpolants::MinNormSolver;
use crate::models::{sample_counterexample, CounterexampleModel, MeanEstimate, ModelGeometry};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterPoint {
    pub n: usize,
    pub d: usize,
}

/// Seed slot for the moment check, disjoint from the grid points.
const MOMENT_POINT: usize = 0x7fff_ffff;

fn default_moment_draws() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub points: Vec<CounterPoint>,
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps_trials")]
    pub eps_trials: usize,
    #[serde(default = "default_test_draws")]
    pub test_draws: usize,
    #[serde(default = "default_moment_draws")]
    pub moment_draws: usize,
    #[serde(default)]
    pub c_draws: Option<usize>,
}

/// `E[h⁴]`, `(E[h²])²` and their gap with delta-method standard errors.
fn moment_gap(cm: &CounterexampleModel, m: usize, seed: u64) -> BTreeMap<String, f64> {
    let mut r = rng::stream(seed, streams::AUX);
    let mut z = vec![0.0; cm.k];
    let mut head = vec![0.0; cm.k];
    let h: Vec<f64> = (0..m)
        .map(|_| {
            cm.draw_head(&mut r, &mut z, &mut head);
            cm.h(&head)
        })
        .collect();
    let h2 = MeanEstimate::from_iter(h.iter().map(|v| v * v));
    let h4 = MeanEstimate::from_iter(h.iter().map(|v| v.powi(4)));
    let mu2 = h2.mean;
    // influence function of E h⁴ − (E h²)²
    let gap = MeanEstimate::from_iter(h.iter().map(|v| v.powi(4) - 2.0 * mu2 * v * v));
    let mut out = BTreeMap::new();
    out.insert("moment_h4".into(), h4.mean);
    out.insert("moment_h4_se".into(), h4.std_err);
    out.insert("moment_h2_sq".into(), mu2 * mu2);
    out.insert("moment_h2_sq_se".into(), 2.0 * mu2 * h2.std_err);
    out.insert("moment_gap".into(), h4.mean - mu2 * mu2);
    out.insert("moment_gap_se".into(), gap.std_err);
    out.insert("moment_draws".into(), m as f64);
    out
}

pub fn run_counterexample(cfg: &CounterexampleConfig, opts: RunOptions) -> Result<ExperimentReport> {
    if cfg.points.is_empty() || cfg.trials == 0 {
        return Err(Error::Config("need at least one grid point and one trial".into()));
    }
    let mut report = ExperimentReport::new("counterexample", opts, cfg)?;
    let base = CounterexampleModel::standard(cfg.points[0].d)?;
    let moments = report.time("moments", || moment_gap(&base, cfg.moment_draws, point_seed(opts.seed, MOMENT_POINT)));
    report.summary.extend(moments);
    for (pi, pt) in cfg.points.iter().enumerate() {
        let cm = CounterexampleModel::standard(pt.d)?;
        let n = pt.n;
        let k = cm.k;
        let pseed = point_seed(opts.seed, pi);
        let (c_tail, eps) = report.time(&format!("point{pi}.setup"), || -> Result<_> {
            let tail = ModelGeometry::new(&cm.sigma_tail, &DMatrix::zeros(pt.d - k, 0))?;
            let c = c_delta_l2(&tail, cfg.delta, cfg.c_draws.unwrap_or_else(|| default_mc_draws(cfg.delta)), pseed)?;
            let eps = estimate_eps_counterexample(&cm, n, cfg.eps_trials, cfg.delta, pseed)?;
            Ok((c, eps))
        })?;
        let eh2 = crate::models::counterexample::one_plus_abs_h2();
        let tr_tail = cm.sigma_tail.trace();
        let mut params = BTreeMap::new();
        params.insert("c_tail".into(), c_tail);
        params.insert("eps_hat".into(), eps.eps_hat);
        let records = report.time(&format!("point{pi}.trials"), || {
            run_pool(opts.workers, cfg.trials, |t| {
                let seed = rng::trial_seed(opts.seed, pi, t);
                let mut rec = TrialRecord::new(pi, t, seed, n, pt.d);
                let data = match sample_counterexample(&cm, pt.d, n, seed) {
                    Ok(d) => d,
                    Err(e) => return rec.flagged(flag_of(&e)),
                };
                let y = data.y_vec();
                let (w, _) = match MinNormSolver::new(&data.xt).solve(&y) {
                    Ok(s) => s,
                    Err(e) => return rec.flagged(flag_of(&e)),
                };
                let weights = data.weights.as_ref().expect("counterexample weights");
                let pred = data.xt.tr_mul(&w);
                let train_w = (0..n).map(|i| (pred[i] - y[i]).powi(2) / weights[i]).sum::<f64>() / n as f64;
                let mut r = rng::stream(seed, streams::TEST);
                let (weighted, plain) = cm.test_losses(&w, cfg.test_draws, &mut r);
                let c_w = c_tail * cm.tail_scale(&w);
                rec.train_loss = Some(train_w);
                rec.lhs_se = Some(weighted.std_err);
                rec.set_bounds(
                    weighted.mean,
                    weighted_optimistic_rhs(train_w, c_w, n, 0.0).expect("eps 0"),
                    weighted_optimistic_rhs(train_w, c_w, n, eps.eps_hat).expect("eps < 1"),
                );
                let universal = w.norm_squared() * eh2 * tr_tail / n as f64;
                rec.put("unweighted_lhs", plain.mean);
                rec.put("unweighted_lhs_se", plain.std_err);
                rec.put("universality_rhs", universal);
                rec.put("universality_ratio", plain.mean / universal);
                rec.put("w_norm", w.norm());
                rec.put("w_head", w[0]);
                rec
            })
        })?;
        report.push_point(pi, records, params);
    }
    Ok(report)
}
