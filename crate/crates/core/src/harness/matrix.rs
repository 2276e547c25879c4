//! Matrix sensing by minimum nuclear norm: certificate, norm bound and the
//! consistency scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{default_delta, flag_of, run_pool, ExperimentReport, RunOptions, TrialRecord};
use crate::bounds::{c_delta_nuclear, consistency_rhs_matrix, norm_bound_matrix, optimistic_rhs};
use crate::error::{Error, Result};
use crate::interpolants::{certify_nuclear, nuclear_min, AdmmParams, SolveStatus};
use crate::models::sample_matrix_sensing;
use crate::rng;

/// Instances above this many entries are refused.
const MAX_ENTRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixPoint {
    pub n: usize,
    pub sigma: f64,
}

fn default_one() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    0.25
}

fn default_cert_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    pub points: Vec<MatrixPoint>,
    pub trials: usize,
    #[serde(default = "default_one")]
    pub xstar_fro: f64,
    /// `ε̂` used for the norm bound and the `ε̂` variant of the rate.
    #[serde(default = "default_eps")]
    pub eps_hat: f64,
    #[serde(default = "default_cert_tol")]
    pub cert_tol: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub admm: AdmmParams,
}

pub fn run_matrix_sensing(cfg: &MatrixConfig, opts: RunOptions) -> Result<ExperimentReport> {
    if cfg.points.is_empty() || cfg.trials == 0 {
        return Err(Error::Config("need at least one grid point and one trial".into()));
    }
    if cfg.d1 * cfg.d2 > MAX_ENTRIES {
        return Err(Error::Config(format!("d1·d2 = {} exceeds {MAX_ENTRIES}", cfg.d1 * cfg.d2)));
    }
    if !(cfg.eps_hat < 1.0) {
        return Err(Error::Config("eps_hat must be below 1".into()));
    }
    let mut report = ExperimentReport::new("matrix_sensing", opts, cfg)?;
    let c = c_delta_nuclear(cfg.d1, cfg.d2, cfg.delta)?;
    let d = cfg.d1 * cfg.d2;
    for (pi, pt) in cfg.points.iter().enumerate() {
        let n = pt.n;
        let terms = consistency_rhs_matrix(cfg.r, cfg.d1, cfg.d2, n, pt.sigma, cfg.xstar_fro)?;
        let nb0 = norm_bound_matrix(cfg.r, cfg.xstar_fro, n, pt.sigma * pt.sigma, cfg.d1, cfg.d2, 0.0)?;
        let nb = norm_bound_matrix(cfg.r, cfg.xstar_fro, n, pt.sigma * pt.sigma, cfg.d1, cfg.d2, cfg.eps_hat)?;
        let mut params = BTreeMap::new();
        params.insert("c_nuclear".into(), c);
        params.insert("eps_hat".into(), cfg.eps_hat);
        params.insert("sigma".into(), pt.sigma);
        params.insert("consistency_sum".into(), terms.sum);
        params.insert("norm_bound_eps0".into(), nb0);
        let records = report.time(&format!("point{pi}.trials"), || {
            run_pool(opts.workers, cfg.trials, |t| {
                let seed = rng::trial_seed(opts.seed, pi, t);
                let mut rec = TrialRecord::new(pi, t, seed, n, d);
                let run = || -> Result<TrialRecord> {
                    let inst = sample_matrix_sensing(cfg.d1, cfg.d2, cfg.r, n, pt.sigma, cfg.xstar_fro, seed)?;
                    let sol = nuclear_min(&inst, &cfg.admm)?;
                    let mut rec = rec.clone();
                    rec.put("iterations", sol.iterations as f64);
                    if sol.status == SolveStatus::IterationBudgetHit {
                        return Ok(rec.flagged("iteration-budget"));
                    }
                    let cert = certify_nuclear(&sol, &inst, cfg.cert_tol)?;
                    let x = sol.matrix().expect("matrix predictor");
                    let lhs = inst.population_loss(x);
                    let err2 = (x - &inst.x_star).norm_squared() / (cfg.xstar_fro * cfg.xstar_fro);
                    let cn = c * sol.norm;
                    let train = (inst.measure(x) - &inst.y).norm_squared() / n as f64;
                    rec.train_loss = Some(train);
                    rec.set_bounds(lhs, optimistic_rhs(train, 1.0, cn, n, 0.0)?, optimistic_rhs(train, 1.0, cn, n, cfg.eps_hat)?);
                    rec.set_norm(sol.norm, nb);
                    rec.put("norm_holds_eps0", if sol.norm <= nb0 { 1.0 } else { 0.0 });
                    rec.put("feasibility", cert.feasibility);
                    rec.put("cert_passes", if cert.passes { 1.0 } else { 0.0 });
                    rec.put("cert_op_norm", cert.op_norm);
                    rec.put("cert_alignment", cert.alignment_error);
                    rec.put("cert_rank", cert.rank as f64);
                    rec.put("dual_gap", sol.norm - cert.dual_bound);
                    rec.put("rel_error_sq", err2);
                    rec.put("rel_error", err2.sqrt());
                    rec.put("error_over_consistency", err2 / terms.sum);
                    Ok(rec)
                };
                match run() {
                    Ok(r) => r,
                    Err(e) => {
                        rec = rec.flagged(flag_of(&e));
                        rec
                    }
                }
            })
        })?;
        report.push_point(pi, records, params);
    }
    Ok(report)
}
