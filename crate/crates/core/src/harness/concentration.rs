//! Distributional self-tests of the concentration inequalities: Gaussian
//! norm concentration, the smallest singular value of a Gaussian matrix,
//! and the weighted chi-square lower tail. Each empirical exceedance
//! frequency is tested against its bound with a one-sided binomial test.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{run_pool, ExperimentReport, RunOptions, TrialRecord};
use crate::error::{Error, Result};
use crate::models::{make_covariance, Covariance, CovarianceSpec};
use crate::rng::{self, streams};

fn default_trials() -> usize {
    10_000
}
fn default_dims() -> Vec<usize> {
    vec![10, 100, 1000]
}
fn default_norm_ts() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 3.0, 4.0]
}
fn default_shapes() -> Vec<[usize; 2]> {
    vec![[200, 50], [500, 100]]
}
fn default_rmt_ts() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}
fn default_level() -> f64 {
    1e-3
}
fn default_sigmah_cov() -> CovarianceSpec {
    CovarianceSpec::Bilevel {
        d: 1000,
        spike_count: 10,
        spike_value: 10.0,
        tail_value: 1.0,
    }
}
fn default_sigmah_deltas() -> Vec<f64> {
    vec![0.01, 0.05, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_dims")]
    pub norm_dims: Vec<usize>,
    #[serde(default = "default_norm_ts")]
    pub norm_ts: Vec<f64>,
    /// `[N, n]` shapes of the Gaussian matrices.
    #[serde(default = "default_shapes")]
    pub rmt_shapes: Vec<[usize; 2]>,
    #[serde(default = "default_rmt_ts")]
    pub rmt_ts: Vec<f64>,
    /// Significance level of the one-sided binomial tests.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_sigmah_cov")]
    pub sigmah_covariance: CovarianceSpec,
    #[serde(default = "default_sigmah_deltas")]
    pub sigmah_deltas: Vec<f64>,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

/// `P(Bin(trials, p) ≥ count)`.
pub fn binomial_upper_pvalue(count: usize, trials: usize, p: f64) -> f64 {
    if count == 0 || p >= 1.0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    let b = Binomial::new(p, trials as u64).expect("valid binomial");
    b.sf(count as u64 - 1)
}

struct Check {
    family: &'static str,
    params: Vec<(&'static str, f64)>,
    exceed: usize,
    bound: f64,
}

fn to_record(point: usize, seed: u64, trials: usize, level: f64, c: &Check) -> TrialRecord {
    let freq = c.exceed as f64 / trials as f64;
    let mut rec = TrialRecord::new(point, 0, seed, trials, 0);
    rec.set_bounds(freq, c.bound, c.bound);
    let p = binomial_upper_pvalue(c.exceed, trials, c.bound);
    for (k, v) in &c.params {
        rec.put(k, *v);
    }
    rec.put("exceed", c.exceed as f64);
    rec.put("p_value", p);
    rec.put("passes", if p >= level { 1.0 } else { 0.0 });
    rec
}

pub fn run_concentration_suite(cfg: &ConcentrationConfig, opts: RunOptions) -> Result<ExperimentReport> {
    if cfg.trials == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Config("need trials > 0 and a level in (0, 1)".into()));
    }
    let mut report = ExperimentReport::new("concentration", opts, cfg)?;
    let trials = cfg.trials;
    let mut checks: Vec<Check> = Vec::new();

    for (di, &dim) in cfg.norm_dims.iter().enumerate() {
        let dev: Vec<f64> = report.time(&format!("norm.d{dim}"), || {
            run_pool(opts.workers, trials, |t| {
                let mut r = rng::stream(rng::trial_seed(opts.seed, di, t), streams::AUX);
                let s: f64 = (0..dim).map(|_| StandardNormal.sample(&mut r)).map(|z: f64| z * z).sum();
                (s.sqrt() - (dim as f64).sqrt()).abs()
            })
        })?;
        for &t in &cfg.norm_ts {
            checks.push(Check {
                family: "norm_concentration",
                params: vec![("dim", dim as f64), ("t", t)],
                exceed: dev.iter().filter(|v| **v >= t).count(),
                bound: (4.0 * (-t * t / 4.0).exp()).min(1.0),
            });
        }
    }

    let base = cfg.norm_dims.len();
    for (si, &[big, small]) in cfg.rmt_shapes.iter().enumerate() {
        if small == 0 || big < small {
            return Err(Error::Config(format!("rmt shape [{big}, {small}] needs N ≥ n ≥ 1")));
        }
        let thresholds: Vec<f64> = cfg.rmt_ts.iter().map(|t| (big as f64).sqrt() - (small as f64).sqrt() - t).collect();
        // below[j][trial]: σ_min < threshold j, decided by whether AᵀA − s²I
        // admits a Cholesky factorization
        let below: Vec<Vec<bool>> = report.time(&format!("rmt.{big}x{small}"), || {
            run_pool(opts.workers, trials, |t| {
                let mut r = rng::stream(rng::trial_seed(opts.seed, base + si, t), streams::AUX);
                let a: DMatrix<f64> = DMatrix::from_fn(big, small, |_, _| StandardNormal.sample(&mut r));
                let g = a.tr_mul(&a);
                thresholds
                    .iter()
                    .map(|&s| {
                        if s <= 0.0 {
                            return false;
                        }
                        let mut m = g.clone();
                        for i in 0..small {
                            m[(i, i)] -= s * s;
                        }
                        m.cholesky().is_none()
                    })
                    .collect()
            })
        })?;
        for (j, &t) in cfg.rmt_ts.iter().enumerate() {
            checks.push(Check {
                family: "rmt",
                params: vec![("N", big as f64), ("n", small as f64), ("t", t)],
                exceed: below.iter().filter(|v| v[j]).count(),
                bound: (2.0 * (-t * t / 2.0).exp()).min(1.0),
            });
        }
    }

    let sigma = make_covariance(&cfg.sigmah_covariance)?;
    let diag = match &sigma {
        Covariance::Diagonal(s) => s.clone(),
        Covariance::Dense { .. } => nalgebra::SymmetricEigen::new(sigma.to_dense()).eigenvalues,
    };
    let tr = diag.sum();
    let reff = sigma.eff_rank();
    let sb = base + cfg.rmt_shapes.len();
    let dev: Vec<f64> = report.time("sigmah", || {
        run_pool(opts.workers, trials, |t| {
            let mut r = rng::stream(rng::trial_seed(opts.seed, sb, t), streams::AUX);
            let q: f64 = diag
                .iter()
                .map(|l| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    l * z * z
                })
                .sum();
            1.0 - q / tr
        })
    })?;
    for &delta in &cfg.sigmah_deltas {
        let thr = (4.0 / delta).ln() / reff.sqrt();
        checks.push(Check {
            family: "sigmah_unit_constant",
            params: vec![("delta", delta), ("eff_rank", reff)],
            exceed: dev.iter().filter(|v| **v >= thr).count(),
            bound: delta,
        });
    }

    let mut records = Vec::new();
    for (i, c) in checks.iter().enumerate() {
        records.push(to_record(i, opts.seed, trials, cfg.level, c));
    }
    let mut pass_norm = true;
    let mut pass_rmt = true;
    let mut pass_sigmah = true;
    for (c, r) in checks.iter().zip(&records) {
        let ok = r.extra["passes"] == 1.0;
        match c.family {
            "norm_concentration" => pass_norm &= ok,
            "rmt" => pass_rmt &= ok,
            _ => pass_sigmah &= ok,
        }
    }
    for (i, r) in records.into_iter().enumerate() {
        let mut params = std::collections::BTreeMap::new();
        params.insert(
            "family".into(),
            match checks[i].family {
                "norm_concentration" => 0.0,
                "rmt" => 1.0,
                _ => 2.0,
            },
        );
        report.push_point(i, vec![r], params);
    }
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    report.summary.insert("norm_concentration_pass".into(), flag(pass_norm));
    report.summary.insert("rmt_pass".into(), flag(pass_rmt));
    report.summary.insert("sigmah_unit_constant_pass".into(), flag(pass_sigmah));
    report.summary.insert("all_pass".into(), flag(pass_norm && pass_rmt));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_pvalue_edges() {
        assert_eq!(binomial_upper_pvalue(0, 100, 0.1), 1.0);
        assert_eq!(binomial_upper_pvalue(5, 100, 1.5), 1.0);
        // P(Bin(2, 1/2) ≥ 2) = 1/4
        assert!((binomial_upper_pvalue(2, 2, 0.5) - 0.25).abs() < 1e-12);
        assert!(binomial_upper_pvalue(60, 100, 0.1) < 1e-10);
    }
}
