//! Seeded Monte Carlo experiment drivers.
//!
//! Every trial is a pure function of the experiment config and its trial
//! seed `rng::trial_seed(master, point, trial)`, so records are identical
//! for any worker count. Quantities shared by all trials of a grid point
//! (`ε̂`, `C_δ` quantiles, `w♯`) are computed up front from a point seed.

mod benign;
mod concentration;
mod counter;
mod matrix;
mod nn;
pub mod plots;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use benign::{run_benign_linear, run_benign_phase, run_benign_relu, LinearConfig, PhaseConfig, ReluConfig, SharpFit};
pub use concentration::{run_concentration_suite, ConcentrationConfig};
pub use counter::{run_counterexample, CounterexampleConfig};
pub use matrix::{run_matrix_sensing, MatrixConfig, MatrixPoint};
pub use nn::{fit_weightshared, run_nn_bound, NnConfig, NnFit, NnParams};

use crate::error::{Error, Result};
use crate::rng;

pub const ARTIFACT: &str = "optirate";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Test-loss draws when no closed form exists.
pub const DEFAULT_TEST_DRAWS: usize = 100_000;

/// Seed for quantities shared by the trials of grid point `point`.
pub fn point_seed(master: u64, point: usize) -> u64 {
    rng::trial_seed(master, point, u32::MAX as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub workers: usize,
}

impl RunOptions {
    pub fn new(seed: u64, workers: usize) -> Self {
        Self { seed, workers: workers.max(1) }
    }
}

/// One trial. Fields that a driver does not produce stay `None`; flagged
/// trials keep their identifiers and the flag only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub flag: Option<String>,
    pub norm: Option<f64>,
    pub norm_bound: Option<f64>,
    pub norm_holds: Option<bool>,
    pub train_loss: Option<f64>,
    /// Population (test) loss: the left side of the bound.
    pub lhs: Option<f64>,
    pub lhs_se: Option<f64>,
    pub rhs_eps0: Option<f64>,
    pub rhs_epshat: Option<f64>,
    pub holds_eps0: Option<bool>,
    pub holds_epshat: Option<bool>,
    pub extra: BTreeMap<String, f64>,
}

impl TrialRecord {
    pub fn new(point: usize, trial: usize, seed: u64, n: usize, d: usize) -> Self {
        Self {
            point,
            trial,
            seed,
            n,
            d,
            ..Default::default()
        }
    }

    pub fn flagged(mut self, reason: impl Into<String>) -> Self {
        self.flag = Some(reason.into());
        self
    }

    pub fn is_flagged(&self) -> bool {
        self.flag.is_some()
    }

    /// Sets the bound sides and both hold flags from `lhs`.
    pub fn set_bounds(&mut self, lhs: f64, rhs_eps0: f64, rhs_epshat: f64) {
        self.lhs = Some(lhs);
        self.rhs_eps0 = Some(rhs_eps0);
        self.rhs_epshat = Some(rhs_epshat);
        self.holds_eps0 = Some(lhs <= rhs_eps0);
        self.holds_epshat = Some(lhs <= rhs_epshat);
    }

    pub fn set_norm(&mut self, norm: f64, bound: f64) {
        self.norm = Some(norm);
        self.norm_bound = Some(bound);
        self.norm_holds = Some(norm <= bound);
    }

    pub fn put(&mut self, key: &str, v: f64) {
        self.extra.insert(key.to_string(), v);
    }

    pub fn slack(&self) -> Option<f64> {
        Some(self.rhs_epshat? - self.lhs?)
    }
}

/// Aggregates of one grid point, recomputable from its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: usize,
    pub n: usize,
    pub d: usize,
    pub total: usize,
    pub completed: usize,
    pub excluded: usize,
    pub hold_frac_eps0: Option<f64>,
    pub hold_frac_epshat: Option<f64>,
    pub norm_hold_frac: Option<f64>,
    pub mean_lhs: Option<f64>,
    pub median_lhs: Option<f64>,
    pub median_rhs_eps0: Option<f64>,
    pub median_rhs_epshat: Option<f64>,
    /// Medians of the per-trial extra columns.
    pub medians: BTreeMap<String, f64>,
    /// Quantities shared by the point's trials (`ε̂`, `c`, `L(w♯)`, ...).
    pub params: BTreeMap<String, f64>,
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len();
    Some(if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) })
}

fn frac(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let v: Vec<bool> = flags.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().filter(|b| **b).count() as f64 / v.len() as f64)
    }
}

impl PointSummary {
    pub fn from_records(point: usize, records: &[TrialRecord], params: BTreeMap<String, f64>) -> Self {
        let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.point == point).collect();
        let done: Vec<&TrialRecord> = mine.iter().copied().filter(|r| !r.is_flagged()).collect();
        let col = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> Vec<f64> { done.iter().filter_map(|r| f(r)).collect() };
        let lhs = col(&|r| r.lhs);
        let keys: BTreeSet<&String> = done.iter().flat_map(|r| r.extra.keys()).collect();
        let medians = keys
            .into_iter()
            .filter_map(|k| {
                let v: Vec<f64> = done.iter().filter_map(|r| r.extra.get(k).copied()).collect();
                median(&v).map(|m| (k.clone(), m))
            })
            .collect();
        Self {
            point,
            n: mine.first().map(|r| r.n).unwrap_or(0),
            d: mine.first().map(|r| r.d).unwrap_or(0),
            total: mine.len(),
            completed: done.len(),
            excluded: mine.len() - done.len(),
            hold_frac_eps0: frac(done.iter().map(|r| r.holds_eps0)),
            hold_frac_epshat: frac(done.iter().map(|r| r.holds_epshat)),
            norm_hold_frac: frac(done.iter().map(|r| r.norm_holds)),
            mean_lhs: if lhs.is_empty() {
                None
            } else {
                Some(lhs.iter().sum::<f64>() / lhs.len() as f64)
            },
            median_lhs: median(&lhs),
            median_rhs_eps0: median(&col(&|r| r.rhs_eps0)),
            median_rhs_epshat: median(&col(&|r| r.rhs_epshat)),
            medians,
            params,
        }
    }

    /// Fraction of completed trials whose extra column `key` is nonzero.
    pub fn extra_frac(&self, records: &[TrialRecord], key: &str) -> Option<f64> {
        frac(records
            .iter()
            .filter(|r| r.point == self.point && !r.is_flagged())
            .map(|r| r.extra.get(key).map(|v| *v != 0.0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub artifact: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub points: Vec<PointSummary>,
    pub records: Vec<TrialRecord>,
    /// Experiment-level scalars (moment gap, pass flags, ...).
    pub summary: BTreeMap<String, f64>,
    pub timings: Vec<StageTiming>,
}

impl ExperimentReport {
    pub(crate) fn new(experiment: &str, opts: RunOptions, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            artifact: ARTIFACT.into(),
            version: VERSION.into(),
            experiment: experiment.into(),
            seed: opts.seed,
            workers: opts.workers,
            config: serde_json::to_value(config)?,
            points: Vec::new(),
            records: Vec::new(),
            summary: BTreeMap::new(),
            timings: Vec::new(),
        })
    }

    pub fn point(&self, i: usize) -> &PointSummary {
        &self.points[i]
    }

    pub fn excluded(&self) -> usize {
        self.records.iter().filter(|r| r.is_flagged()).count()
    }

    pub fn records_at(&self, point: usize) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(move |r| r.point == point)
    }

    /// Appends a point's records and its summary.
    pub(crate) fn push_point(&mut self, point: usize, records: Vec<TrialRecord>, params: BTreeMap<String, f64>) {
        let summary = PointSummary::from_records(point, &records, params);
        self.records.extend(records);
        self.points.push(summary);
    }

    pub(crate) fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-trial CSV: `#` provenance lines, then fixed columns followed by
    /// the sorted union of extra columns. Floats use the shortest
    /// round-trip decimal form; missing values are empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {} {}", self.artifact, self.version)?;
        writeln!(out, "# experiment={} seed={}", self.experiment, self.seed)?;
        writeln!(out, "# config={}", serde_json::to_string(&self.config)?)?;
        let extras: BTreeSet<&String> = self.records.iter().flat_map(|r| r.extra.keys()).collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "experiment", "point", "trial", "seed", "n", "d", "flag", "norm", "norm_bound", "norm_holds", "train_loss",
            "lhs", "lhs_se", "rhs_eps0", "rhs_epshat", "holds_eps0", "holds_epshat", "slack",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(extras.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let b = |v: Option<bool>| v.map(|x| if x { "1" } else { "0" }.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![
                self.experiment.clone(),
                r.point.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.n.to_string(),
                r.d.to_string(),
                r.flag.clone().unwrap_or_default(),
                f(r.norm),
                f(r.norm_bound),
                b(r.norm_holds),
                f(r.train_loss),
                f(r.lhs),
                f(r.lhs_se),
                f(r.rhs_eps0),
                f(r.rhs_epshat),
                b(r.holds_eps0),
                b(r.holds_epshat),
                f(r.slack()),
            ];
            row.extend(extras.iter().map(|k| f(r.extra.get(*k).copied())));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }

    /// Writes `report.json`, `trials.csv` and, if asked, `plots/*.svg`.
    pub fn write_outputs(&self, dir: &Path, plots: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        self.write_csv(std::fs::File::create(dir.join("trials.csv"))?)?;
        if plots {
            let pdir = dir.join("plots");
            std::fs::create_dir_all(&pdir)?;
            for (name, svg) in plots::render(self) {
                std::fs::write(pdir.join(name), svg)?;
            }
        }
        Ok(())
    }
}

/// Runs `count` independent tasks on a pool of `workers` threads and
/// returns the results in index order.
pub fn run_pool<T: Send>(workers: usize, count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
}

/// Short flag text for an error: its tag.
pub(crate) fn flag_of(e: &Error) -> String {
    e.tag().to_string()
}

/// A JSON experiment config, dispatched on `"experiment"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    BenignLinear(LinearConfig),
    BenignPhase(PhaseConfig),
    BenignRelu(ReluConfig),
    MatrixSensing(MatrixConfig),
    Counterexample(CounterexampleConfig),
    NnBound(NnConfig),
    Concentration(ConcentrationConfig),
}

impl ExperimentConfig {
    /// Parses a strict config; unknown keys are config errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::BenignLinear(_) => "benign_linear",
            Self::BenignPhase(_) => "benign_phase",
            Self::BenignRelu(_) => "benign_relu",
            Self::MatrixSensing(_) => "matrix_sensing",
            Self::Counterexample(_) => "counterexample",
            Self::NnBound(_) => "nn_bound",
            Self::Concentration(_) => "concentration",
        }
    }

    pub fn run(&self, opts: RunOptions) -> Result<ExperimentReport> {
        match self {
            Self::BenignLinear(c) => run_benign_linear(c, opts),
            Self::BenignPhase(c) => run_benign_phase(c, opts),
            Self::BenignRelu(c) => run_benign_relu(c, opts),
            Self::MatrixSensing(c) => run_matrix_sensing(c, opts),
            Self::Counterexample(c) => run_counterexample(c, opts),
            Self::NnBound(c) => run_nn_bound(c, opts),
            Self::Concentration(c) => run_concentration_suite(c, opts),
        }
    }
}

pub(crate) fn default_delta() -> f64 {
    crate::bounds::DEFAULT_DELTA
}

pub(crate) fn default_test_draws() -> usize {
    DEFAULT_TEST_DRAWS
}

pub(crate) fn default_eps_trials() -> usize {
    200
}
