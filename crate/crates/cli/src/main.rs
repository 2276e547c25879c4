use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use optirate::bounds;
use optirate::harness::{self, ExperimentConfig, ExperimentReport, RunOptions};
use optirate::interpolants::{self, AdmmParams, InterpolantSolution};
use optirate::models::{sample_matrix_sensing, ModelConfig};
use optirate::{Error, Grid, LossSpec, Result};

#[derive(Parser)]
#[command(name = "optirate", version, about = "Optimistic-rate bounds laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Also write plots/*.svg.
    #[arg(long)]
    plots: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check both envelope characterizations of a catalog loss on a grid.
    Losscheck {
        #[arg(long)]
        loss: String,
        /// Label; defaults to 1 (classification losses use ±1).
        #[arg(long, default_value_t = 1.0)]
        label: f64,
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 10.0)]
        hi: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a multi-index model to CSV.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a problem and fit an interpolant; writes solution.json.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate one bound formula; prints the result.
    Bound {
        #[arg(long)]
        op: String,
        /// JSON object of named arguments.
        #[arg(long)]
        args: String,
    },
    /// Run an experiment suite from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the concentration self-tests (config optional).
    Concentration {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a saved report.json; re-renders plots with --plots.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

fn strict<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn workers(common: &Common) -> usize {
    common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

fn provenance(seed: Option<u64>, config: &Value) -> Value {
    json!({
        "artifact": harness::ARTIFACT,
        "version": harness::VERSION,
        "seed": seed,
        "config": config,
    })
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn losscheck(loss: &str, label: f64, lo: f64, hi: f64, step: f64, common: &Common) -> Result<()> {
    let spec = LossSpec::from_name(loss).map_err(|e| match e {
        Error::Domain(m) => Error::Config(m),
        e => e,
    })?;
    let grid = Grid::new(lo, hi, step)?;
    let lambdas: Vec<f64> = (1..=100).map(|i| i as f64 * 0.1).collect();
    let rep = spec.check_envelope_inequalities(&lambdas, &grid, label)?;
    let cfg = json!({"loss": loss, "label": label, "lo": lo, "hi": hi, "step": step});
    let mut v = provenance(None, &cfg);
    v["report"] = serde_json::to_value(&rep).map_err(|e| Error::Config(e.to_string()))?;
    let ok = |x: Option<f64>| x.map_or(true, |v| v <= 1e-8);
    v["holds"] = json!(ok(rep.sqrt_lip_violation) && ok(rep.lipschitz_violation));
    write_json(&out_dir(common)?.join("losscheck.json"), &v)?;
    println!("{}", serde_json::to_string(&v["report"]).expect("serializable"));
    Ok(())
}

fn gen(config: &Path, seed: u64, n: usize, common: &Common) -> Result<()> {
    let text = read(config)?;
    let mc: ModelConfig = strict(&text)?;
    let model = mc.build()?;
    let data = model.sample(n, seed);
    let mut buf = Vec::new();
    let echo: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    buf.extend(format!("# {} {}\n# seed={} n={}\n# config={}\n", harness::ARTIFACT, harness::VERSION, seed, n, echo).bytes());
    data.write_csv(&mut buf)?;
    fs::write(out_dir(common)?.join("samples.csv"), buf)?;
    Ok(())
}

#[derive(Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
enum Solver {
    MinNormLinear,
    PhaseConstruct,
    PhaseBrute,
    ReluConstruct,
    ReluMinNormQp,
}

#[derive(Deserialize, Serialize)]
#[serde(tag = "problem", rename_all = "snake_case", deny_unknown_fields)]
enum FitConfig {
    /// `phase_construct` / `relu_construct` start from `w♯ = Σ_j w*_j`.
    MultiIndex {
        model: ModelConfig,
        n: usize,
        solver: Solver,
        #[serde(default)]
        bias: f64,
    },
    MatrixSensing {
        d1: usize,
        d2: usize,
        r: usize,
        n: usize,
        sigma: f64,
        #[serde(default = "one")]
        xstar_fro: f64,
        #[serde(default)]
        admm: AdmmParams,
    },
}

fn one() -> f64 {
    1.0
}

fn fit(config: &Path, seed: u64, common: &Common) -> Result<()> {
    let text = read(config)?;
    let fc: FitConfig = strict(&text)?;
    let sol: InterpolantSolution = match &fc {
        FitConfig::MultiIndex { model, n, solver, bias } => {
            let model = model.build()?;
            let data = model.sample(*n, seed);
            let y = data.y_vec();
            let ws = model.index_sum();
            match solver {
                Solver::MinNormLinear => interpolants::min_norm_linear(&data.xt, &y)?,
                Solver::PhaseConstruct => interpolants::phase_construct(&data.xt, &y, &ws)?,
                Solver::PhaseBrute => interpolants::phase_brute(&data.xt, &y)?,
                Solver::ReluConstruct => interpolants::relu_construct(&data.xt, &y, &ws, *bias)?,
                Solver::ReluMinNormQp => interpolants::relu_min_norm_qp(&data.xt, &y, *bias)?,
            }
        }
        FitConfig::MatrixSensing { d1, d2, r, n, sigma, xstar_fro, admm } => {
            let inst = sample_matrix_sensing(*d1, *d2, *r, *n, *sigma, *xstar_fro, seed)?;
            interpolants::nuclear_min(&inst, admm)?
        }
    };
    let echo: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let mut v = provenance(Some(seed), &echo);
    v["solution"] = serde_json::from_str(&sol.to_json()?).map_err(|e| Error::Config(e.to_string()))?;
    write_json(&out_dir(common)?.join("solution.json"), &v)?;
    println!("{} norm={:?}", v["solution"]["kind"].as_str().unwrap_or("solution"), sol.norm);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimisticArgs {
    train_loss: f64,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "C")]
    c: f64,
    n: usize,
    #[serde(default)]
    eps_hat: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseNormArgs {
    w_sharp_norm: f64,
    l_pop: f64,
    n: usize,
    trace_perp: f64,
    #[serde(default)]
    eps_hat: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearNormArgs {
    xi_norm_sq: f64,
    trace: f64,
    #[serde(default)]
    eps_hat: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixNormArgs {
    r: usize,
    xstar_fro: f64,
    n: usize,
    sigma_sq: f64,
    d1: usize,
    d2: usize,
    #[serde(default)]
    eps_hat: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsistencyArgs {
    r: usize,
    d1: usize,
    d2: usize,
    n: usize,
    sigma: f64,
    xstar_fro: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NnArgs {
    a: Vec<f64>,
    b: Vec<f64>,
    w_norm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightedArgs {
    train_weighted_loss: f64,
    #[serde(rename = "C_tail")]
    c_tail: f64,
    n: usize,
    #[serde(default)]
    eps_hat: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NuclearArgs {
    d1: usize,
    d2: usize,
    delta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GapArgs {
    a: f64,
    b: f64,
    #[serde(rename = "H", default)]
    h: Option<f64>,
}

const OPS: &str = "optimistic_rhs, norm_bound_phase, norm_bound_linear, norm_bound_matrix, consistency_rhs_matrix, \
nn_complexity, weighted_optimistic_rhs, c_delta_nuclear, sup_envelope_gap, sup_lipschitz_gap";

fn bound(op: &str, args: &str) -> Result<String> {
    let scalar = |v: f64| format!("{v:?}");
    Ok(match op {
        "optimistic_rhs" => {
            let a: OptimisticArgs = strict(args)?;
            scalar(bounds::optimistic_rhs(a.train_loss, a.h, a.c, a.n, a.eps_hat)?)
        }
        "norm_bound_phase" => {
            let a: PhaseNormArgs = strict(args)?;
            scalar(bounds::norm_bound_phase(a.w_sharp_norm, a.l_pop, a.n, a.trace_perp, a.eps_hat)?)
        }
        "norm_bound_linear" => {
            let a: LinearNormArgs = strict(args)?;
            scalar(bounds::norm_bound_linear(a.xi_norm_sq, a.trace, a.eps_hat)?)
        }
        "norm_bound_matrix" => {
            let a: MatrixNormArgs = strict(args)?;
            scalar(bounds::norm_bound_matrix(a.r, a.xstar_fro, a.n, a.sigma_sq, a.d1, a.d2, a.eps_hat)?)
        }
        "consistency_rhs_matrix" => {
            let a: ConsistencyArgs = strict(args)?;
            let t = bounds::consistency_rhs_matrix(a.r, a.d1, a.d2, a.n, a.sigma, a.xstar_fro)?;
            serde_json::to_string(&t).map_err(|e| Error::Config(e.to_string()))?
        }
        "nn_complexity" => {
            let a: NnArgs = strict(args)?;
            scalar(bounds::nn_complexity(&a.a, &a.b, a.w_norm)?)
        }
        "weighted_optimistic_rhs" => {
            let a: WeightedArgs = strict(args)?;
            scalar(bounds::weighted_optimistic_rhs(a.train_weighted_loss, a.c_tail, a.n, a.eps_hat)?)
        }
        "c_delta_nuclear" => {
            let a: NuclearArgs = strict(args)?;
            scalar(bounds::c_delta_nuclear(a.d1, a.d2, a.delta)?)
        }
        "sup_envelope_gap" => {
            let a: GapArgs = strict(args)?;
            let h = a.h.ok_or_else(|| Error::Config("missing field `H`".into()))?;
            scalar(bounds::sup_envelope_gap(a.a, a.b, h))
        }
        "sup_lipschitz_gap" => {
            let a: GapArgs = strict(args)?;
            scalar(bounds::sup_lipschitz_gap(a.a, a.b))
        }
        other => return Err(Error::Config(format!("unknown op `{other}`; expected one of: {OPS}"))),
    })
}

fn run_report(rep: &ExperimentReport, common: &Common) -> Result<()> {
    rep.write_outputs(&out_dir(common)?, common.plots)?;
    print_summary(rep);
    Ok(())
}

fn print_summary(rep: &ExperimentReport) {
    println!("{} seed={} workers={} excluded={}", rep.experiment, rep.seed, rep.workers, rep.excluded());
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for p in &rep.points {
        println!(
            "point {} n={} d={} completed={}/{} hold_eps0={} hold_epshat={} norm_hold={} median_lhs={} median_rhs_epshat={}",
            p.point,
            p.n,
            p.d,
            p.completed,
            p.total,
            f(p.hold_frac_eps0),
            f(p.hold_frac_epshat),
            f(p.norm_hold_frac),
            f(p.median_lhs),
            f(p.median_rhs_epshat),
        );
    }
    for (k, v) in &rep.summary {
        println!("{k}={v:?}");
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Losscheck { loss, label, lo, hi, step, common } => losscheck(&loss, label, lo, hi, step, &common),
        Cmd::Gen { config, seed, n, common } => gen(&config, seed, n, &common),
        Cmd::Fit { config, seed, common } => fit(&config, seed, &common),
        Cmd::Bound { op, args } => {
            println!("{}", bound(&op, &args)?);
            Ok(())
        }
        Cmd::Experiment { config, seed, common } => {
            let cfg = ExperimentConfig::from_json(&read(&config)?)?;
            let rep = cfg.run(RunOptions::new(seed, workers(&common)))?;
            run_report(&rep, &common)
        }
        Cmd::Concentration { config, seed, common } => {
            let cfg: harness::ConcentrationConfig = match config {
                Some(p) => {
                    let text = read(&p)?;
                    match ExperimentConfig::from_json(&text) {
                        Ok(ExperimentConfig::Concentration(c)) => c,
                        Ok(other) => return Err(Error::Config(format!("expected a concentration config, got {}", other.name()))),
                        Err(_) => strict(&text)?,
                    }
                }
                None => Default::default(),
            };
            let rep = harness::run_concentration_suite(&cfg, RunOptions::new(seed, workers(&common)))?;
            run_report(&rep, &common)
        }
        Cmd::Report { input, common } => {
            let rep: ExperimentReport = strict(&read(&input)?)?;
            if common.plots || common.out.is_some() {
                rep.write_outputs(&out_dir(&common)?, common.plots)?;
            }
            print_summary(&rep);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({"error": e.tag(), "exit": e.exit_code(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
