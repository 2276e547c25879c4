//! Empirical stand-ins for the uniform-convergence slack `ε` and the
//! hypercontractivity ratio `τ`, both computed in the low-dimensional
//! projected law of `(⟨w, x⟩ + b, y)`.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::order_quantile;
use crate::losses::LossSpec;
use crate::models::{CounterexampleModel, MultiIndexModel, ProjectedPredictor};
use crate::rng::{self, streams};

/// Draws used for the population side of `1 − L̂/L`.
const POP_DRAWS: usize = 200_000;
const MIN_TRIALS: usize = 100;
const MIN_TAU_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsEstimate {
    pub eps_hat: f64,
    /// `(1 − δ)`-quantile before clipping to `[0, 1)`.
    pub raw_quantile: f64,
    pub delta: f64,
    pub n: usize,
    pub trials: usize,
    pub grid_points: usize,
    pub skipped_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCandidate {
    pub pred: ProjectedPredictor,
    pub loss: LossSpec,
}

/// `c = a·1_k` for `a ∈ {−2, −1.5, …, 2}`, `G`-scale `∈ {0, .5, 1, 1.5, 2}·s`
/// and offset `∈ {−1, 0, 1}·s`, with `s` the standard deviation of
/// `Σ_j η_j`: 135 predictors.
pub fn default_projected_grid(model: &MultiIndexModel) -> Vec<ProjectedPredictor> {
    let k = model.k();
    let ones = DVector::from_element(k, 1.0);
    let m = model.w.transpose() * model.sigma.mul_mat(&model.w);
    let mut scale = ones.dot(&(&m * &ones)).max(0.0).sqrt();
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let mut grid = Vec::with_capacity(135);
    for ia in 0..9 {
        let a = -2.0 + 0.5 * ia as f64;
        for ip in 0..5 {
            for io in 0..3 {
                grid.push(ProjectedPredictor {
                    coeffs: &ones * a,
                    offset: (io as f64 - 1.0) * scale,
                    perp_scale: 0.5 * ip as f64 * scale,
                });
            }
        }
    }
    grid
}

/// Sup over candidates of `1 − L̂/L` per trial, then the `(1 − δ)`
/// quantile over trials. `pop[j]` is `L` for candidate `j`; `trial(t)`
/// returns the `L̂` vector of trial `t`.
fn eps_from_trials(
    pop: &[f64],
    n: usize,
    trials: usize,
    delta: f64,
    trial: impl Fn(usize) -> Vec<f64> + Sync,
) -> Result<EpsEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::domain(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("delta = {delta} outside (0, 1)")));
    }
    let live: Vec<usize> = (0..pop.len()).filter(|&j| pop[j] > 0.0 && pop[j].is_finite()).collect();
    if live.is_empty() {
        return Err(Error::domain("every grid point has zero population loss"));
    }
    let mut sups: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let emp = trial(t);
            live.iter()
                .map(|&j| 1.0 - emp[j] / pop[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let q = order_quantile(&mut sups, 1.0 - delta);
    Ok(EpsEstimate {
        eps_hat: q.clamp(0.0, 1.0 - 1e-9),
        raw_quantile: q,
        delta,
        n,
        trials,
        grid_points: pop.len(),
        skipped_points: pop.len() - live.len(),
    })
}

/// `ε̂` for `loss` over [`default_projected_grid`].
pub fn estimate_eps(
    model: &MultiIndexModel,
    loss: &LossSpec,
    n: usize,
    trials: usize,
    delta: f64,
    seed: u64,
) -> Result<EpsEstimate> {
    let candidates: Vec<ProjectedCandidate> = default_projected_grid(model)
        .into_iter()
        .map(|pred| ProjectedCandidate { pred, loss: loss.clone() })
        .collect();
    estimate_eps_grid(model, &candidates, n, trials, delta, seed)
}

/// `ε̂` over an explicit list of (projected predictor, loss) pairs.
pub fn estimate_eps_grid(
    model: &MultiIndexModel,
    candidates: &[ProjectedCandidate],
    n: usize,
    trials: usize,
    delta: f64,
    seed: u64,
) -> Result<EpsEstimate> {
    if candidates.is_empty() || n == 0 {
        return Err(Error::domain("need a nonempty grid and n > 0"));
    }
    let mut prng = rng::stream(seed, streams::TEST);
    let pool = model.draw_projected(POP_DRAWS, &mut prng);
    for y in &pool.y {
        candidates[0].loss.check_label(*y)?;
    }
    let pop: Vec<f64> = candidates.par_iter().map(|c| pool.mean_loss(&c.pred, &c.loss).mean).collect();
    eps_from_trials(&pop, n, trials, delta, |t| {
        let mut r = rng::stream(rng::trial_seed(seed, 1, t), streams::DATA);
        let draws = model.draw_projected(n, &mut r);
        candidates.iter().map(|c| draws.mean_loss(&c.pred, &c.loss).mean).collect()
    })
}

struct CounterDraws {
    head_dot: Vec<Vec<f64>>,
    h: Vec<f64>,
    y: Vec<f64>,
    g: Vec<f64>,
}

fn counter_draws(cm: &CounterexampleModel, coeffs: &[DVector<f64>], m: usize, rng: &mut rng::StreamRng) -> CounterDraws {
    let mut z = vec![0.0; cm.k];
    let mut head = vec![0.0; cm.k];
    let mut out = CounterDraws {
        head_dot: vec![Vec::with_capacity(m); coeffs.len()],
        h: Vec::with_capacity(m),
        y: Vec::with_capacity(m),
        g: Vec::with_capacity(m),
    };
    for _ in 0..m {
        cm.draw_head(rng, &mut z, &mut head);
        let h = cm.h(&head);
        for (c, dst) in coeffs.iter().zip(out.head_dot.iter_mut()) {
            dst.push(c.iter().zip(&head).map(|(a, b)| a * b).sum());
        }
        out.y.push(cm.g(&head, h));
        out.h.push(h);
        out.g.push(StandardNormal.sample(rng));
    }
    out
}

/// `ε̂` for the `h²`-weighted square loss of the counterexample, over
/// predictors `⟨w_{|k}, x_{|k}⟩ + h·s·G` with `w_{|k} = a·1_k`,
/// `a ∈ {−4, −3, …, 4}` and `s ∈ {0, .5, 1, 1.5, 2}`.
pub fn estimate_eps_counterexample(
    cm: &CounterexampleModel,
    n: usize,
    trials: usize,
    delta: f64,
    seed: u64,
) -> Result<EpsEstimate> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let coeffs: Vec<DVector<f64>> = (0..9).map(|i| DVector::from_element(cm.k, i as f64 - 4.0)).collect();
    let scales = [0.0, 0.5, 1.0, 1.5, 2.0];
    let weighted = |d: &CounterDraws| -> Vec<f64> {
        let m = d.y.len() as f64;
        let mut out = Vec::with_capacity(coeffs.len() * scales.len());
        for hd in &d.head_dot {
            for &s in &scales {
                let tot: f64 = (0..d.y.len())
                    .map(|i| {
                        let r = hd[i] + d.h[i] * s * d.g[i] - d.y[i];
                        r * r / (d.h[i] * d.h[i])
                    })
                    .sum();
                out.push(tot / m);
            }
        }
        out
    };
    let mut prng = rng::stream(seed, streams::TEST);
    let pop = weighted(&counter_draws(cm, &coeffs, POP_DRAWS, &mut prng));
    eps_from_trials(&pop, n, trials, delta, |t| {
        let mut r = rng::stream(rng::trial_seed(seed, 1, t), streams::DATA);
        weighted(&counter_draws(cm, &coeffs, n, &mut r))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEstimate {
    pub tau_hat: f64,
    /// Index of the maximizing grid point.
    pub argmax: usize,
    pub ratios: Vec<Option<f64>>,
    pub draws: usize,
}

/// Monte Carlo `max` over `w_grid` of `E[f⁴]^{1/4} / E[f]`; points with
/// `E f = 0` are skipped.
pub fn estimate_tau(
    loss: &LossSpec,
    model: &MultiIndexModel,
    w_grid: &[ProjectedPredictor],
    m: usize,
    seed: u64,
) -> Result<TauEstimate> {
    if w_grid.is_empty() {
        return Err(Error::domain("predictor grid is empty"));
    }
    if m < MIN_TAU_DRAWS {
        return Err(Error::domain(format!("need m ≥ {MIN_TAU_DRAWS}, got {m}")));
    }
    let mut r = rng::stream(seed, streams::AUX);
    let draws = model.draw_projected(m, &mut r);
    for y in &draws.y {
        loss.check_label(*y)?;
    }
    let ratios: Vec<Option<f64>> = w_grid
        .par_iter()
        .map(|p| {
            let (mut s1, mut s4) = (0.0, 0.0);
            for i in 0..draws.len() {
                let f = loss.value(p.predict(&draws, i), draws.y[i]);
                s1 += f;
                s4 += f * f * f * f;
            }
            let mf = s1 / m as f64;
            if mf > 0.0 {
                Some((s4 / m as f64).powf(0.25) / mf)
            } else {
                None
            }
        })
        .collect();
    let (argmax, tau_hat) = ratios
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|v| (i, v)))
        .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if argmax == usize::MAX {
        return Err(Error::domain("E[f] = 0 at every grid point"));
    }
    Ok(TauEstimate {
        tau_hat,
        argmax,
        ratios,
        draws: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Covariance, Link, Noise};

    fn linear_model(d: usize, std: f64) -> MultiIndexModel {
        MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(d, 1.0)),
            1.0,
            Link::LinearNoise,
            Noise::Gaussian { std },
        )
        .unwrap()
    }

    fn well_specified() -> ProjectedPredictor {
        ProjectedPredictor::index_only(DVector::from_element(1, 1.0), 0.0)
    }

    #[test]
    fn eps_vanishes_for_large_n() {
        let model = linear_model(4, 1.0);
        let e = estimate_eps(&model, &LossSpec::square(), 100_000, 100, 0.05, 3).unwrap();
        assert!(e.eps_hat <= 0.05, "{e:?}");
        assert_eq!(e.grid_points, 135);
    }

    #[test]
    fn eps_zero_for_deterministic_losses() {
        let model = MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(3, 1.0)),
            1.0,
            Link::LinearNoise,
            Noise::Discrete {
                values: vec![1.0],
                probs: vec![1.0],
            },
        )
        .unwrap();
        let cand = ProjectedCandidate {
            pred: well_specified(),
            loss: LossSpec::square(),
        };
        let e = estimate_eps_grid(&model, &[cand], 50, 100, 0.05, 0).unwrap();
        assert_eq!(e.eps_hat, 0.0);
    }

    #[test]
    fn eps_is_seed_reproducible() {
        let model = linear_model(4, 1.0);
        let a = estimate_eps(&model, &LossSpec::square(), 100, 100, 0.05, 17).unwrap();
        let b = estimate_eps(&model, &LossSpec::square(), 100, 100, 0.05, 17).unwrap();
        assert_eq!(a, b);
        assert!(a.eps_hat > 0.0 && a.eps_hat < 1.0);
    }

    #[test]
    fn eps_rejects_degenerate_inputs() {
        let model = linear_model(4, 1.0);
        assert!(estimate_eps(&model, &LossSpec::square(), 100, 10, 0.05, 0).is_err());
        let noiseless = linear_model(4, 0.0);
        let cand = ProjectedCandidate {
            pred: well_specified(),
            loss: LossSpec::square(),
        };
        assert!(matches!(
            estimate_eps_grid(&noiseless, &[cand], 20, 100, 0.05, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn tau_constant_loss_is_one() {
        let model = MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(3, 1.0)),
            1.0,
            Link::LinearNoise,
            Noise::Discrete {
                values: vec![2.0],
                probs: vec![1.0],
            },
        )
        .unwrap();
        let t = estimate_tau(&LossSpec::square(), &model, &[well_specified()], 10_000, 0).unwrap();
        assert!((t.tau_hat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tau_gaussian_residual() {
        let model = linear_model(3, 0.7);
        let t = estimate_tau(&LossSpec::square(), &model, &[well_specified()], 1_000_000, 5).unwrap();
        let exact = 105f64.powf(0.25);
        assert!((t.tau_hat / exact - 1.0).abs() < 0.02, "{}", t.tau_hat);
    }

    #[test]
    fn tau_at_least_one_and_skips_zero_points() {
        let model = linear_model(3, 0.0);
        let grid = default_projected_grid(&model);
        let t = estimate_tau(&LossSpec::square(), &model, &grid, 10_000, 1).unwrap();
        assert!(t.tau_hat >= 1.0);
        assert!(t.ratios.iter().flatten().all(|r| *r >= 1.0 - 1e-12));
        // a = 1, no G, no offset interpolates exactly
        assert!(t.ratios.iter().any(|r| r.is_none()));
        assert!(estimate_tau(&LossSpec::square(), &model, &grid, 100, 1).is_err());
    }

    #[test]
    fn counterexample_eps_in_range() {
        let cm = CounterexampleModel::standard(10).unwrap();
        let e = estimate_eps_counterexample(&cm, 400, 100, 0.05, 2).unwrap();
        assert!(e.eps_hat >= 0.0 && e.eps_hat < 1.0);
        assert_eq!(e.grid_points, 45);
    }
}
