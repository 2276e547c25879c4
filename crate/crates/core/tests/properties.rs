//! Cross-module invariants checked against independent computations.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use optirate::bounds::{self, nn_complexity, optimistic_rhs};
use optirate::harness::{run_matrix_sensing, MatrixConfig, MatrixPoint, RunOptions};
use optirate::interpolants::{min_norm_linear, nuclear_min, phase_construct, relu_construct, AdmmParams};
use optirate::models::{
    sample_counterexample, sample_matrix_sensing, Covariance, CounterexampleModel, Link, ModelGeometry, MultiIndexModel, Noise,
};
use optirate::rng::{self, StreamRng};
use optirate::{Grid, LossSpec};

fn gaussian(rows: usize, cols: usize, r: &mut StreamRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

fn normal(r: &mut StreamRng) -> f64 {
    StandardNormal.sample(r)
}

fn random_cov(d: usize, dense: bool, r: &mut StreamRng) -> Covariance {
    if dense {
        let a = gaussian(d, d, r);
        let m = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1;
        Covariance::dense(m).unwrap()
    } else {
        Covariance::Diagonal(DVector::from_fn(d, |_, _| r.random_range(0.1..3.0)))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn projection_identities(seed in any::<u64>(), d in 3usize..=50, k_raw in 1usize..=5, dense in any::<bool>()) {
        let k = k_raw.min(d - 1);
        let mut r = rng::stream(seed, 0);
        let sigma = random_cov(d, dense, &mut r);
        let w = gaussian(d, k, &mut r);
        let g = ModelGeometry::new(&sigma, &w).unwrap();
        let q = g.q_dense().unwrap();
        let s = sigma.to_dense();
        let scale = 1.0 + s.amax();
        prop_assert!((&q * &q - &q).amax() < 1e-8 * scale);
        prop_assert!((q.transpose() * &s * &w).amax() < 1e-8 * scale * (1.0 + w.amax()));
        // Σ⊥ = QᵀΣQ and its trace
        let sp = q.transpose() * &s * &q;
        prop_assert!((&sp - g.sigma_perp_dense().unwrap()).amax() < 1e-8 * scale);
        prop_assert!((sp.trace() - g.trace_perp).abs() < 1e-8 * scale * d as f64);
    }

    #[test]
    fn optimistic_rhs_is_monotone(
        l in 0.0f64..5.0, h in 0.0f64..5.0, c in 0.0f64..50.0, n in 1usize..5000, eps in 0.0f64..0.9,
        dl in 0.0f64..1.0, dh in 0.0f64..1.0, dc in 0.0f64..5.0, de in 0.0f64..0.09,
    ) {
        let base = optimistic_rhs(l, h, c, n, eps).unwrap();
        prop_assert!(optimistic_rhs(l + dl, h, c, n, eps).unwrap() >= base);
        prop_assert!(optimistic_rhs(l, h + dh, c, n, eps).unwrap() >= base);
        prop_assert!(optimistic_rhs(l, h, c + dc, n, eps).unwrap() >= base);
        prop_assert!(optimistic_rhs(l, h, c, n, eps + de).unwrap() >= base);
        let exact = optimistic_rhs(0.0, h, c, n, 0.0).unwrap();
        prop_assert!((exact - h * c * c / n as f64).abs() <= 1e-12 * (1.0 + exact));
    }

    #[test]
    fn nn_complexity_matches_estimated_slope(
        a in proptest::collection::vec(-2.0f64..2.0, 1..=8),
        gaps in proptest::collection::vec(0.05f64..1.0, 8),
        w_norm in 0.1f64..10.0,
        rot in 0usize..8,
    ) {
        let n = a.len();
        let mut b: Vec<f64> = gaps[..n].iter().scan(-3.0, |s, g| { *s += g; Some(*s) }).collect();
        let mut a = a;
        b.rotate_left(rot % n);
        a.rotate_left(rot % n);
        let loss = LossSpec::nn_weightshared(&a, &b).unwrap();
        let grid = Grid::new(-5.0, 10.0, 1e-3).unwrap();
        let est = loss.estimate_sqrt_lip(0.0, &grid).unwrap();
        let c = nn_complexity(&a, &b, w_norm).unwrap();
        prop_assert!((c - est * w_norm).abs() <= 1e-6 * w_norm * (1.0 + est), "{c} vs {}", est * w_norm);
        // pairing order is irrelevant
        let mut ar = a.clone();
        let mut br = b.clone();
        ar.reverse();
        br.reverse();
        prop_assert_eq!(nn_complexity(&ar, &br, w_norm).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn min_norm_is_minimal_and_feasible(seed in any::<u64>(), n in 2usize..15, extra in 1usize..30) {
        let d = n + extra;
        let mut r = rng::stream(seed, 0);
        let xt = gaussian(d, n, &mut r);
        let t = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
        let sol = min_norm_linear(&xt, &t).unwrap();
        let w = sol.w().unwrap();
        prop_assert!((xt.tr_mul(w) - &t).amax() < 1e-6);
        // null-space perturbations: v − X⁺Xv
        for _ in 0..5 {
            let v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
            let back = min_norm_linear(&xt, &xt.tr_mul(&v)).unwrap();
            let other = w + (&v - back.w().unwrap());
            prop_assert!((xt.tr_mul(&other) - &t).amax() < 1e-6);
            prop_assert!(sol.norm <= other.norm() + 1e-10);
        }
    }

    #[test]
    fn constructions_are_feasible(seed in any::<u64>(), n in 2usize..30, extra in 5usize..60) {
        let d = n + extra;
        let model = MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(d, 1.0)),
            1.0,
            Link::MagnitudeNoise,
            Noise::Gaussian { std: 0.5 },
        ).unwrap();
        let data = model.sample(n, seed);
        let y = data.y_vec();
        let ph = phase_construct(&data.xt, &y, &model.index_sum()).unwrap();
        let pred = data.xt.tr_mul(ph.w().unwrap());
        prop_assert!(pred.iter().zip(y.iter()).all(|(p, t)| (p * p - t * t).abs() < 1e-6));

        let relu = MultiIndexModel::single_index(
            Covariance::Diagonal(DVector::from_element(d, 1.0)),
            1.0,
            Link::ReluPointmass { offset: 0.2 },
            Noise::Gaussian { std: 0.5 },
        ).unwrap();
        let data = relu.sample(n, seed);
        let y = data.y_vec();
        let sol = relu_construct(&data.xt, &y, &relu.index_sum(), 0.2).unwrap();
        let pred = data.xt.tr_mul(sol.w().unwrap()).add_scalar(0.2);
        prop_assert!(pred.iter().zip(y.iter()).all(|(p, t)| (p.max(0.0) - t).abs() < 1e-6));
    }
}

/// Empirical covariance of the columns of `xt` with per-entry standard errors.
fn empirical_cov(xt: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, m) = xt.shape();
    let mut cov = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let prods: Vec<f64> = (0..m).map(|t| xt[(i, t)] * xt[(j, t)]).collect();
            let mean = prods.iter().sum::<f64>() / m as f64;
            let var = prods.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (m - 1) as f64;
            cov[(i, j)] = mean;
            cov[(j, i)] = mean;
            se[(i, j)] = (var / m as f64).sqrt();
            se[(j, i)] = se[(i, j)];
        }
    }
    (cov, se)
}

#[test]
fn sample_covariance_matches_sigma() {
    let sigma = Covariance::Diagonal(DVector::from_fn(12, |i, _| 0.5 + i as f64 * 0.25));
    let model = MultiIndexModel::single_index(sigma.clone(), 1.0, Link::LinearNoise, Noise::Gaussian { std: 1.0 }).unwrap();
    let data = model.sample(100_000, 11);
    let (cov, se) = empirical_cov(&data.xt);
    let s = sigma.to_dense();
    for i in 0..12 {
        for j in 0..12 {
            assert!((cov[(i, j)] - s[(i, j)]).abs() <= 5.0 * se[(i, j)], "({i},{j}): {} vs {}", cov[(i, j)], s[(i, j)]);
        }
    }
}

#[test]
fn counterexample_head_and_tail_are_uncorrelated_and_rescaled() {
    let cm = CounterexampleModel::standard(6).unwrap();
    let data = sample_counterexample(&cm, 6, 100_000, 5).unwrap();
    let (cov, se) = empirical_cov(&data.xt);
    // E h² for h = 1 + |g|: 2 + 2√(2/π)
    let eh2 = 2.0 + 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    let tail = cm.sigma_tail.to_dense();
    for j in 1..6 {
        assert!(cov[(0, j)].abs() <= 5.0 * se[(0, j)], "head/tail {j}: {}", cov[(0, j)]);
        for l in 1..6 {
            let want = eh2 * tail[(j - 1, l - 1)];
            assert!((cov[(j, l)] - want).abs() <= 5.0 * se[(j, l)], "tail ({j},{l}): {} vs {want}", cov[(j, l)]);
        }
    }
}

#[test]
fn linear_closed_form_matches_fresh_samples() {
    let d = 15;
    let model = MultiIndexModel::single_index(
        Covariance::Diagonal(DVector::from_fn(d, |i, _| 1.0 / (1.0 + i as f64))),
        1.5,
        Link::LinearNoise,
        Noise::Gaussian { std: 0.7 },
    )
    .unwrap();
    let mut r = rng::stream(3, 9);
    for spot in 0..10 {
        let w = DVector::from_fn(d, |_, _| 0.5 * normal(&mut r));
        let b: f64 = 0.3 * normal(&mut r);
        let exact = model.linear_population_loss(&w, b).unwrap();
        let data = model.sample(40_000, 1000 + spot);
        let res: Vec<f64> = (0..data.n()).map(|i| (data.xt.column(i).dot(&w) + b - data.y[i]).powi(2)).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let var = res.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64;
        let se = (var / res.len() as f64).sqrt();
        assert!((mean - exact).abs() <= 5.0 * se, "spot {spot}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn matrix_closed_form_matches_fresh_measurements() {
    let inst = sample_matrix_sensing(6, 8, 2, 30, 0.4, 1.0, 21).unwrap();
    let mut r = rng::stream(21, 9);
    for spot in 0..10 {
        let x = &inst.x_star + gaussian(6, 8, &mut r) * 0.2;
        let exact = inst.population_loss(&x);
        let m = 40_000;
        let res: Vec<f64> = (0..m)
            .map(|_| {
                let a = gaussian(6, 8, &mut r);
                let xi: f64 = StandardNormal.sample(&mut r);
                let y = a.dot(&inst.x_star) + 0.4 * xi;
                (a.dot(&x) - y).powi(2)
            })
            .collect();
        let mean = res.iter().sum::<f64>() / m as f64;
        let var = res.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - exact).abs() <= 5.0 * se, "spot {spot}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn counterexample_projected_law_matches_direct_samples() {
    let cm = CounterexampleModel::standard(40).unwrap();
    let mut r = rng::stream(8, 9);
    let w = DVector::from_fn(40, |_, _| 0.3 * normal(&mut r));
    let (weighted, plain) = cm.test_losses(&w, 100_000, &mut rng::stream(8, 2));
    let data = sample_counterexample(&cm, 40, 100_000, 19).unwrap();
    let hw = data.weights.as_ref().unwrap();
    let r2: Vec<f64> = (0..data.n()).map(|i| (data.xt.column(i).dot(&w) - data.y[i]).powi(2)).collect();
    let direct = r2.iter().sum::<f64>() / r2.len() as f64;
    let direct_w = r2.iter().zip(hw).map(|(v, h)| v / h).sum::<f64>() / r2.len() as f64;
    assert!((direct - plain.mean).abs() <= 5.0 * plain.std_err * 2f64.sqrt(), "{direct} vs {plain:?}");
    assert!((direct_w - weighted.mean).abs() <= 5.0 * weighted.std_err * 2f64.sqrt(), "{direct_w} vs {weighted:?}");
}

/// Over the final `trace_len` iterations of a run longer than that window.
#[test]
fn admm_objective_settles_monotonically() {
    let params = AdmmParams::default();
    for (d1, d2, n, seed) in [(8, 10, 60, 0), (8, 10, 70, 1), (20, 40, 400, 2)] {
        let inst = sample_matrix_sensing(d1, d2, 2, n, 0.5, 1.0, seed).unwrap();
        let sol = nuclear_min(&inst, &params).unwrap();
        assert!(sol.iterations > params.trace_len, "only {} iterations", sol.iterations);
        assert_eq!(sol.trace.len(), params.trace_len);
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-8, "seed {seed}: {} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn nuclear_norm_bound_rank_one() {
    let cfg = MatrixConfig {
        d1: 20,
        d2: 40,
        r: 1,
        points: vec![MatrixPoint { n: 200, sigma: 1.0 }],
        trials: 100,
        xstar_fro: 1.0,
        eps_hat: 0.25,
        cert_tol: 1e-3,
        delta: 0.05,
        admm: AdmmParams::default(),
    };
    let rep = run_matrix_sensing(&cfg, RunOptions::new(13, 1)).unwrap();
    let p = rep.point(0);
    let bound = bounds::norm_bound_matrix(1, 1.0, 200, 1.0, 20, 40, 0.25).unwrap();
    let holds = rep.records_at(0).filter(|r| r.norm.is_some_and(|v| v <= bound)).count();
    assert_eq!(p.excluded, 0);
    assert!(holds >= 95, "{holds}/100 within {bound}");
}
