use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use optirate::interpolants::{min_norm_linear, nuclear_min, AdmmParams};
use optirate::losses::LossSpec;
use optirate::models::sample_matrix_sensing;

fn pseudo(i: usize, j: usize) -> f64 {
    // cheap deterministic fill, roughly centered
    let h = (i.wrapping_mul(2654435761) ^ j.wrapping_mul(40503)) % 1000;
    h as f64 / 500.0 - 1.0
}

fn envelope(c: &mut Criterion) {
    let loss = LossSpec::phase_retrieval();
    c.bench_function("moreau_envelope_phase", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for i in 0..200 {
                let yhat = -5.0 + 0.05 * i as f64;
                s += loss.moreau_envelope(black_box(0.5), yhat, 1.3).unwrap();
            }
            s
        })
    });
}

fn min_norm(c: &mut Criterion) {
    let (d, n) = (2000, 200);
    let xt = DMatrix::from_fn(d, n, pseudo);
    let t = DVector::from_fn(n, |i, _| pseudo(i, 7));
    c.bench_function("min_norm_linear_2000x200", |b| b.iter(|| min_norm_linear(black_box(&xt), &t).unwrap()));
}

fn admm(c: &mut Criterion) {
    let inst = sample_matrix_sensing(10, 20, 2, 150, 0.1, 1.0, 5).unwrap();
    let params = AdmmParams::default();
    let mut g = c.benchmark_group("admm");
    g.sample_size(10);
    g.bench_function("nuclear_min_10x20", |b| b.iter(|| nuclear_min(black_box(&inst), &params).unwrap()));
    g.finish();
}

criterion_group!(kernels, envelope, min_norm, admm);
criterion_main!(kernels);
