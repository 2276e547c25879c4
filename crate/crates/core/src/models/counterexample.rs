//! Non-Gaussian features `x = (x_{|k}, h(x_{|k})·z)` with `z ~ N(0, Σ_tail)`
//! independent of the head, and labels depending on the head only.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::covariance::Covariance;
use super::multi_index::{MeanEstimate, SampleSet, Table};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// The scalar field `h`; both variants read only the first head coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HKind {
    OnePlusAbs,
    Table { table: Table },
}

/// The label map `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GKind {
    HSquared,
    Table { table: Table },
}

#[derive(Debug, Clone)]
pub struct CounterexampleModel {
    pub k: usize,
    pub sigma_k: Covariance,
    pub h_kind: HKind,
    pub g_kind: GKind,
    pub sigma_tail: Covariance,
}

impl CounterexampleModel {
    pub fn new(sigma_k: Covariance, h_kind: HKind, g_kind: GKind, sigma_tail: Covariance) -> Result<Self> {
        if let HKind::Table { table } = &h_kind {
            table.validate()?;
            if table.values.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::domain("h must be positive"));
            }
        }
        if let GKind::Table { table } = &g_kind {
            table.validate()?;
        }
        let k = sigma_k.dim();
        if k == 0 {
            return Err(Error::domain("head dimension must be positive"));
        }
        Ok(Self {
            k,
            sigma_k,
            h_kind,
            g_kind,
            sigma_tail,
        })
    }

    /// `k = 1`, `x₁ ~ N(0, 1)`, `h = 1 + |x₁|`, `y = h²`, identity tail.
    pub fn standard(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::domain("need d > k = 1"));
        }
        Self::new(
            Covariance::Diagonal(DVector::from_element(1, 1.0)),
            HKind::OnePlusAbs,
            GKind::HSquared,
            Covariance::Diagonal(DVector::from_element(d - 1, 1.0)),
        )
    }

    pub fn dim(&self) -> usize {
        self.k + self.sigma_tail.dim()
    }

    #[inline]
    pub fn h(&self, head: &[f64]) -> f64 {
        match &self.h_kind {
            HKind::OnePlusAbs => 1.0 + head[0].abs(),
            HKind::Table { table } => table.eval(head[0]),
        }
    }

    #[inline]
    pub fn g(&self, head: &[f64], h: f64) -> f64 {
        match &self.g_kind {
            GKind::HSquared => h * h,
            GKind::Table { table } => table.eval(head[0]),
        }
    }

    pub(crate) fn draw_head(&self, rng: &mut StreamRng, z: &mut [f64], head: &mut [f64]) {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        self.sigma_k.root_mul_into(z, head);
    }

    /// `⟨w, x⟩` in law: `⟨w_{|k}, x_{|k}⟩ + h(x_{|k})·s·G`,
    /// `s = ‖w_{|d−k}‖_{Σ_tail}`.
    pub fn tail_scale(&self, w: &DVector<f64>) -> f64 {
        let tail = w.rows(self.k, self.dim() - self.k).into_owned();
        self.sigma_tail.quad(&tail).max(0.0).sqrt()
    }

    /// Test losses of the linear predictor `w` from `m` fresh projected
    /// draws: (weighted `E[(⟨w,x⟩ − y)²/h²]`, unweighted `E[(⟨w,x⟩ − y)²]`).
    pub fn test_losses(&self, w: &DVector<f64>, m: usize, rng: &mut StreamRng) -> (MeanEstimate, MeanEstimate) {
        let s = self.tail_scale(w);
        let wk: Vec<f64> = w.rows(0, self.k).iter().cloned().collect();
        let mut z = vec![0.0; self.k];
        let mut head = vec![0.0; self.k];
        let mut weighted = Vec::with_capacity(m);
        let mut plain = Vec::with_capacity(m);
        for _ in 0..m {
            self.draw_head(rng, &mut z, &mut head);
            let h = self.h(&head);
            let y = self.g(&head, h);
            let g: f64 = StandardNormal.sample(rng);
            let pred: f64 = wk.iter().zip(&head).map(|(a, b)| a * b).sum::<f64>() + h * s * g;
            let r2 = (pred - y) * (pred - y);
            weighted.push(r2 / (h * h));
            plain.push(r2);
        }
        (MeanEstimate::from_slice(&weighted), MeanEstimate::from_slice(&plain))
    }

    /// Monte Carlo `(E[h²], E[h⁴])` with standard errors.
    pub fn h_moments(&self, m: usize, seed: u64) -> (MeanEstimate, MeanEstimate) {
        let mut rng = rng::stream(seed, rng::streams::AUX);
        let mut z = vec![0.0; self.k];
        let mut head = vec![0.0; self.k];
        let mut h2 = Vec::with_capacity(m);
        let mut h4 = Vec::with_capacity(m);
        for _ in 0..m {
            self.draw_head(&mut rng, &mut z, &mut head);
            let h = self.h(&head);
            h2.push(h * h);
            h4.push(h * h * h * h);
        }
        (MeanEstimate::from_slice(&h2), MeanEstimate::from_slice(&h4))
    }
}

/// Rows of `(x_{|k}, h·z)`; each row draws the head, then the tail, from a
/// single stream. Weights `h²` are stored with the sample.
pub fn sample_counterexample(cmodel: &CounterexampleModel, d: usize, n: usize, seed: u64) -> Result<SampleSet> {
    if d != cmodel.dim() || d <= cmodel.k {
        return Err(Error::domain(format!(
            "dimension {d} does not match k + tail = {}",
            cmodel.dim()
        )));
    }
    let mut rng = rng::stream(seed, rng::streams::DATA);
    let k = cmodel.k;
    let tail = d - k;
    let mut xt = DMatrix::zeros(d, n);
    let mut y = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut zk = vec![0.0; k];
    let mut head = vec![0.0; k];
    let mut zt = vec![0.0; tail];
    let mut xtail = vec![0.0; tail];
    for i in 0..n {
        cmodel.draw_head(&mut rng, &mut zk, &mut head);
        for v in zt.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        cmodel.sigma_tail.root_mul_into(&zt, &mut xtail);
        let h = cmodel.h(&head);
        let mut col = xt.column_mut(i);
        for j in 0..k {
            col[j] = head[j];
        }
        for j in 0..tail {
            col[k + j] = h * xtail[j];
        }
        y.push(cmodel.g(&head, h));
        weights.push(h * h);
    }
    Ok(SampleSet {
        xt,
        y,
        weights: Some(weights),
        seed,
        model_id: format!("counterexample(d={d},k={k})"),
    })
}

/// `E[h²] = 2 + 2√(2/π)` for `h = 1 + |x|`, `x ~ N(0, 1)`.
pub fn one_plus_abs_h2() -> f64 {
    2.0 + 2.0 * (2.0 / std::f64::consts::PI).sqrt()
}

/// `E[h⁴] = 10 + 12√(2/π)` for `h = 1 + |x|`, `x ~ N(0, 1)`.
pub fn one_plus_abs_h4() -> f64 {
    10.0 + 12.0 * (2.0 / std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_h_is_gaussian() {
        let table = Table {
            knots: vec![0.0],
            values: vec![1.0],
        };
        let cm = CounterexampleModel::new(
            Covariance::Diagonal(DVector::from_element(1, 1.0)),
            HKind::Table { table },
            GKind::HSquared,
            Covariance::Diagonal(DVector::from_element(3, 1.0)),
        )
        .unwrap();
        let s = sample_counterexample(&cm, 4, 2000, 11).unwrap();
        assert!(s.weights.as_ref().unwrap().iter().all(|&w| w == 1.0));
        // tail variance matches the Gaussian tail
        let var: f64 = s.xt.row(2).iter().map(|v| v * v).sum::<f64>() / 2000.0;
        assert!((var - 1.0).abs() < 0.1);
    }

    #[test]
    fn weights_are_h_squared() {
        let cm = CounterexampleModel::standard(5).unwrap();
        let s = sample_counterexample(&cm, 5, 50, 3).unwrap();
        for i in 0..50 {
            let h = 1.0 + s.xt[(0, i)].abs();
            assert_eq!(s.weights.as_ref().unwrap()[i], h * h);
            assert_eq!(s.y[i], h * h);
        }
        assert!(sample_counterexample(&cm, 4, 5, 3).is_err());
    }

    #[test]
    fn moment_constants() {
        assert!((one_plus_abs_h2() - 3.5958).abs() < 1e-4);
        assert!((one_plus_abs_h4() - 19.5746).abs() < 1e-4);
        assert!((one_plus_abs_h2().powi(2) - 12.9296).abs() < 1e-3);
    }
}
