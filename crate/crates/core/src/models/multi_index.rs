//! Gaussian multi-index model: `x ~ N(μ, Σ)`, `η = Wᵀx`, `y = g(η, ξ)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::covariance::{make_covariance, Covariance, CovarianceSpec};
use super::geometry::ModelGeometry;
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::LossSpec;
use crate::rng::{self, StreamRng};

/// Piecewise-linear table, constant beyond the end knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() || self.knots.len() != self.values.len() {
            return Err(Error::domain("table needs equal nonzero numbers of knots and values"));
        }
        if self.knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("table knots must be strictly increasing"));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        let v = &self.values;
        if t <= k[0] {
            return v[0];
        }
        let last = k.len() - 1;
        if t >= k[last] {
            return v[last];
        }
        let j = k.partition_point(|&x| x <= t);
        let (x0, x1) = (k[j - 1], k[j]);
        v[j - 1] + (v[j] - v[j - 1]) * (t - x0) / (x1 - x0)
    }
}

/// The link `g`. Every variant acts on `s = Σ_j η_j`, which for `k = 1` is
/// the single index `⟨w*, x⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Link {
    /// `s + ξ`
    LinearNoise,
    /// `|s + ξ|`
    MagnitudeNoise,
    /// `max(s + offset + ξ, 0)`
    ReluPointmass { offset: f64 },
    /// `table(s + ξ)`
    Table { table: Table },
}

impl Link {
    #[inline]
    pub fn apply(&self, s: f64, xi: f64) -> f64 {
        match self {
            Link::LinearNoise => s + xi,
            Link::MagnitudeNoise => (s + xi).abs(),
            Link::ReluPointmass { offset } => (s + offset + xi).max(0.0),
            Link::Table { table } => table.eval(s + xi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    Gaussian { std: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl Noise {
    pub fn validate(&self) -> Result<()> {
        match self {
            Noise::Gaussian { std } => {
                if !(*std >= 0.0) || !std.is_finite() {
                    return Err(Error::domain(format!("noise std {std} must be nonnegative")));
                }
            }
            Noise::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::domain("discrete noise needs matching values and probs"));
                }
                let total: f64 = probs.iter().sum();
                if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::domain("discrete noise probabilities must sum to 1"));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn draw(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Noise::Gaussian { std } => {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            }
            Noise::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated nonempty")
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Noise::Gaussian { .. } => 0.0,
            Noise::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Noise::Gaussian { std } => std * std,
            Noise::Discrete { values, probs } => {
                let m = self.mean();
                values.iter().zip(probs).map(|(v, p)| p * (v - m) * (v - m)).sum()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiIndexModel {
    pub mu: DVector<f64>,
    pub sigma: Covariance,
    pub w: DMatrix<f64>,
    pub link: Link,
    pub noise: Noise,
    /// Cholesky-type factor of `WᵀΣW`, used to draw `η` directly.
    eta_root: DMatrix<f64>,
}

impl MultiIndexModel {
    pub fn new(
        mu: Option<DVector<f64>>,
        sigma: Covariance,
        w: DMatrix<f64>,
        link: Link,
        noise: Noise,
    ) -> Result<Self> {
        let d = sigma.dim();
        let mu = mu.unwrap_or_else(|| DVector::zeros(d));
        if mu.len() != d || w.nrows() != d {
            return Err(Error::domain(format!(
                "dimension mismatch: mu {}, sigma {d}, W rows {}",
                mu.len(),
                w.nrows()
            )));
        }
        if w.ncols() >= d {
            return Err(Error::domain("need fewer index directions than features"));
        }
        noise.validate()?;
        if let Link::Table { table } = &link {
            table.validate()?;
        }
        let m = w.transpose() * sigma.mul_mat(&w);
        let eta_root = linalg::psd_sqrt(&m);
        Ok(Self {
            mu,
            sigma,
            w,
            link,
            noise,
            eta_root,
        })
    }

    /// Isotropic-or-structured single-index model with `w* = scale · e_1`.
    pub fn single_index(sigma: Covariance, w_scale: f64, link: Link, noise: Noise) -> Result<Self> {
        let mut w = DMatrix::zeros(sigma.dim(), 1);
        w[(0, 0)] = w_scale;
        Self::new(None, sigma, w, link, noise)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn geometry(&self) -> Result<ModelGeometry> {
        ModelGeometry::new(&self.sigma, &self.w)
    }

    /// `Σ_j w*_j`, the direction whose inner product is `s = Σ_j η_j`.
    pub fn index_sum(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for c in self.w.column_iter() {
            v += c;
        }
        v
    }

    pub fn model_id(&self) -> String {
        format!("multi_index(d={},k={})", self.dim(), self.k())
    }

    /// `n` rows, each drawn as `d` standard normals followed by one noise
    /// draw, from a single stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> SampleSet {
        let mut rng = rng::stream(seed, rng::streams::DATA);
        self.sample_with(n, &mut rng, seed)
    }

    pub fn sample_with(&self, n: usize, rng: &mut StreamRng, seed: u64) -> SampleSet {
        let d = self.dim();
        let k = self.k();
        let mut xt = DMatrix::zeros(d, n);
        let mut y = Vec::with_capacity(n);
        let mut z = vec![0.0; d];
        let mut col = vec![0.0; d];
        let wsum = self.index_sum();
        for i in 0..n {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            self.sigma.root_mul_into(&z, &mut col);
            for (c, m) in col.iter_mut().zip(self.mu.iter()) {
                *c += m;
            }
            let s: f64 = if k == 0 {
                0.0
            } else {
                col.iter().zip(wsum.iter()).map(|(a, b)| a * b).sum()
            };
            let xi = self.noise.draw(rng);
            y.push(self.link.apply(s, xi));
            xt.column_mut(i).copy_from_slice(&col);
        }
        SampleSet {
            xt,
            y,
            weights: None,
            seed,
            model_id: self.model_id(),
        }
    }

    /// `⟨w, x⟩ + b` in law: `cᵀ(η − Wᵀμ) + offset + s·G` with `G ~ N(0, 1)`
    /// independent of `(η, ξ)`.
    pub fn projected(&self, geom: &ModelGeometry, w: &DVector<f64>, b: f64) -> ProjectedPredictor {
        let coeffs = geom.index_coeffs(w);
        let wmu = self.w.tr_mul(&self.mu);
        ProjectedPredictor {
            offset: w.dot(&self.mu) - coeffs.dot(&wmu) + b,
            perp_scale: geom.perp_quad(w).sqrt(),
            coeffs,
        }
    }

    /// Draws `m` triples `(η − Wᵀμ, y, G)` from the projected law.
    pub fn draw_projected(&self, m: usize, rng: &mut StreamRng) -> ProjectedDraws {
        let k = self.k();
        let mut eta_c = Vec::with_capacity(m * k);
        let mut y = Vec::with_capacity(m);
        let mut g = Vec::with_capacity(m);
        let wmu = self.w.tr_mul(&self.mu);
        let mu_s: f64 = wmu.iter().sum();
        let mut gk = DVector::zeros(k);
        for _ in 0..m {
            for v in gk.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let e = &self.eta_root * &gk;
            let s = mu_s + e.iter().sum::<f64>();
            let xi = self.noise.draw(rng);
            let gi: f64 = StandardNormal.sample(rng);
            eta_c.extend(e.iter());
            y.push(self.link.apply(s, xi));
            g.push(gi);
        }
        ProjectedDraws { k, eta_c, y, g }
    }

    /// Closed-form square-loss risk under `linear_noise`:
    /// `‖w − w_s‖²_Σ + (⟨w − w_s, μ⟩ + b − Eξ)² + Var ξ`.
    pub fn linear_population_loss(&self, w: &DVector<f64>, b: f64) -> Result<f64> {
        if self.link != Link::LinearNoise {
            return Err(Error::domain("closed-form risk needs the linear_noise link"));
        }
        let diff = w - self.index_sum();
        let bias = diff.dot(&self.mu) + b - self.noise.mean();
        Ok(self.sigma.quad(&diff) + bias * bias + self.noise.variance())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPredictor {
    pub coeffs: DVector<f64>,
    pub offset: f64,
    pub perp_scale: f64,
}

impl ProjectedPredictor {
    /// Predictor acting on the index variables only (`s = 0`).
    pub fn index_only(coeffs: DVector<f64>, offset: f64) -> Self {
        Self {
            coeffs,
            offset,
            perp_scale: 0.0,
        }
    }

    #[inline]
    pub fn predict(&self, draws: &ProjectedDraws, i: usize) -> f64 {
        let k = draws.k;
        let e = &draws.eta_c[i * k..(i + 1) * k];
        let mut v = self.offset + self.perp_scale * draws.g[i];
        for (c, ej) in self.coeffs.iter().zip(e) {
            v += c * ej;
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct ProjectedDraws {
    pub k: usize,
    pub eta_c: Vec<f64>,
    pub y: Vec<f64>,
    pub g: Vec<f64>,
}

impl ProjectedDraws {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sample mean of the loss and its standard error; the caller
    /// guarantees labels are in the loss's domain.
    pub fn mean_loss(&self, pred: &ProjectedPredictor, loss: &LossSpec) -> MeanEstimate {
        MeanEstimate::from_iter((0..self.len()).map(|i| loss.value(pred.predict(self, i), self.y[i])))
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub count: usize,
}

impl MeanEstimate {
    /// Two-pass mean and variance in index order.
    pub fn from_slice(v: &[f64]) -> Self {
        let m = v.len();
        if m == 0 {
            return Self {
                mean: f64::NAN,
                std_err: f64::NAN,
                count: 0,
            };
        }
        let mean = v.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / m as f64).sqrt(),
            count: m,
        }
    }

    pub fn from_iter(it: impl Iterator<Item = f64>) -> Self {
        Self::from_slice(&it.collect::<Vec<_>>())
    }
}

/// Features stored one sample per column (`xt` is `d × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub xt: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Per-sample weights `h(x_{|k})²` (counterexample samples only).
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
    pub model_id: String,
}

impl SampleSet {
    pub fn n(&self) -> usize {
        self.xt.ncols()
    }

    pub fn d(&self) -> usize {
        self.xt.nrows()
    }

    /// The `n × d` design matrix.
    pub fn x(&self) -> DMatrix<f64> {
        self.xt.transpose()
    }

    pub fn y_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    /// `Xw + b`.
    pub fn predict(&self, w: &DVector<f64>, b: f64) -> DVector<f64> {
        self.xt.tr_mul(w).add_scalar(b)
    }

    /// CSV with header `x0,…,x{d−1},y[,weight]`, one sample per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        if self.weights.is_some() {
            header.push("weight".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = self.xt.column(i).iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{:?}", self.y[i]));
            if let Some(w) = &self.weights {
                row.push(format!("{:?}", w[i]));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Index directions in a config: dense columns or sparse `(row, col, value)`
/// triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IndexSpec {
    Columns(Vec<Vec<f64>>),
    Sparse(SparseIndex),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseIndex {
    pub k: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// JSON model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    pub sigma: CovarianceSpec,
    #[serde(rename = "W")]
    pub w: IndexSpec,
    pub link: Link,
    pub noise: Noise,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<MultiIndexModel> {
        let sigma = make_covariance(&self.sigma)?;
        let d = sigma.dim();
        let w = match &self.w {
            IndexSpec::Columns(cols) => {
                if cols.iter().any(|c| c.len() != d) {
                    return Err(Error::Config(format!("every W column must have length {d}")));
                }
                let flat: Vec<f64> = cols.iter().flatten().cloned().collect();
                DMatrix::from_column_slice(d, cols.len(), &flat)
            }
            IndexSpec::Sparse(SparseIndex { k, entries }) => {
                let mut w = DMatrix::zeros(d, *k);
                for &(r, c, v) in entries {
                    if r >= d || c >= *k {
                        return Err(Error::Config(format!("W entry ({r}, {c}) out of range")));
                    }
                    w[(r, c)] = v;
                }
                w
            }
        };
        MultiIndexModel::new(
            self.mu.clone().map(DVector::from_vec),
            sigma,
            w,
            self.link.clone(),
            self.noise.clone(),
        )
    }
}
