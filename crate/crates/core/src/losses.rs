//! Scalar losses `f(ŷ, y)`, their square-root-Lipschitz / Lipschitz /
//! smoothness constants, and the Moreau envelope
//! `f_λ(ŷ, y) = inf_u f(u, y) + λ (u − ŷ)²`.
//!
//! Labels are plain `f64`. Real-valued losses accept any finite label, the
//! magnitude-type losses (`phase_retrieval`, `relu_interp`) require `y ≥ 0`,
//! and the hinge family requires `y ∈ {−1, +1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points of the dense scan used by the numeric envelope search.
const ENVELOPE_GRID: usize = 1024;
/// Target bracket width for the golden-section refinement.
const GOLDEN_WIDTH: f64 = 1e-10;
const GOLDEN_MAX_ITERS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// The loss catalog.
///
/// `Weighted` divides an inner loss by a per-sample weight (the value
/// `h(x_{|k})²` supplied by the counterexample sampler). `NnWeightshared`
/// is the single-direction two-layer ReLU network loss
/// `(Σ a_i σ(ŷ − b_i) − y)²`, stored with `b` sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    Square,
    SquaredHinge,
    Hinge,
    PhaseRetrieval,
    ReluInterp,
    SigmaSquare { sigma: Activation },
    SigmaHinge { sigma: Activation },
    Weighted { inner: Box<LossKind>, weight: f64 },
    NnWeightshared { a: Vec<f64>, b: Vec<f64> },
}

impl LossKind {
    /// Stable name used in configs and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Square => "square",
            LossKind::SquaredHinge => "squared_hinge",
            LossKind::Hinge => "hinge",
            LossKind::PhaseRetrieval => "phase_retrieval",
            LossKind::ReluInterp => "relu_interp",
            LossKind::SigmaSquare { .. } => "sigma_square",
            LossKind::SigmaHinge { .. } => "sigma_hinge",
            LossKind::Weighted { .. } => "weighted",
            LossKind::NnWeightshared { .. } => "nn_weightshared",
        }
    }
}

/// A loss together with its declared constants.
///
/// `sqrt_lip_sq` is `H` such that `√f(·, y)` is `√H`-Lipschitz; it is `None`
/// only for the plain hinge, whose square root is not Lipschitz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub sqrt_lip_sq: Option<f64>,
    pub lip: Option<f64>,
    pub smooth: Option<f64>,
}

/// Which Lipschitz constant an envelope check used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzSource {
    Declared,
    /// `2√(H · max f)` over the grid, valid for every grid point.
    LocalFromSqrtLip,
}

/// Maximum violations of the two envelope characterizations on a grid.
/// Non-positive values mean the inequality holds everywhere checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub loss: String,
    pub label: f64,
    pub sqrt_lip_violation: Option<f64>,
    pub lipschitz_violation: Option<f64>,
    pub lipschitz_constant: Option<f64>,
    pub lipschitz_source: Option<LipschitzSource>,
    pub points_checked: usize,
}

/// A closed interval scanned with a fixed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    lo: f64,
    hi: f64,
    step: f64,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::domain(format!("grid interval [{lo}, {hi}] is empty")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::domain(format!("grid step {step} must be positive")));
        }
        Ok(Self { lo, hi, step })
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.lo + i as f64 * self.step)
    }
}

fn prefix_max_abs(a: &[f64]) -> f64 {
    let mut acc = 0.0_f64;
    let mut best = 0.0_f64;
    for &ai in a {
        acc += ai;
        best = best.max(acc.abs());
    }
    best
}

/// Sorts `(a_i, b_i)` pairs by `b` ascending.
pub fn sort_units(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = a.iter().cloned().zip(b.iter().cloned()).collect();
    pairs.sort_by(|p, q| p.1.total_cmp(&q.1).then(p.0.total_cmp(&q.0)));
    pairs.into_iter().unzip()
}

impl LossSpec {
    /// Builds a spec with the catalog constants for `kind`.
    pub fn new(kind: LossKind) -> Result<Self> {
        let kind = match kind {
            LossKind::NnWeightshared { a, b } => {
                if a.len() != b.len() || a.is_empty() {
                    return Err(Error::domain(format!(
                        "nn_weightshared needs equal nonzero lengths, got {} and {}",
                        a.len(),
                        b.len()
                    )));
                }
                let (a, b) = sort_units(&a, &b);
                LossKind::NnWeightshared { a, b }
            }
            LossKind::Weighted { inner, weight } => {
                if !(weight > 0.0 && weight.is_finite()) {
                    return Err(Error::domain(format!("weight {weight} must be positive")));
                }
                if matches!(*inner, LossKind::Weighted { .. }) {
                    return Err(Error::domain("nested weighted losses are not supported"));
                }
                LossKind::Weighted { inner, weight }
            }
            k => k,
        };
        let (sqrt_lip_sq, lip, smooth) = Self::constants(&kind)?;
        Ok(Self {
            kind,
            sqrt_lip_sq,
            lip,
            smooth,
        })
    }

    fn constants(kind: &LossKind) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
        Ok(match kind {
            LossKind::Square | LossKind::SquaredHinge => (Some(1.0), None, Some(2.0)),
            LossKind::Hinge => (None, Some(1.0), None),
            LossKind::PhaseRetrieval | LossKind::ReluInterp => (Some(1.0), None, None),
            LossKind::SigmaSquare { sigma } | LossKind::SigmaHinge { sigma } => match sigma {
                Activation::Identity => (Some(1.0), None, Some(2.0)),
                Activation::Relu => (Some(1.0), None, None),
            },
            LossKind::Weighted { inner, weight } => {
                let (h, m, s) = Self::constants(inner)?;
                (h.map(|v| v / weight), m.map(|v| v / weight), s.map(|v| v / weight))
            }
            LossKind::NnWeightshared { a, .. } => {
                let slope = prefix_max_abs(a);
                (Some(slope * slope), None, None)
            }
        })
    }

    pub fn square() -> Self {
        Self::new(LossKind::Square).expect("catalog entry")
    }

    pub fn phase_retrieval() -> Self {
        Self::new(LossKind::PhaseRetrieval).expect("catalog entry")
    }

    pub fn relu_interp() -> Self {
        Self::new(LossKind::ReluInterp).expect("catalog entry")
    }

    pub fn squared_hinge() -> Self {
        Self::new(LossKind::SquaredHinge).expect("catalog entry")
    }

    pub fn hinge() -> Self {
        Self::new(LossKind::Hinge).expect("catalog entry")
    }

    pub fn nn_weightshared(a: &[f64], b: &[f64]) -> Result<Self> {
        Self::new(LossKind::NnWeightshared {
            a: a.to_vec(),
            b: b.to_vec(),
        })
    }

    pub fn weighted(inner: LossKind, weight: f64) -> Result<Self> {
        Self::new(LossKind::Weighted {
            inner: Box::new(inner),
            weight,
        })
    }

    /// Catalog entry by stable name, with default parameters for the
    /// parametric kinds (ReLU activation; `a = (1, −1)`, `b = (0, 1)`;
    /// unit weight around the square loss).
    pub fn from_name(name: &str) -> Result<Self> {
        let kind = match name {
            "square" => LossKind::Square,
            "squared_hinge" => LossKind::SquaredHinge,
            "hinge" => LossKind::Hinge,
            "phase_retrieval" => LossKind::PhaseRetrieval,
            "relu_interp" => LossKind::ReluInterp,
            "sigma_square" => LossKind::SigmaSquare {
                sigma: Activation::Relu,
            },
            "sigma_hinge" => LossKind::SigmaHinge {
                sigma: Activation::Relu,
            },
            "weighted" => LossKind::Weighted {
                inner: Box::new(LossKind::Square),
                weight: 1.0,
            },
            "nn_weightshared" => LossKind::NnWeightshared {
                a: vec![1.0, -1.0],
                b: vec![0.0, 1.0],
            },
            other => return Err(Error::Config(format!("unknown loss kind `{other}`"))),
        };
        Self::new(kind)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// True when the loss takes ±1 labels.
    pub fn is_classification(&self) -> bool {
        match &self.kind {
            LossKind::SquaredHinge | LossKind::Hinge | LossKind::SigmaHinge { .. } => true,
            LossKind::Weighted { inner, .. } => matches!(
                **inner,
                LossKind::SquaredHinge | LossKind::Hinge | LossKind::SigmaHinge { .. }
            ),
            _ => false,
        }
    }

    /// Rejects labels outside the loss's label space.
    pub fn check_label(&self, y: f64) -> Result<()> {
        check_label(&self.kind, y)
    }

    /// `f(ŷ, y)` without the label check; callers validate labels once.
    #[inline]
    pub fn value(&self, yhat: f64, y: f64) -> f64 {
        value(&self.kind, yhat, y)
    }

    /// `f(ŷ, y)` with label validation.
    pub fn eval(&self, yhat: f64, y: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.value(yhat, y))
    }

    /// `inf_u f(u, y)`.
    pub fn infimum(&self, y: f64) -> f64 {
        infimum(&self.kind, y)
    }

    /// Moreau envelope `inf_u f(u, y) + λ (u − ŷ)²`.
    pub fn moreau_envelope(&self, lambda: f64, yhat: f64, y: f64) -> Result<f64> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::domain(format!("lambda {lambda} must be a nonnegative real")));
        }
        self.check_label(y)?;
        envelope(&self.kind, lambda, yhat, y)
    }

    /// Largest adjacent-point slope of `√f(·, y)` over `grid`; a lower
    /// estimate of the Lipschitz constant of `√f`.
    pub fn estimate_sqrt_lip(&self, y: f64, grid: &Grid) -> Result<f64> {
        self.check_label(y)?;
        let mut prev: Option<(f64, f64)> = None;
        let mut best = 0.0_f64;
        for u in grid.points() {
            let r = self.value(u, y).sqrt();
            if let Some((pu, pr)) = prev {
                best = best.max((r - pr).abs() / (u - pu));
            }
            prev = Some((u, r));
        }
        Ok(best)
    }

    /// Checks `f_λ ≥ λ/(λ+H)·f` and `f_λ ≥ f − M²/(4λ)` on `lambdas × grid`.
    ///
    /// Without a declared `M` the Lipschitz check uses `M = 2√(H·max f)`:
    /// for any grid point `x` and any `u` with `f(u) ≤ f(x)`,
    /// `f(x) − f(u) = (√f(x) − √f(u))(√f(x) + √f(u)) ≤ 2√(H f(x))·|x − u|`.
    pub fn check_envelope_inequalities(
        &self,
        lambdas: &[f64],
        grid: &Grid,
        y: f64,
    ) -> Result<EnvelopeReport> {
        self.check_label(y)?;
        let xs: Vec<f64> = grid.points().collect();
        let fx: Vec<f64> = xs.iter().map(|&x| self.value(x, y)).collect();
        let (lip, source) = match (self.lip, self.sqrt_lip_sq) {
            (Some(m), _) => (Some(m), Some(LipschitzSource::Declared)),
            (None, Some(h)) => {
                let fmax = fx.iter().cloned().fold(0.0_f64, f64::max);
                (Some(2.0 * (h * fmax).sqrt()), Some(LipschitzSource::LocalFromSqrtLip))
            }
            (None, None) => (None, None),
        };
        let mut sqrt_violation: Option<f64> = None;
        let mut lip_violation: Option<f64> = None;
        let mut points = 0;
        for &lambda in lambdas {
            if !(lambda >= 0.0) {
                return Err(Error::domain(format!("lambda {lambda} must be nonnegative")));
            }
            for (&x, &f) in xs.iter().zip(&fx) {
                let env = envelope(&self.kind, lambda, x, y)?;
                points += 1;
                if let Some(h) = self.sqrt_lip_sq {
                    let v = lambda / (lambda + h) * f - env;
                    sqrt_violation = Some(sqrt_violation.map_or(v, |m: f64| m.max(v)));
                }
                if let (Some(m), true) = (lip, lambda > 0.0) {
                    let v = (f - m * m / (4.0 * lambda)) - env;
                    lip_violation = Some(lip_violation.map_or(v, |c: f64| c.max(v)));
                }
            }
        }
        Ok(EnvelopeReport {
            loss: self.name().to_string(),
            label: y,
            sqrt_lip_violation: sqrt_violation,
            lipschitz_violation: lip_violation,
            lipschitz_constant: lip,
            lipschitz_source: source,
            points_checked: points,
        })
    }
}

/// `H/2`: the squared square-root-Lipschitz constant implied by
/// `H`-smoothness of a nonnegative function.
pub fn sqrtlip_from_smooth(smooth_const: f64) -> Result<f64> {
    if !(smooth_const >= 0.0) || !smooth_const.is_finite() {
        return Err(Error::domain(format!(
            "smoothness constant {smooth_const} must be nonnegative"
        )));
    }
    Ok(smooth_const / 2.0)
}

fn check_label(kind: &LossKind, y: f64) -> Result<()> {
    if !y.is_finite() {
        return Err(Error::domain(format!("label {y} is not finite")));
    }
    match kind {
        LossKind::PhaseRetrieval | LossKind::ReluInterp if y < 0.0 => Err(Error::domain(format!(
            "{} needs a nonnegative label, got {y}",
            kind.name()
        ))),
        LossKind::SquaredHinge | LossKind::Hinge | LossKind::SigmaHinge { .. }
            if y != 1.0 && y != -1.0 =>
        {
            Err(Error::domain(format!("{} needs a ±1 label, got {y}", kind.name())))
        }
        LossKind::Weighted { inner, .. } => check_label(inner, y),
        _ => Ok(()),
    }
}

#[inline]
fn nn_output(a: &[f64], b: &[f64], u: f64) -> f64 {
    a.iter().zip(b).map(|(ai, bi)| ai * (u - bi).max(0.0)).sum()
}

#[inline]
fn value(kind: &LossKind, yhat: f64, y: f64) -> f64 {
    match kind {
        LossKind::Square => (yhat - y) * (yhat - y),
        LossKind::SquaredHinge => {
            let m = (1.0 - yhat * y).max(0.0);
            m * m
        }
        LossKind::Hinge => (1.0 - yhat * y).max(0.0),
        LossKind::PhaseRetrieval => {
            let r = yhat.abs() - y;
            r * r
        }
        LossKind::ReluInterp => {
            if y > 0.0 {
                (yhat - y) * (yhat - y)
            } else {
                let s = yhat.max(0.0);
                s * s
            }
        }
        LossKind::SigmaSquare { sigma } => {
            let r = sigma.apply(yhat) - y;
            r * r
        }
        LossKind::SigmaHinge { sigma } => {
            let m = (1.0 - sigma.apply(yhat) * y).max(0.0);
            m * m
        }
        LossKind::Weighted { inner, weight } => value(inner, yhat, y) / weight,
        LossKind::NnWeightshared { a, b } => {
            let r = nn_output(a, b, yhat) - y;
            r * r
        }
    }
}

fn infimum(kind: &LossKind, y: f64) -> f64 {
    match kind {
        LossKind::Square
        | LossKind::SquaredHinge
        | LossKind::Hinge
        | LossKind::PhaseRetrieval
        | LossKind::ReluInterp => 0.0,
        LossKind::SigmaSquare { sigma } => match sigma {
            Activation::Identity => 0.0,
            Activation::Relu => {
                if y >= 0.0 {
                    0.0
                } else {
                    y * y
                }
            }
        },
        LossKind::SigmaHinge { sigma } => match sigma {
            Activation::Identity => 0.0,
            // y = −1 gives (1 + σ(u))², minimized at σ(u) = 0
            Activation::Relu => {
                if y > 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        },
        LossKind::Weighted { inner, weight } => infimum(inner, y) / weight,
        LossKind::NnWeightshared { a, b } => {
            // g is continuous piecewise linear: 0 left of b_1, nodes at each b_j,
            // final slope Σ a_i.
            let mut lo = 0.0_f64;
            let mut hi = 0.0_f64;
            for &bj in b {
                let g = nn_output(a, b, bj);
                lo = lo.min(g);
                hi = hi.max(g);
            }
            let total: f64 = a.iter().sum();
            if total > 0.0 {
                hi = f64::INFINITY;
            } else if total < 0.0 {
                lo = f64::NEG_INFINITY;
            }
            let gap = if y < lo {
                lo - y
            } else if y > hi {
                y - hi
            } else {
                0.0
            };
            gap * gap
        }
    }
}

/// Points where `f(·, y)` is not differentiable.
fn kinks(kind: &LossKind, y: f64) -> Vec<f64> {
    match kind {
        LossKind::PhaseRetrieval => vec![0.0],
        LossKind::ReluInterp => {
            if y > 0.0 {
                vec![]
            } else {
                vec![0.0]
            }
        }
        LossKind::SquaredHinge | LossKind::Hinge => vec![y],
        LossKind::SigmaSquare { sigma } => match sigma {
            Activation::Identity => vec![],
            Activation::Relu => vec![0.0],
        },
        LossKind::SigmaHinge { sigma } => match sigma {
            Activation::Identity => vec![y],
            Activation::Relu => vec![0.0, 1.0],
        },
        LossKind::Weighted { inner, .. } => kinks(inner, y),
        LossKind::NnWeightshared { b, .. } => b.clone(),
        LossKind::Square => vec![],
    }
}

fn envelope(kind: &LossKind, lambda: f64, x: f64, y: f64) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(infimum(kind, y));
    }
    let shrink = lambda / (lambda + 1.0);
    let closed = match kind {
        LossKind::Square
        | LossKind::SigmaSquare {
            sigma: Activation::Identity,
        } => Some(shrink * (x - y) * (x - y)),
        LossKind::SquaredHinge
        | LossKind::SigmaHinge {
            sigma: Activation::Identity,
        } => {
            let m = (1.0 - x * y).max(0.0);
            Some(shrink * m * m)
        }
        LossKind::PhaseRetrieval => {
            let r = x.abs() - y;
            Some(shrink * r * r)
        }
        LossKind::ReluInterp => Some(shrink * value(kind, x, y)),
        LossKind::Weighted { inner, weight } => {
            return Ok(envelope(inner, lambda * weight, x, y)? / weight);
        }
        _ => None,
    };
    match closed {
        Some(v) => Ok(v),
        None => envelope_numeric(kind, lambda, x, y),
    }
}

/// Bracketed global 1-D search: any `u` with `λ(u − x)² > f(x)` cannot beat
/// `u = x`, so the minimizer lies in `x ± √(f(x)/λ)`.
fn envelope_numeric(kind: &LossKind, lambda: f64, x: f64, y: f64) -> Result<f64> {
    let fx = value(kind, x, y);
    if fx == 0.0 {
        return Ok(0.0);
    }
    let obj = |u: f64| value(kind, u, y) + lambda * (u - x) * (u - x);
    let radius = (fx / lambda).sqrt();
    let lo = x - radius;
    let hi = x + radius;
    let h = (hi - lo) / (ENVELOPE_GRID - 1) as f64;
    let mut best = fx;
    let mut best_i = None;
    for i in 0..ENVELOPE_GRID {
        let u = lo + i as f64 * h;
        let v = obj(u);
        if v < best {
            best = v;
            best_i = Some(i);
        }
    }
    for k in kinks(kind, y) {
        if k >= lo && k <= hi {
            best = best.min(obj(k));
        }
    }
    // refine around the best scan point and around x itself
    let centers: Vec<f64> = match best_i {
        Some(i) => vec![lo + i as f64 * h, x],
        None => vec![x],
    };
    for c in centers {
        let a = (c - h).max(lo);
        let b = (c + h).min(hi);
        let (u, v) = golden_section(&obj, a, b)?;
        debug_assert!(u.is_finite());
        best = best.min(v);
    }
    Ok(best.max(0.0))
}

fn golden_section(obj: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let tol = GOLDEN_WIDTH.max(1e-15 * (a.abs() + b.abs()));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = obj(c);
    let mut fd = obj(d);
    let mut best = (a, obj(a)).min_by_value((b, obj(b)));
    for _ in 0..GOLDEN_MAX_ITERS {
        if (b - a).abs() <= tol {
            best = best.min_by_value((c, fc)).min_by_value((d, fd));
            return Ok(best);
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = obj(d);
        }
        best = best.min_by_value((c, fc)).min_by_value((d, fd));
    }
    Err(Error::Numerical {
        message: format!("golden-section search did not reach width {tol:e}"),
        best: best.1,
    })
}

trait MinByValue {
    fn min_by_value(self, other: Self) -> Self;
}

impl MinByValue for (f64, f64) {
    fn min_by_value(self, other: Self) -> Self {
        if other.1 < self.1 {
            other
        } else {
            self
        }
    }
}
