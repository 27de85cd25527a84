//! Training objectives with analytic gradients with respect to the
//! probability map.
//!
//! Dice and Tversky are overlap ratios; cross-entropy and balanced
//! cross-entropy are plain per-image sums (not normalized by pixel count).
//! `beta` weights false negatives and `1 - beta` false positives, so large
//! `beta` biases a model toward recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ProbMap};

pub const DEFAULT_SMOOTH_EPS: f64 = 1e-7;
pub const DEFAULT_CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Dice,
    CrossEntropy,
    Tversky,
    BalancedCE,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Ignored by `Dice` and `CrossEntropy`.
    pub beta: f64,
    pub smooth_eps: f64,
    pub clamp_eps: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, beta: f64) -> Self {
        LossSpec {
            kind,
            beta,
            smooth_eps: DEFAULT_SMOOTH_EPS,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub fn dice() -> Self {
        Self::new(LossKind::Dice, 0.5)
    }

    pub fn cross_entropy() -> Self {
        Self::new(LossKind::CrossEntropy, 0.5)
    }

    pub fn tversky(beta: f64) -> Self {
        Self::new(LossKind::Tversky, beta)
    }

    pub fn balanced_ce(beta: f64) -> Self {
        Self::new(LossKind::BalancedCE, beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("{} not in [0, 1)", self.beta)));
        }
        if !(self.smooth_eps > 0.0 && self.smooth_eps.is_finite()) {
            return Err(Error::param("smooth_eps", format!("{} must be > 0", self.smooth_eps)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::param("clamp_eps", format!("{} not in (0, 0.5)", self.clamp_eps)));
        }
        Ok(())
    }

    pub fn evaluate(&self, y: &BinaryMask, f: &ProbMap) -> Result<LossResult> {
        self.validate()?;
        y.dims().ensure_same(f.dims())?;
        Ok(self.evaluate_slices(y.bits(), f.values()))
    }

    /// Evaluates on raw slices; lengths must match and the spec must be valid.
    pub(crate) fn evaluate_slices(&self, y: &[bool], f: &[f64]) -> LossResult {
        debug_assert_eq!(y.len(), f.len());
        match self.kind {
            LossKind::Dice => dice(y, f, self.smooth_eps),
            LossKind::Tversky => tversky(y, f, self.beta, self.smooth_eps),
            LossKind::CrossEntropy => weighted_ce(y, f, 1.0, 1.0, self.clamp_eps),
            LossKind::BalancedCE => {
                weighted_ce(y, f, self.beta, 1.0 - self.beta, self.clamp_eps)
            }
        }
    }
}

/// A loss value and its gradient `dL/df` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn dice_loss(y: &BinaryMask, f: &ProbMap) -> Result<LossResult> {
    LossSpec::dice().evaluate(y, f)
}

pub fn cross_entropy_loss(y: &BinaryMask, f: &ProbMap) -> Result<LossResult> {
    LossSpec::cross_entropy().evaluate(y, f)
}

pub fn tversky_loss(y: &BinaryMask, f: &ProbMap, beta: f64) -> Result<LossResult> {
    LossSpec::tversky(beta).evaluate(y, f)
}

pub fn balanced_ce_loss(y: &BinaryMask, f: &ProbMap, beta: f64) -> Result<LossResult> {
    LossSpec::balanced_ce(beta).evaluate(y, f)
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

// 1 - (2I + e) / (S + e), I = sum(y f), S = sum(y) + sum(f)
fn dice(y: &[bool], f: &[f64], eps: f64) -> LossResult {
    let mut inter = 0.0;
    let mut total = 0.0;
    for (&yj, &fj) in y.iter().zip(f) {
        let yv = ind(yj);
        inter += yv * fj;
        total += yv + fj;
    }
    let num = 2.0 * inter + eps;
    let den = total + eps;
    let den2 = den * den;
    let grad = y
        .iter()
        .map(|&yj| -(2.0 * ind(yj) * den - num) / den2)
        .collect();
    LossResult {
        value: 1.0 - num / den,
        grad,
    }
}

// Smoothing enters as eps/2 on both sides so that beta = 0.5 reproduces the
// Dice expression above exactly (numerator and denominator are both halved).
fn tversky(y: &[bool], f: &[f64], beta: f64, eps: f64) -> LossResult {
    let half = 0.5 * eps;
    let mut tp = 0.0;
    let mut fn_ = 0.0;
    let mut fp = 0.0;
    for (&yj, &fj) in y.iter().zip(f) {
        let yv = ind(yj);
        tp += yv * fj;
        fn_ += yv * (1.0 - fj);
        fp += (1.0 - yv) * fj;
    }
    let num = tp + half;
    let den = tp + beta * fn_ + (1.0 - beta) * fp + half;
    let den2 = den * den;
    // d(den)/df_j = 1 - beta for every pixel.
    let dden = 1.0 - beta;
    let grad = y
        .iter()
        .map(|&yj| -(ind(yj) * den - num * dden) / den2)
        .collect();
    LossResult {
        value: 1.0 - num / den,
        grad,
    }
}

// sum_j -w_pos y log f~ - w_neg (1 - y) log(1 - f~), f~ = clamp(f, c, 1 - c).
// The gradient is evaluated at the clamped probability, so saturated pixels
// still receive a corrective signal.
fn weighted_ce(y: &[bool], f: &[f64], w_pos: f64, w_neg: f64, clamp: f64) -> LossResult {
    let mut value = 0.0;
    let grad = y
        .iter()
        .zip(f)
        .map(|(&yj, &fj)| {
            let p = fj.clamp(clamp, 1.0 - clamp);
            if yj {
                value -= w_pos * p.ln();
                -w_pos / p
            } else {
                value -= w_neg * (1.0 - p).ln();
                w_neg / (1.0 - p)
            }
        })
        .collect();
    LossResult { value, grad }
}
