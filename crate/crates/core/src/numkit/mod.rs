//! Minimal deterministic numerics: dense vector helpers, probability
//! utilities, small feed-forward networks with analytic gradients, and
//! SGD with momentum under a cosine learning-rate schedule.
//!
//! Everything here is a pure function over caller-owned data; there is no
//! internal shared state and no global RNG.

mod mlp;
mod optim;

pub use mlp::{Activation, ForwardTrace, Layer, Mlp, MlpGradients};
pub use optim::{cosine_lr, sgd_step, LrSchedule, OptimizerState};

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on probability vectors.
pub const PROB_TOL: f64 = 1e-9;

/// Clamp applied inside `log` in [`cross_entropy`] so that zero predicted
/// mass yields a large finite loss instead of infinity.
pub const LOG_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm. A zero (or numerically zero) vector
/// has no direction and is rejected.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Index of the largest entry; ties break toward the lowest index.
///
/// Panics on an empty slice (programmer error at every call site).
pub fn argmax(v: &[f64]) -> usize {
    assert!(!v.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtraction); the result always sums
/// to one.
pub fn softmax(v: &[f64]) -> ProbVector {
    assert!(!v.is_empty(), "softmax of empty slice");
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbVector(exps.into_iter().map(|e| e / sum).collect())
}

/// Shannon entropy of a probability vector, with `0 * ln 0 := 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

/// Cross-entropy `-sum target_n * ln(pred_n)` with `pred` clamped at
/// [`LOG_EPS`]. Non-negative for any pair of probability vectors.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Config(format!(
            "cross-entropy dimension mismatch: {} vs {}",
            target.len(),
            pred.len()
        )));
    }
    Ok(target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| -t * p.max(LOG_EPS).ln())
        .sum())
}

/// A validated probability vector: non-negative entries summing to one
/// within [`PROB_TOL`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Degenerate("empty probability vector".into()));
        }
        if entries.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Invariant(
                "probability vector has negative or non-finite entries".into(),
            ));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Invariant(format!(
                "probability vector sums to {sum}, expected 1"
            )));
        }
        Ok(Self(entries))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1);
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        assert!(k < n);
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}
