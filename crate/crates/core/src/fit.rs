//! Result types shared by every estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Moment,
    Ot,
    NaiveStudent,
    Simultaneous,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Moment => "moment",
            Method::Ot => "ot",
            Method::NaiveStudent => "naive_student",
            Method::Simultaneous => "simultaneous",
        }
    }
}

/// How a confidence interval was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Asymptotic,
    Bootstrap,
    Student,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Set when the noise variance estimate was negative and clamped to 0.
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_gradient_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hessian_spd: Option<bool>,
}

/// Point estimate of `(beta_0, ..., beta_d)` and the noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta: Vec<f64>,
    pub sigma2_eps: f64,
    pub method: Method,
    pub diagnostics: FitDiagnostics,
}

impl RegressionFit {
    pub fn slope(&self) -> f64 {
        self.beta[1]
    }

    /// `(beta, sigma2_eps)` as a single vector of length `d + 2`.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.push(self.sigma2_eps);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInterval {
    /// Index into `beta` (0 is the intercept).
    pub coefficient: usize,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// `0` lies outside `[lo, hi]`.
    pub significant: bool,
}

impl CoefficientInterval {
    pub fn new(coefficient: usize, estimate: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval bounds out of order: {lo} > {hi}");
        Self {
            coefficient,
            estimate,
            lo,
            hi,
            significant: lo > 0.0 || hi < 0.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub method: Method,
    pub kind: IntervalKind,
    pub level: f64,
    pub intervals: Vec<CoefficientInterval>,
}

impl ConfidenceReport {
    pub fn coefficient(&self, j: usize) -> Option<&CoefficientInterval> {
        self.intervals.iter().find(|c| c.coefficient == j)
    }
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("confidence level {level} is not in (0, 1)")))
    }
}

/// Validates positive finite weights and rescales them to sum to one.
pub(crate) fn normalize_weights(w: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::InvalidWeights(format!("{what}: empty")));
    }
    if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidWeights(format!("{what}: {v} is not a positive finite weight")));
    }
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}
