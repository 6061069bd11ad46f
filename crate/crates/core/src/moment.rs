//! Weighted method-of-moments estimator.
//!
//! The slope vector solves a weighted least-squares fit of the group-mean
//! responses on the group-mean covariates; the noise variance is what is
//! left of the pooled response variance once the regression term is
//! removed. For `d = 1` the closed forms and the plug-in asymptotic
//! variance of the slope are also available.

use nalgebra::DVector;

use crate::data::{build_design, GroupMoments};
use crate::dist::normal_quantile;
use crate::error::{Error, Result};
use crate::fit::{
    check_level, normalize_weights, CoefficientInterval, ConfidenceReport, FitDiagnostics, IntervalKind, Method,
    RegressionFit,
};
use crate::linalg::weighted_least_squares;

/// Positive group weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes `w` to unit sum; every entry must be positive and finite.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        normalize_weights(w, "moment weights").map(Self)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_len(&self, k: usize) -> Result<()> {
        if self.len() == k {
            Ok(())
        } else {
            Err(Error::InvalidWeights(format!("{} weights for {k} groups", self.len())))
        }
    }
}

/// Weighted moment estimate of `beta`, with the noise variance from
/// [`noise_variance_moment`].
pub fn fit_moment(moments: &GroupMoments, weights: &WeightVector) -> Result<RegressionFit> {
    weights.check_len(moments.k())?;
    let design = build_design(moments, false)?;
    design.ensure_identifiable(weights.as_slice())?;
    let mu_y = DVector::from_iterator(moments.k(), moments.groups().iter().map(|g| g.mu_y));
    let beta: Vec<f64> = weighted_least_squares(design.matrix(), &mu_y, weights.as_slice())?
        .iter()
        .copied()
        .collect();
    Ok(with_noise_variance(moments, beta))
}

fn with_noise_variance(moments: &GroupMoments, beta: Vec<f64>) -> RegressionFit {
    let raw = raw_noise_variance(moments, &beta);
    RegressionFit {
        beta,
        sigma2_eps: raw.max(0.0),
        method: Method::Moment,
        diagnostics: FitDiagnostics {
            clamped: raw < 0.0,
            raw_sigma2: Some(raw),
            ..Default::default()
        },
    }
}

fn raw_noise_variance(moments: &GroupMoments, beta: &[f64]) -> f64 {
    let pooled = moments.pooled();
    let slopes = DVector::from_column_slice(&beta[1..]);
    pooled.sigma2_y - (slopes.transpose() * &pooled.gamma_x * &slopes)[(0, 0)]
}

/// `σ̂²_Y − β₋₀ᵀ Γ̂_X β₋₀` clamped at zero. The flag reports whether the raw
/// value was negative.
pub fn noise_variance_moment(moments: &GroupMoments, beta: &[f64]) -> (f64, bool) {
    let raw = raw_noise_variance(moments, beta);
    (raw.max(0.0), raw < 0.0)
}

struct WeightedMeans {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
}

fn weighted_means(moments: &GroupMoments, w: &[f64]) -> WeightedMeans {
    let gs = moments.groups();
    let mu_x: f64 = gs.iter().zip(w).map(|(g, w)| w * g.mu_x[0]).sum();
    let mu_y: f64 = gs.iter().zip(w).map(|(g, w)| w * g.mu_y).sum();
    let var_x = gs
        .iter()
        .zip(w)
        .map(|(g, w)| w * (g.mu_x[0] - mu_x) * (g.mu_x[0] - mu_x))
        .sum();
    WeightedMeans { mu_x, mu_y, var_x }
}

fn require_simple(moments: &GroupMoments) -> Result<()> {
    if moments.d() == 1 {
        Ok(())
    } else {
        Err(Error::UnsupportedDesign(format!(
            "closed forms need a single covariate, got d = {}",
            moments.d()
        )))
    }
}

/// Closed-form moment estimator for a single covariate.
pub fn fit_simple(moments: &GroupMoments, weights: &WeightVector) -> Result<RegressionFit> {
    require_simple(moments)?;
    weights.check_len(moments.k())?;
    build_design(moments, false)?.ensure_identifiable(weights.as_slice())?;
    let w = weights.as_slice();
    let m = weighted_means(moments, w);
    if !(m.var_x > 0.0) {
        return Err(Error::RankDeficient("group means of the covariate are all equal".into()));
    }
    let cov: f64 = moments
        .groups()
        .iter()
        .zip(w)
        .map(|(g, w)| w * (g.mu_x[0] - m.mu_x) * (g.mu_y - m.mu_y))
        .sum();
    let beta1 = cov / m.var_x;
    let beta0 = m.mu_y - beta1 * m.mu_x;
    Ok(with_noise_variance(moments, vec![beta0, beta1]))
}

/// Plug-in asymptotic variance of `√n (β̂₁ − β₁)` for a single covariate:
///
/// `Var_w(X)⁻² Σ_k w_k² (β₁² σ²_{X,k} + σ²_{Y,k}) (μ_X^k − μ_{X,w})²`.
pub fn asymptotic_slope_variance(moments: &GroupMoments, weights: &WeightVector, beta1: f64) -> Result<f64> {
    require_simple(moments)?;
    weights.check_len(moments.k())?;
    let w = weights.as_slice();
    let m = weighted_means(moments, w);
    if !(m.var_x > 0.0) {
        return Err(Error::RankDeficient("weighted variance of the covariate means is zero".into()));
    }
    let sum: f64 = moments
        .groups()
        .iter()
        .zip(w)
        .map(|(g, w)| {
            let dev = g.mu_x[0] - m.mu_x;
            w * w * (beta1 * beta1 * g.gamma_x[(0, 0)] + g.sigma2_y) * dev * dev
        })
        .sum();
    Ok(sum / (m.var_x * m.var_x))
}

/// `center ± z_{1-α/2} √(variance / n)`.
pub fn normal_interval(center: f64, variance: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if !(variance >= 0.0) || n == 0 {
        return Err(Error::Domain(format!("variance {variance} with n = {n}")));
    }
    let half = normal_quantile(0.5 + level / 2.0) * (variance / n as f64).sqrt();
    Ok((center - half, center + half))
}

/// Asymptotic normal interval for the slope, using the plug-in variance.
/// Requires every group to have the same size in both margins.
pub fn asymptotic_ci_simple(
    fit: &RegressionFit,
    moments: &GroupMoments,
    weights: &WeightVector,
    level: f64,
) -> Result<ConfidenceReport> {
    let n = moments.common_group_size().ok_or_else(|| {
        Error::UnsupportedDesign("asymptotic intervals need a common per-group size in both margins".into())
    })?;
    let variance = asymptotic_slope_variance(moments, weights, fit.slope())?;
    let (lo, hi) = normal_interval(fit.slope(), variance, n, level)?;
    Ok(ConfidenceReport {
        method: Method::Moment,
        kind: IntervalKind::Asymptotic,
        level,
        intervals: vec![CoefficientInterval::new(1, fit.slope(), lo, hi)],
    })
}
