//! Stratified percentile bootstrap.
//!
//! Each replicate redraws, within every group and with replacement, `n_y^k`
//! responses and, independently, `n_x^k` covariate rows. Groups never mix
//! and covariates are never paired with responses, so the resampling keeps
//! the product structure of the two margins. Every `(replicate, attempt,
//! group, margin)` draws from its own random stream, making results
//! independent of the number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{compute_group_moments, GroupBlock, GroupMoments, GroupedSample};
use crate::error::{Error, Result};
use crate::fit::{check_level, CoefficientInterval, ConfidenceReport, IntervalKind, RegressionFit};
use crate::moment::{fit_moment, WeightVector};
use crate::ot::{fit_ot, GroupWeights, OtConfig};
use crate::rng::{stream, MARGIN_X, MARGIN_Y};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
    /// Total number of extra draws allowed across all replicates to replace
    /// rank-deficient resamples.
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 500,
            level: 0.95,
            seed: 0,
            max_redraws: 100,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_boot < 2 {
            return Err(Error::InvalidConfig(format!("n_boot = {} must be at least 2", self.n_boot)));
        }
        check_level(self.level)
    }
}

/// The estimator refitted on every bootstrap replicate.
#[derive(Debug, Clone)]
pub enum Estimator {
    Moment(WeightVector),
    Ot { pi: GroupWeights, config: OtConfig },
}

impl Estimator {
    pub fn fit(&self, moments: &GroupMoments) -> Result<RegressionFit> {
        match self {
            Estimator::Moment(w) => fit_moment(moments, w),
            Estimator::Ot { pi, config } => fit_ot(moments, pi, None, config).map(|(fit, _)| fit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Fit on the original sample; the intervals are centered on it.
    pub base_fit: RegressionFit,
    /// One row `(β*, σ²*)` per replicate.
    pub estimates: Vec<Vec<f64>>,
    /// Resamples discarded as degenerate and redrawn.
    pub dropped: usize,
    /// Replicate fits whose optimizer stopped before the tolerance.
    pub not_converged: usize,
    pub report: ConfidenceReport,
}

/// Identifies one resampling draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawId {
    pub replicate: u64,
    pub attempt: u64,
}

/// Draws one stratified resample of `sample`.
pub fn resample_stratified(sample: &GroupedSample, seed: u64, draw: DrawId) -> GroupedSample {
    let d = sample.d();
    let groups = sample
        .groups()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let key = |margin| [draw.replicate, draw.attempt, k as u64, margin];
            let mut rx = stream(seed, &key(MARGIN_X));
            let mut x = Vec::with_capacity(g.x_flat().len());
            for _ in 0..g.n_x() {
                x.extend_from_slice(g.x_row(rx.random_range(0..g.n_x())));
            }
            let mut ry = stream(seed, &key(MARGIN_Y));
            let y = (0..g.n_y()).map(|_| g.y()[ry.random_range(0..g.n_y())]).collect();
            GroupBlock::from_flat(g.label(), d, x, y).expect("resampling preserves validity")
        })
        .collect();
    GroupedSample::new(groups).expect("resampling preserves validity")
}

fn is_degenerate(e: &Error) -> bool {
    matches!(e, Error::RankDeficient(_) | Error::Domain(_))
}

struct Replicate {
    fit: RegressionFit,
    redraws: usize,
}

/// Percentile bootstrap intervals for every coefficient of `estimator`.
///
/// Resamples whose fit is degenerate (rank-deficient design) are redrawn;
/// the run fails with `TooManyDegenerate` once the redraws exceed
/// `config.max_redraws` in total.
pub fn bootstrap_estimator(
    sample: &GroupedSample,
    estimator: &Estimator,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    config.validate()?;
    let base_fit = estimator.fit(&compute_group_moments(sample))?;

    let replicates: Vec<Result<Replicate>> = (0..config.n_boot as u64)
        .into_par_iter()
        .map(|replicate| {
            let mut redraws = 0;
            loop {
                let draw = DrawId {
                    replicate,
                    attempt: redraws as u64,
                };
                let resampled = resample_stratified(sample, config.seed, draw);
                match estimator.fit(&compute_group_moments(&resampled)) {
                    Ok(fit) => return Ok(Replicate { fit, redraws }),
                    Err(e) if is_degenerate(&e) && redraws < config.max_redraws => redraws += 1,
                    Err(e) if is_degenerate(&e) => {
                        return Err(Error::TooManyDegenerate {
                            redraws: redraws + 1,
                            budget: config.max_redraws,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();

    let mut fits = Vec::with_capacity(config.n_boot);
    let mut dropped = 0;
    for r in replicates {
        let r = r?;
        dropped += r.redraws;
        fits.push(r.fit);
    }
    if dropped > config.max_redraws {
        return Err(Error::TooManyDegenerate {
            redraws: dropped,
            budget: config.max_redraws,
        });
    }

    let not_converged = fits
        .iter()
        .filter(|f| f.diagnostics.converged == Some(false))
        .count();
    let estimates: Vec<Vec<f64>> = fits.iter().map(RegressionFit::params).collect();
    let intervals = (0..base_fit.beta.len())
        .map(|j| {
            let column: Vec<f64> = estimates.iter().map(|row| row[j]).collect();
            let (lo, hi) = percentile_interval(&column, config.level)?;
            Ok(CoefficientInterval::new(j, base_fit.beta[j], lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ConfidenceReport {
        method: base_fit.method,
        kind: IntervalKind::Bootstrap,
        level: config.level,
        intervals,
    };
    Ok(BootstrapResult {
        base_fit,
        estimates,
        dropped,
        not_converged,
        report,
    })
}

/// Quantile with linear interpolation between order statistics at the
/// 0-based position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = (h.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let t = h - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    let diff = b - a;
    // Same two-sided lerp as NumPy, exact at both ends.
    if t >= 0.5 {
        b - diff * (1.0 - t)
    } else {
        a + diff * t
    }
}

/// Equal-tailed percentile interval of `draws` at `level`.
pub fn percentile_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if draws.len() < 2 {
        return Err(Error::InsufficientDraws { got: draws.len() });
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::InsufficientDraws {
            got: draws.iter().filter(|v| v.is_finite()).count(),
        });
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn percentile_of_one_to_hundred() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = percentile_interval(&draws, 0.95).unwrap();
        assert_abs_diff_eq!(lo, 3.475, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 97.525, epsilon = 1e-12);
    }

    #[test]
    fn percentile_edge_cases() {
        assert_eq!(percentile_interval(&[4.2; 10], 0.9).unwrap(), (4.2, 4.2));
        assert!(matches!(percentile_interval(&[1.0], 0.9), Err(Error::InsufficientDraws { got: 1 })));
        assert!(matches!(
            percentile_interval(&[1.0, f64::NAN, 2.0], 0.9),
            Err(Error::InsufficientDraws { .. })
        ));
        assert!(matches!(percentile_interval(&[1.0, 2.0], 1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn percentile_matches_hand_interpolation() {
        // n = 5, p = 0.05: h = 0.2 -> 10 + 0.2 * (20 - 10)
        let (lo, hi) = percentile_interval(&[50.0, 10.0, 40.0, 20.0, 30.0], 0.9).unwrap();
        assert_abs_diff_eq!(lo, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 48.0, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = BootstrapConfig::default();
        assert!(c.validate().is_ok());
        c.n_boot = 1;
        assert!(c.validate().is_err());
        c.n_boot = 10;
        c.level = 0.0;
        assert!(c.validate().is_err());
    }
}
