#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use unlinked_regress::{GroupMoments, GroupStats};

/// Moments built from explicit per-group values, `n` observations per margin.
pub fn moments(mu_x: &[Vec<f64>], gamma_x: &[DMatrix<f64>], mu_y: &[f64], sigma2_y: &[f64], n: usize) -> GroupMoments {
    let groups = (0..mu_x.len())
        .map(|k| {
            GroupStats::new(
                format!("g{k}"),
                n,
                n,
                DVector::from_column_slice(&mu_x[k]),
                gamma_x[k].clone(),
                mu_y[k],
                sigma2_y[k],
            )
            .unwrap()
        })
        .collect();
    GroupMoments::from_groups(groups).unwrap()
}

/// Positive-definite `d × d` matrix `L Lᵀ + δ I` from a flat seed vector.
pub fn spd(d: usize, seed: &[f64], ridge: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |i, j| if j <= i { seed[i * d + j] } else { 0.0 });
    &l * l.transpose() + DMatrix::identity(d, d) * ridge
}

/// Moments satisfying the model exactly: `μ_Y = β₀ + β₋₀ᵀμ_X` and
/// `σ²_Y = β₋₀ᵀΓβ₋₀ + σ²` in every group.
pub fn population_moments(mu_x: &[Vec<f64>], gamma_x: &[DMatrix<f64>], beta: &[f64], sigma2: f64) -> GroupMoments {
    let slope = DVector::from_column_slice(&beta[1..]);
    let mu_y: Vec<f64> = mu_x
        .iter()
        .map(|m| beta[0] + slope.dot(&DVector::from_column_slice(m)))
        .collect();
    let s2: Vec<f64> = gamma_x
        .iter()
        .map(|g| (slope.transpose() * g * &slope)[(0, 0)] + sigma2)
        .collect();
    moments(mu_x, gamma_x, &mu_y, &s2, 50)
}

/// Random moment input with `k` groups and `d` covariates.
#[derive(Debug, Clone)]
pub struct MomentCase {
    pub mu_x: Vec<Vec<f64>>,
    pub gamma_x: Vec<DMatrix<f64>>,
    pub mu_y: Vec<f64>,
    pub sigma2_y: Vec<f64>,
}

impl MomentCase {
    pub fn build(&self) -> GroupMoments {
        moments(&self.mu_x, &self.gamma_x, &self.mu_y, &self.sigma2_y, 20)
    }
}

pub fn moment_case(k: std::ops::RangeInclusive<usize>, d: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = MomentCase> {
    (k, d).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), k),
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d * d), k),
            prop::collection::vec(-5.0..5.0f64, k),
            prop::collection::vec(0.2..4.0f64, k),
        )
            .prop_map(move |(mu_x, seeds, mu_y, sigma2_y)| MomentCase {
                mu_x,
                gamma_x: seeds.iter().map(|s| spd(d, s, 0.2)).collect(),
                mu_y,
                sigma2_y,
            })
    })
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
