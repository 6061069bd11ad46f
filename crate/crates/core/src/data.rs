//! Grouped unlinked observations and their empirical moments.
//!
//! Every group carries two independent samples: covariate rows `x` and
//! responses `y`. They are never paired. All variances use the `1/n`
//! divisor, so `sigma2_y` of a two-point group `{0, 2}` is `1`, not `2`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number ceiling of the weighted normal matrix above which the
/// group-mean design is treated as rank deficient.
pub const MAX_CONDITION: f64 = 1e10;

/// One group: `n_x` covariate rows of width `d` and `n_y` responses.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlock {
    label: String,
    d: usize,
    /// Row-major `n_x * d`.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl GroupBlock {
    pub fn new(label: impl Into<String>, x_rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let label = label.into();
        let d = x_rows.first().map(|r| r.len()).ok_or_else(|| {
            Error::InvalidSample(format!("group {label:?} has no covariate rows"))
        })?;
        if let Some((i, r)) = x_rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::InvalidSample(format!(
                "group {label:?}: row {i} has {} covariates, expected {d}",
                r.len()
            )));
        }
        let x = x_rows.iter().flatten().copied().collect();
        Self::from_flat(label, d, x, y)
    }

    /// Builds a block from a row-major covariate buffer.
    pub fn from_flat(label: impl Into<String>, d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if d == 0 {
            return Err(Error::InvalidSample(format!("group {label:?}: d must be at least 1")));
        }
        if x.is_empty() || x.len() % d != 0 {
            return Err(Error::InvalidSample(format!(
                "group {label:?}: covariate buffer of length {} is not a non-empty multiple of d = {d}",
                x.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::InvalidSample(format!("group {label:?} has no responses")));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("group {label:?}, x row {}, column {}", i / d, i % d),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("group {label:?}, y row {i}"),
            });
        }
        Ok(Self { label, d, x, y })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_x(&self) -> usize {
        self.x.len() / self.d
    }

    pub fn n_y(&self) -> usize {
        self.y.len()
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// The full unlinked data set: `K` groups sharing covariate dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    groups: Vec<GroupBlock>,
    d: usize,
}

impl GroupedSample {
    pub fn new(groups: Vec<GroupBlock>) -> Result<Self> {
        let d = groups
            .first()
            .map(GroupBlock::d)
            .ok_or_else(|| Error::InvalidSample("no groups".into()))?;
        let mut seen = HashSet::new();
        for g in &groups {
            if g.d() != d {
                return Err(Error::InvalidSample(format!(
                    "group {:?} has d = {}, expected {d}",
                    g.label(),
                    g.d()
                )));
            }
            if !seen.insert(g.label()) {
                return Err(Error::InvalidSample(format!("duplicate group label {:?}", g.label())));
            }
        }
        Ok(Self { groups, d })
    }

    pub fn groups(&self) -> &[GroupBlock] {
        &self.groups
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn n_x_total(&self) -> usize {
        self.groups.iter().map(GroupBlock::n_x).sum()
    }

    pub fn n_y_total(&self) -> usize {
        self.groups.iter().map(GroupBlock::n_y).sum()
    }
}

/// Empirical moments of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub label: String,
    pub n_x: usize,
    pub n_y: usize,
    pub mu_x: DVector<f64>,
    pub gamma_x: DMatrix<f64>,
    pub mu_y: f64,
    pub sigma2_y: f64,
}

impl GroupStats {
    /// Moments supplied directly (for instance population values). `gamma_x`
    /// is symmetrized and `sigma2_y` must be non-negative.
    pub fn new(
        label: impl Into<String>,
        n_x: usize,
        n_y: usize,
        mu_x: DVector<f64>,
        gamma_x: DMatrix<f64>,
        mu_y: f64,
        sigma2_y: f64,
    ) -> Result<Self> {
        let label = label.into();
        let d = mu_x.len();
        if gamma_x.shape() != (d, d) {
            return Err(Error::InvalidSample(format!(
                "group {label:?}: gamma_x is {:?}, expected ({d}, {d})",
                gamma_x.shape()
            )));
        }
        if n_x == 0 || n_y == 0 {
            return Err(Error::InvalidSample(format!("group {label:?}: empty margin")));
        }
        let finite = mu_x.iter().chain(gamma_x.iter()).all(|v| v.is_finite())
            && mu_y.is_finite()
            && sigma2_y.is_finite();
        if !finite {
            return Err(Error::NonFinite { location: format!("moments of group {label:?}") });
        }
        if sigma2_y < 0.0 {
            return Err(Error::InvalidSample(format!("group {label:?}: negative sigma2_y")));
        }
        Ok(Self {
            label,
            n_x,
            n_y,
            mu_x,
            gamma_x: symmetrize(gamma_x),
            mu_y,
            sigma2_y,
        })
    }

    /// Within-group standard deviation of the response.
    pub fn sigma_y(&self) -> f64 {
        self.sigma2_y.sqrt()
    }

    fn from_block(block: &GroupBlock) -> Self {
        let d = block.d();
        let n_x = block.n_x() as f64;
        let mut mu_x = DVector::zeros(d);
        for row in block.x_rows() {
            for (m, v) in mu_x.iter_mut().zip(row) {
                *m += v;
            }
        }
        mu_x /= n_x;

        // Centered accumulation; algebraically the mean-of-products minus
        // product-of-means form, with less cancellation.
        let mut gamma_x = DMatrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for row in block.x_rows() {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(mu_x.iter())) {
                *c = v - m;
            }
            for i in 0..d {
                for j in 0..=i {
                    gamma_x[(i, j)] += centered[i] * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                gamma_x[(j, i)] = gamma_x[(i, j)];
            }
        }
        gamma_x /= n_x;

        let (mu_y, sigma2_y) = mean_and_variance(block.y());
        Self {
            label: block.label().to_owned(),
            n_x: block.n_x(),
            n_y: block.n_y(),
            mu_x,
            gamma_x: symmetrize(gamma_x),
            mu_y,
            sigma2_y,
        }
    }
}

/// Sample-size weighted moments over all groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledStats {
    pub mu_x: DVector<f64>,
    pub gamma_x: DMatrix<f64>,
    pub mu_y: f64,
    pub sigma2_y: f64,
}

/// Per-group and pooled empirical moments: the sufficient statistics for
/// every estimator in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMoments {
    groups: Vec<GroupStats>,
    pooled: PooledStats,
    d: usize,
}

impl GroupMoments {
    /// Assembles moments from per-group statistics. Pooled moments are the
    /// `n^k / N` weighted within-group moments plus the between-group spread.
    pub fn from_groups(groups: Vec<GroupStats>) -> Result<Self> {
        let d = groups
            .first()
            .map(|g| g.mu_x.len())
            .ok_or_else(|| Error::InvalidSample("no groups".into()))?;
        if d == 0 || groups.iter().any(|g| g.mu_x.len() != d) {
            return Err(Error::InvalidSample("inconsistent covariate dimension".into()));
        }
        let nx: f64 = groups.iter().map(|g| g.n_x as f64).sum();
        let ny: f64 = groups.iter().map(|g| g.n_y as f64).sum();

        let mut mu_x = DVector::zeros(d);
        let mut mu_y = 0.0;
        for g in &groups {
            mu_x += &g.mu_x * (g.n_x as f64 / nx);
            mu_y += g.mu_y * (g.n_y as f64 / ny);
        }
        let mut gamma_x = DMatrix::zeros(d, d);
        let mut sigma2_y = 0.0;
        for g in &groups {
            let dx = &g.mu_x - &mu_x;
            gamma_x += (&g.gamma_x + &dx * dx.transpose()) * (g.n_x as f64 / nx);
            let dy = g.mu_y - mu_y;
            sigma2_y += (g.sigma2_y + dy * dy) * (g.n_y as f64 / ny);
        }
        Ok(Self {
            groups,
            pooled: PooledStats {
                mu_x,
                gamma_x: symmetrize(gamma_x),
                mu_y,
                sigma2_y,
            },
            d,
        })
    }

    pub fn groups(&self) -> &[GroupStats] {
        &self.groups
    }

    pub fn pooled(&self) -> &PooledStats {
        &self.pooled
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    /// The common per-group size when every `n_x^k` and `n_y^k` agree.
    pub fn common_group_size(&self) -> Option<usize> {
        let n = self.groups.first()?.n_y;
        self.groups
            .iter()
            .all(|g| g.n_x == n && g.n_y == n)
            .then_some(n)
    }
}

/// Computes all per-group and pooled moments of `sample`.
///
/// Pooled moments are computed directly from the concatenated raw data,
/// not from the group summaries.
pub fn compute_group_moments(sample: &GroupedSample) -> GroupMoments {
    let d = sample.d();
    let groups: Vec<GroupStats> = sample.groups().iter().map(GroupStats::from_block).collect();

    let nx = sample.n_x_total() as f64;
    let mut mu_x = DVector::zeros(d);
    for row in sample.groups().iter().flat_map(GroupBlock::x_rows) {
        for (m, v) in mu_x.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu_x /= nx;
    let mut gamma_x = DMatrix::zeros(d, d);
    for row in sample.groups().iter().flat_map(GroupBlock::x_rows) {
        let c = DVector::from_iterator(d, row.iter().zip(mu_x.iter()).map(|(v, m)| v - m));
        gamma_x += &c * c.transpose();
    }
    gamma_x /= nx;

    let all_y: Vec<f64> = sample.groups().iter().flat_map(|g| g.y().iter().copied()).collect();
    let (mu_y, sigma2_y) = mean_and_variance(&all_y);

    GroupMoments {
        groups,
        pooled: PooledStats {
            mu_x,
            gamma_x: symmetrize(gamma_x),
            mu_y,
            sigma2_y,
        },
        d,
    }
}

/// `K x (d+1)` matrix of group means with a leading column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    m: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn k(&self) -> usize {
        self.m.nrows()
    }

    pub fn d(&self) -> usize {
        self.m.ncols() - 1
    }

    /// Condition number of `Mᵀ diag(w) M`; infinite when singular.
    pub fn weighted_condition_number(&self, w: &[f64]) -> f64 {
        let mut mw = self.m.clone();
        for (mut row, wk) in mw.row_iter_mut().zip(w) {
            row *= *wk;
        }
        let normal = self.m.transpose() * mw;
        let eig = SymmetricEigen::new(normal).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if !(min > 0.0) || !max.is_finite() {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Fails with `RankDeficient` unless the weighted normal matrix is
    /// well conditioned.
    pub fn ensure_identifiable(&self, w: &[f64]) -> Result<()> {
        if self.k() < self.d() + 1 {
            return Err(Error::RankDeficient(format!(
                "{} groups cannot identify {} coefficients",
                self.k(),
                self.d() + 1
            )));
        }
        let cond = self.weighted_condition_number(w);
        if cond > MAX_CONDITION {
            return Err(Error::RankDeficient(format!(
                "condition number {cond:.3e} of the group-mean design exceeds {MAX_CONDITION:e}"
            )));
        }
        Ok(())
    }
}

/// Stacks the group means into the design matrix. With `check_rank`, the
/// rank is checked under equal group weights.
pub fn build_design(moments: &GroupMoments, check_rank: bool) -> Result<DesignMatrix> {
    let k = moments.k();
    let d = moments.d();
    let m = DMatrix::from_fn(k, d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            moments.groups()[i].mu_x[j - 1]
        }
    });
    let design = DesignMatrix { m };
    if check_rank {
        design.ensure_identifiable(&vec![1.0 / k as f64; k])?;
    }
    Ok(design)
}

/// Pooled location and scale used by [`standardize`], kept so that fitted
/// coefficients can be mapped back to the original units.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaling {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl Scaling {
    /// Maps coefficients fitted on standardized data to the original scale.
    pub fn unscale_beta(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(beta.len());
        let mut intercept = beta[0];
        for (j, b) in beta[1..].iter().enumerate() {
            intercept -= b * self.x_mean[j] / self.x_sd[j];
        }
        out.push(self.y_mean + self.y_sd * intercept);
        out.extend(beta[1..].iter().enumerate().map(|(j, b)| self.y_sd * b / self.x_sd[j]));
        out
    }

    pub fn unscale_sigma2(&self, sigma2: f64) -> f64 {
        self.y_sd * self.y_sd * sigma2
    }
}

/// Centers and scales every covariate column and the response by their
/// pooled (all-group) mean and `1/n` standard deviation.
pub fn standardize(sample: &GroupedSample) -> Result<(GroupedSample, Scaling)> {
    let moments = compute_group_moments(sample);
    let pooled = moments.pooled();
    let d = sample.d();
    let x_mean: Vec<f64> = pooled.mu_x.iter().copied().collect();
    let x_sd: Vec<f64> = (0..d).map(|j| pooled.gamma_x[(j, j)].max(0.0).sqrt()).collect();
    if let Some(j) = x_sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::ZeroVariance(format!("covariate column {}", j + 1)));
    }
    let y_sd = pooled.sigma2_y.max(0.0).sqrt();
    if !(y_sd > 0.0) {
        return Err(Error::ZeroVariance("response".into()));
    }
    let scaling = Scaling { x_mean, x_sd, y_mean: pooled.mu_y, y_sd };

    let groups = sample
        .groups()
        .iter()
        .map(|g| {
            let x = g
                .x_flat()
                .iter()
                .enumerate()
                .map(|(i, v)| (v - scaling.x_mean[i % d]) / scaling.x_sd[i % d])
                .collect();
            let y = g.y().iter().map(|v| (v - scaling.y_mean) / scaling.y_sd).collect();
            GroupBlock::from_flat(g.label(), d, x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((GroupedSample::new(groups)?, scaling))
}

fn mean_and_variance(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn block(label: &str, x: &[f64], y: &[f64]) -> GroupBlock {
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        GroupBlock::new(label, &rows, y.to_vec()).unwrap()
    }

    #[test]
    fn response_moments_use_population_divisor() {
        let s = GroupedSample::new(vec![block("a", &[0.0], &[1.0, 2.0, 3.0])]).unwrap();
        let m = compute_group_moments(&s);
        let g = &m.groups()[0];
        assert_abs_diff_eq!(g.mu_y, 2.0, epsilon = 1e-15);
        // (1 + 4 + 9) / 3 - 4
        assert_abs_diff_eq!(g.sigma2_y, 14.0 / 3.0 - 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.sigma2_y, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn single_response_has_zero_variance() {
        let s = GroupedSample::new(vec![block("a", &[1.0, 2.0], &[7.5])]).unwrap();
        assert_eq!(compute_group_moments(&s).groups()[0].sigma2_y, 0.0);
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let rows = vec![vec![0.1, -3.7]; 5];
        let s = GroupedSample::new(vec![GroupBlock::new("a", &rows, vec![1.0]).unwrap()]).unwrap();
        let m = compute_group_moments(&s);
        assert!(m.groups()[0].gamma_x.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn rejects_invalid_blocks() {
        assert!(matches!(
            GroupBlock::new("a", &[vec![1.0], vec![f64::NAN]], vec![1.0]),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            GroupBlock::new("a", &[vec![1.0]], vec![f64::INFINITY]),
            Err(Error::NonFinite { .. })
        ));
        assert!(GroupBlock::new("a", &[vec![1.0], vec![1.0, 2.0]], vec![1.0]).is_err());
        assert!(GroupBlock::new("a", &[vec![1.0]], vec![]).is_err());
        assert!(GroupBlock::new("a", &[], vec![1.0]).is_err());
        let dup = GroupedSample::new(vec![block("a", &[1.0], &[1.0]), block("a", &[2.0], &[2.0])]);
        assert!(matches!(dup, Err(Error::InvalidSample(_))));
    }

    #[test]
    fn design_examples() {
        let s = GroupedSample::new(vec![block("a", &[0.0], &[1.0]), block("b", &[1.0], &[3.0])]).unwrap();
        let d = build_design(&compute_group_moments(&s), true).unwrap();
        assert_eq!(d.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));

        let flat = GroupedSample::new(vec![
            block("a", &[5.0], &[1.0]),
            block("b", &[5.0], &[2.0]),
            block("c", &[4.0, 6.0], &[3.0]),
        ])
        .unwrap();
        assert!(matches!(
            build_design(&compute_group_moments(&flat), true),
            Err(Error::RankDeficient(_))
        ));

        let wide = GroupedSample::new(vec![
            GroupBlock::new("a", &[vec![0.0, 1.0]], vec![1.0]).unwrap(),
            GroupBlock::new("b", &[vec![1.0, 3.0]], vec![2.0]).unwrap(),
        ])
        .unwrap();
        assert!(matches!(
            build_design(&compute_group_moments(&wide), true),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn standardize_two_point_response() {
        let s = GroupedSample::new(vec![block("a", &[1.0, 3.0], &[0.0, 2.0])]).unwrap();
        let (z, scaling) = standardize(&s).unwrap();
        assert_eq!(z.groups()[0].y(), &[-1.0, 1.0]);
        assert_eq!(z.groups()[0].x_flat(), &[-1.0, 1.0]);
        assert_eq!(scaling.y_sd, 1.0);
    }

    #[test]
    fn standardize_is_idempotent() {
        let s = GroupedSample::new(vec![
            block("a", &[0.3, 1.9, 2.2], &[4.0, 1.0]),
            block("b", &[7.0, -1.0], &[0.5, 9.0, 2.0]),
        ])
        .unwrap();
        let (once, _) = standardize(&s).unwrap();
        let (twice, _) = standardize(&once).unwrap();
        for (a, b) in once.groups().iter().zip(twice.groups()) {
            for (u, v) in a.x_flat().iter().zip(b.x_flat()).chain(a.y().iter().zip(b.y())) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn standardize_rejects_constant_columns() {
        let s = GroupedSample::new(vec![block("a", &[1.0, 2.0], &[3.0, 3.0])]).unwrap();
        assert!(matches!(standardize(&s), Err(Error::ZeroVariance(_))));
        let s = GroupedSample::new(vec![block("a", &[2.0, 2.0], &[3.0, 4.0])]).unwrap();
        assert!(matches!(standardize(&s), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn common_group_size() {
        let s = GroupedSample::new(vec![block("a", &[0.0, 1.0], &[1.0, 2.0]), block("b", &[1.0, 2.0], &[3.0, 4.0])])
            .unwrap();
        assert_eq!(compute_group_moments(&s).common_group_size(), Some(2));
        let s = GroupedSample::new(vec![block("a", &[0.0, 1.0], &[1.0]), block("b", &[1.0, 2.0], &[3.0, 4.0])])
            .unwrap();
        assert_eq!(compute_group_moments(&s).common_group_size(), None);
    }
}
