//! Monte Carlo coverage study.
//!
//! Group `k` (1-based) has covariate law `N(9 + k, σ²_X)`. Responses are
//! generated from an independent copy `X'` of the covariate,
//! `Y = β₀ + β₁ X' + ε` with `σ²_ε = β₁² σ²_X / (ρ² − 1)`, so `ρ = σ_Y / σ_ε`.
//! Only `(X, Y)` enters the unlinked estimators; the pairs `(X', Y)` feed the
//! simultaneous-observation baseline.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_estimator, BootstrapConfig, Estimator};
use crate::data::{build_design, compute_group_moments, GroupBlock, GroupMoments, GroupedSample};
use crate::dist::student_t_quantile;
use crate::error::{Error, Result};
use crate::fit::{check_level, CoefficientInterval, ConfidenceReport, FitDiagnostics, IntervalKind, Method, RegressionFit};
use crate::linalg::ols;
use crate::moment::{asymptotic_ci_simple, fit_moment, noise_variance_moment, WeightVector};
use crate::ot::{GroupWeights, OtConfig};
use crate::rng::{derive_seed, stream};

const TAG_DATA: u64 = 1;
const TAG_BOOT: u64 = 2;

/// Variance/noise combinations of the study grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn sigma2_x(self) -> f64 {
        match self {
            Scenario::S1 | Scenario::S3 => 0.75,
            Scenario::S2 | Scenario::S4 => 2.0,
        }
    }

    pub fn rho(self) -> f64 {
        match self {
            Scenario::S1 | Scenario::S2 => 1.1,
            Scenario::S3 | Scenario::S4 => 1.01,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {s:?} (expected S1..S4)")))
    }
}

/// Interval procedures compared by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMethod {
    MmAsymptotic,
    MmBootstrap,
    OtBootstrap,
    NaiveStudent,
    Simultaneous,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 5] = [
        StudyMethod::MmAsymptotic,
        StudyMethod::MmBootstrap,
        StudyMethod::OtBootstrap,
        StudyMethod::NaiveStudent,
        StudyMethod::Simultaneous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyMethod::MmAsymptotic => "mm-asymptotic",
            StudyMethod::MmBootstrap => "mm-bootstrap",
            StudyMethod::OtBootstrap => "ot-bootstrap",
            StudyMethod::NaiveStudent => "naive-student",
            StudyMethod::Simultaneous => "simultaneous",
        }
    }
}

impl std::str::FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown study method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Observations per group, in each margin.
    pub n: usize,
    pub k: usize,
    pub sigma2_x: f64,
    pub rho: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub n_sim: usize,
    pub n_boot: usize,
    pub methods: Vec<StudyMethod>,
    pub seed: u64,
    pub level: f64,
    pub max_redraws: usize,
}

impl ScenarioConfig {
    /// One cell of the reference grid with 500 replications and 500
    /// bootstrap draws.
    pub fn cell(k: usize, n: usize, scenario: Scenario) -> Self {
        Self {
            n,
            k,
            sigma2_x: scenario.sigma2_x(),
            rho: scenario.rho(),
            beta0: 1.0,
            beta1: 2.0,
            n_sim: 500,
            n_boot: 500,
            methods: StudyMethod::ALL.to_vec(),
            seed: 0,
            level: 0.95,
            max_redraws: 100,
        }
    }

    /// The sixteen cells `K ∈ {4, 10} × n ∈ {10, 30} × S1..S4`.
    pub fn grid() -> Vec<(Scenario, Self)> {
        let mut cells = Vec::with_capacity(16);
        for scenario in Scenario::ALL {
            for k in [4, 10] {
                for n in [10, 30] {
                    cells.push((scenario, Self::cell(k, n, scenario)));
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return bad(format!("rho = {} must be finite and > 1", self.rho));
        }
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.k < 2 {
            return bad(format!("K = {} must be at least 2", self.k));
        }
        if !(self.sigma2_x > 0.0) || !self.sigma2_x.is_finite() {
            return bad(format!("sigma2_x = {} must be finite and positive", self.sigma2_x));
        }
        if !self.beta0.is_finite() || !self.beta1.is_finite() {
            return bad("regression coefficients must be finite".into());
        }
        if self.n_sim == 0 {
            return bad("n_sim must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("no study method selected".into());
        }
        if self.methods.contains(&StudyMethod::NaiveStudent) && self.k < 3 {
            return bad(format!("naive-student needs K >= 3, got {}", self.k));
        }
        check_level(self.level)?;
        if self.uses_bootstrap() {
            self.bootstrap(0).validate()?;
        }
        Ok(())
    }

    /// `β₁² σ²_X / (ρ² − 1)`.
    pub fn noise_variance(&self) -> f64 {
        self.beta1 * self.beta1 * self.sigma2_x / (self.rho * self.rho - 1.0)
    }

    fn uses_bootstrap(&self) -> bool {
        self.methods
            .iter()
            .any(|m| matches!(m, StudyMethod::MmBootstrap | StudyMethod::OtBootstrap))
    }

    fn bootstrap(&self, replicate: u64) -> BootstrapConfig {
        BootstrapConfig {
            n_boot: self.n_boot,
            level: self.level,
            seed: derive_seed(self.seed, &[TAG_BOOT, replicate]),
            max_redraws: self.max_redraws,
        }
    }
}

/// Covariate/response pairs observed on the same units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedSample {
    pub d: usize,
    /// Row-major `n × d`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub sample: GroupedSample,
    pub linked: LinkedSample,
}

/// Draws replication `replicate` of the study design.
pub fn simulate_dataset(cfg: &ScenarioConfig, replicate: u64) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let sd_x = cfg.sigma2_x.sqrt();
    let noise = Normal::new(0.0, cfg.noise_variance().sqrt()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut groups = Vec::with_capacity(cfg.k);
    let mut linked_x = Vec::with_capacity(cfg.n * cfg.k);
    let mut linked_y = Vec::with_capacity(cfg.n * cfg.k);
    for k in 0..cfg.k {
        let law = Normal::new(10.0 + k as f64, sd_x).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut rx = stream(cfg.seed, &[TAG_DATA, replicate, k as u64, 0]);
        let x: Vec<f64> = (0..cfg.n).map(|_| law.sample(&mut rx)).collect();
        let mut ry = stream(cfg.seed, &[TAG_DATA, replicate, k as u64, 1]);
        let mut y = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let x_prime = law.sample(&mut ry);
            let yi = cfg.beta0 + cfg.beta1 * x_prime + noise.sample(&mut ry);
            linked_x.push(x_prime);
            linked_y.push(yi);
            y.push(yi);
        }
        groups.push(GroupBlock::from_flat(format!("g{}", k + 1), 1, x, y)?);
    }
    Ok(SimulatedDataset {
        sample: GroupedSample::new(groups)?,
        linked: LinkedSample {
            d: 1,
            x: linked_x,
            y: linked_y,
        },
    })
}

fn student_report(method: Method, level: f64, beta: &DVector<f64>, se: &DVector<f64>, df: usize) -> ConfidenceReport {
    let t = student_t_quantile(0.5 + level / 2.0, df as f64);
    let intervals = (0..beta.len())
        .map(|j| {
            let half = t * se[j];
            CoefficientInterval::new(j, beta[j], beta[j] - half, beta[j] + half)
        })
        .collect();
    ConfidenceReport {
        method,
        kind: IntervalKind::Student,
        level,
        intervals,
    }
}

/// Ordinary least squares on the group means with Student intervals on
/// `K − (d + 1)` degrees of freedom. The noise variance is the moment
/// plug-in at the fitted coefficients.
pub fn fit_naive_student(moments: &GroupMoments, level: f64) -> Result<(RegressionFit, ConfidenceReport)> {
    check_level(level)?;
    let k = moments.k();
    let p = moments.d() + 1;
    if k < p + 1 {
        return Err(Error::InsufficientGroups {
            groups: k,
            df: k as i64 - p as i64,
        });
    }
    let design = build_design(moments, false)?;
    let means = DVector::from_iterator(k, moments.groups().iter().map(|g| g.mu_y));
    let fit = ols(design.matrix(), &means)?;
    let beta: Vec<f64> = fit.beta.iter().copied().collect();
    let (sigma2_eps, clamped) = noise_variance_moment(moments, &beta);
    let report = student_report(Method::NaiveStudent, level, &fit.beta, &fit.std_errors, fit.df);
    let regression = RegressionFit {
        beta,
        sigma2_eps,
        method: Method::NaiveStudent,
        diagnostics: FitDiagnostics {
            clamped,
            ..Default::default()
        },
    };
    Ok((regression, report))
}

/// Pooled OLS on linked pairs with Student intervals on `n − (d + 1)`
/// degrees of freedom.
pub fn fit_simultaneous(pairs: &LinkedSample, level: f64) -> Result<(RegressionFit, ConfidenceReport)> {
    check_level(level)?;
    let d = pairs.d;
    let n = pairs.y.len();
    if pairs.x.len() != n * d {
        return Err(Error::InvalidSample(format!(
            "{} covariate values for {n} responses with d = {d}",
            pairs.x.len()
        )));
    }
    if pairs.x.iter().chain(&pairs.y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "linked sample".into(),
        });
    }
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { pairs.x[i * d + j - 1] });
    let b = DVector::from_column_slice(&pairs.y);
    let fit = ols(&a, &b)?;
    let report = student_report(Method::Simultaneous, level, &fit.beta, &fit.std_errors, fit.df);
    let regression = RegressionFit {
        beta: fit.beta.iter().copied().collect(),
        sigma2_eps: fit.rss / fit.df as f64,
        method: Method::Simultaneous,
        diagnostics: FitDiagnostics::default(),
    };
    Ok((regression, report))
}

/// Slope interval of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub method: StudyMethod,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
    pub significant: bool,
}

/// Aggregates over the replications where the method succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: StudyMethod,
    pub coverage: f64,
    pub mean_amplitude: f64,
    pub power: f64,
    pub n_effective: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub config: ScenarioConfig,
    pub noise_variance: f64,
    pub metrics: Vec<MethodMetrics>,
    pub records: Vec<ReplicateRecord>,
}

impl StudyMetrics {
    pub fn method(&self, m: StudyMethod) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|x| x.method == m)
    }
}

fn slope_interval(report: &ConfidenceReport) -> Result<CoefficientInterval> {
    report
        .coefficient(1)
        .copied()
        .ok_or_else(|| Error::InvalidSample("report has no slope interval".into()))
}

fn run_method(
    cfg: &ScenarioConfig,
    replicate: u64,
    data: &SimulatedDataset,
    moments: &GroupMoments,
    method: StudyMethod,
) -> Result<CoefficientInterval> {
    match method {
        StudyMethod::MmAsymptotic => {
            let w = WeightVector::uniform(cfg.k);
            let fit = fit_moment(moments, &w)?;
            slope_interval(&asymptotic_ci_simple(&fit, moments, &w, cfg.level)?)
        }
        StudyMethod::MmBootstrap => {
            let est = Estimator::Moment(WeightVector::uniform(cfg.k));
            slope_interval(&bootstrap_estimator(&data.sample, &est, &cfg.bootstrap(replicate))?.report)
        }
        StudyMethod::OtBootstrap => {
            let est = Estimator::Ot {
                pi: GroupWeights::uniform(cfg.k),
                config: OtConfig {
                    check_hessian: false,
                    ..OtConfig::default()
                },
            };
            slope_interval(&bootstrap_estimator(&data.sample, &est, &cfg.bootstrap(replicate))?.report)
        }
        StudyMethod::NaiveStudent => slope_interval(&fit_naive_student(moments, cfg.level)?.1),
        StudyMethod::Simultaneous => slope_interval(&fit_simultaneous(&data.linked, cfg.level)?.1),
    }
}

/// Runs `n_sim` replications of the design and aggregates coverage of `β₁`,
/// mean interval width and power per method. A method that fails on a
/// replication is excluded from that replication's aggregates and counted
/// in `failures`.
pub fn run_study(cfg: &ScenarioConfig) -> Result<StudyMetrics> {
    cfg.validate()?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();

    let per_replicate: Vec<Vec<(StudyMethod, Option<ReplicateRecord>)>> = (0..cfg.n_sim as u64)
        .into_par_iter()
        .map(|replicate| {
            let data = simulate_dataset(cfg, replicate)?;
            let moments = compute_group_moments(&data.sample);
            Ok(methods
                .iter()
                .map(|&method| {
                    let record = run_method(cfg, replicate, &data, &moments, method)
                        .ok()
                        .map(|ci| ReplicateRecord {
                            replicate,
                            method,
                            estimate: ci.estimate,
                            lo: ci.lo,
                            hi: ci.hi,
                            covered: ci.contains(cfg.beta1),
                            significant: ci.significant,
                        });
                    (method, record)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let metrics = methods
        .iter()
        .map(|&method| {
            let outcomes: Vec<&Option<ReplicateRecord>> = per_replicate
                .iter()
                .flat_map(|r| r.iter().filter(|(m, _)| *m == method).map(|(_, rec)| rec))
                .collect();
            let ok: Vec<&ReplicateRecord> = outcomes.iter().filter_map(|r| r.as_ref()).collect();
            let n_eff = ok.len();
            let rate = |f: fn(&ReplicateRecord) -> bool| {
                if n_eff == 0 {
                    f64::NAN
                } else {
                    ok.iter().filter(|r| f(r)).count() as f64 / n_eff as f64
                }
            };
            MethodMetrics {
                method,
                coverage: rate(|r| r.covered),
                mean_amplitude: if n_eff == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| r.hi - r.lo).sum::<f64>() / n_eff as f64
                },
                power: rate(|r| r.significant),
                n_effective: n_eff,
                failures: outcomes.len() - n_eff,
            }
        })
        .collect();

    let records = per_replicate
        .into_iter()
        .flatten()
        .filter_map(|(_, rec)| rec)
        .collect();
    Ok(StudyMetrics {
        config: cfg.clone(),
        noise_variance: cfg.noise_variance(),
        metrics,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(scenario: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            n_sim: 20,
            n_boot: 50,
            ..ScenarioConfig::cell(4, 10, scenario)
        }
    }

    #[test]
    fn noise_variance_formula() {
        // 4 * 0.75 / (1.21 - 1)
        assert_abs_diff_eq!(small(Scenario::S1).noise_variance(), 3.0 / 0.21, epsilon = 1e-12);
    }

    #[test]
    fn config_rejects_pole_and_tiny_designs() {
        let mut c = small(Scenario::S1);
        c.rho = 1.0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = small(Scenario::S1);
        c.n = 1;
        assert!(c.validate().is_err());
        let mut c = small(Scenario::S1);
        c.k = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let c = small(Scenario::S2);
        let a = simulate_dataset(&c, 3).unwrap();
        let b = simulate_dataset(&c, 3).unwrap();
        assert_eq!(a.sample, b.sample);
        assert_eq!(a.sample.k(), 4);
        assert!(a.sample.groups().iter().all(|g| g.n_x() == 10 && g.n_y() == 10));
        assert_eq!(a.linked.y.len(), 40);
        assert_ne!(a.sample, simulate_dataset(&c, 4).unwrap().sample);
    }

    #[test]
    fn simultaneous_examples() {
        let two = LinkedSample {
            d: 1,
            x: vec![0.0, 1.0, 2.0],
            y: vec![1.0, 3.0, 5.0],
        };
        let (fit, report) = fit_simultaneous(&two, 0.95).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta[1], 2.0, epsilon = 1e-12);
        assert!(report.intervals.iter().all(|c| c.width() < 1e-10));
        let three = LinkedSample {
            d: 1,
            x: vec![0.0, 1.0, 2.0],
            y: vec![0.0, 1.0, 4.0],
        };
        let (fit, _) = fit_simultaneous(&three, 0.95).unwrap();
        assert_abs_diff_eq!(fit.beta[0], -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn simultaneous_rejects_collinear_covariate() {
        let flat = LinkedSample {
            d: 1,
            x: vec![1.0; 4],
            y: vec![0.0, 1.0, 2.0, 3.0],
        };
        assert!(matches!(fit_simultaneous(&flat, 0.95), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn small_study_is_reproducible() {
        let c = ScenarioConfig {
            methods: vec![StudyMethod::MmAsymptotic, StudyMethod::MmBootstrap, StudyMethod::NaiveStudent],
            ..small(Scenario::S1)
        };
        let a = run_study(&c).unwrap();
        let b = run_study(&c).unwrap();
        assert_eq!(a, b);
        for m in &a.metrics {
            assert_eq!(m.n_effective + m.failures, c.n_sim);
            assert!((0.0..=1.0).contains(&m.coverage) && (0.0..=1.0).contains(&m.power));
        }
    }
}
