//! Linear regression when the covariates and the response are measured on
//! disjoint samples that share only a categorical group label.
//!
//! Two estimators are provided: a weighted method-of-moments fit on the
//! group means ([`moment`]) and a minimum Wasserstein-distance fit on the
//! first two group moments ([`ot`]). Confidence intervals come from a
//! stratified percentile bootstrap ([`bootstrap`]) and, for a single
//! covariate, from the plug-in asymptotic variance of the moment slope.

pub mod bootstrap;
pub mod cli;
pub mod data;
pub mod dist;
pub mod error;
pub mod fit;
pub mod io;
mod linalg;
pub mod moment;
pub mod ot;
pub mod rng;
pub mod simulation;

pub use bootstrap::{
    bootstrap_estimator, percentile_interval, resample_stratified, BootstrapConfig, BootstrapResult, DrawId, Estimator,
};
pub use data::{
    build_design, compute_group_moments, standardize, DesignMatrix, GroupBlock, GroupMoments, GroupStats,
    GroupedSample, PooledStats, Scaling,
};
pub use error::{Error, ErrorCategory, Result};
pub use io::{read_unlinked_csv, write_unlinked_csv};
pub use fit::{CoefficientInterval, ConfidenceReport, FitDiagnostics, IntervalKind, Method, RegressionFit};
pub use moment::{
    asymptotic_ci_simple, asymptotic_slope_variance, fit_moment, fit_simple, noise_variance_moment, WeightVector,
};
pub use ot::{
    fit_ot, wasserstein_gradient, wasserstein_hessian, wasserstein_loss, GroupWeights, OtConfig, OtFitDiagnostics,
    OtParams,
};
pub use simulation::{
    fit_naive_student, fit_simultaneous, run_study, simulate_dataset, LinkedSample, MethodMetrics, ReplicateRecord,
    Scenario, ScenarioConfig, SimulatedDataset, StudyMethod, StudyMetrics,
};
