//! Command-line front end: configuration, commands and report rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_estimator, BootstrapConfig, BootstrapResult, Estimator};
use crate::data::{build_design, compute_group_moments, standardize, GroupedSample, Scaling};
use crate::error::{Error, Result};
use crate::fit::{check_level, ConfidenceReport, IntervalKind, Method, RegressionFit};
use crate::io::read_unlinked_csv;
use crate::moment::{asymptotic_ci_simple, fit_moment, WeightVector};
use crate::ot::{fit_ot, GroupWeights, OtConfig};
use crate::simulation::{run_study, MethodMetrics, ReplicateRecord, Scenario, ScenarioConfig, StudyMethod};

pub const FIT_SCHEMA: &str = "unlinked-regress/fit/v1";
pub const STUDY_SCHEMA: &str = "unlinked-regress/study/v1";
pub const VALIDATE_SCHEMA: &str = "unlinked-regress/validate/v1";

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "UNLINKED_REGRESS_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Mm,
    Ot,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodSelection {
    Mm,
    Ot,
    Naive,
    All,
}

impl MethodSelection {
    fn expand(self) -> Vec<FitMethod> {
        match self {
            MethodSelection::Mm => vec![FitMethod::Mm],
            MethodSelection::Ot => vec![FitMethod::Ot],
            MethodSelection::Naive => vec![FitMethod::Naive],
            MethodSelection::All => vec![FitMethod::Mm, FitMethod::Ot, FitMethod::Naive],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Table,
}

fn default_methods() -> Vec<FitMethod> {
    MethodSelection::All.expand()
}
fn default_n_boot() -> usize {
    500
}
fn default_max_redraws() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}

/// Settings of the `fit` command, loadable from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub x: PathBuf,
    pub y: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<FitMethod>,
    /// Moment-estimator group weights; equal when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Wasserstein group weights; equal when absent.
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_max_redraws")]
    pub max_redraws: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: OutputFormat,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no method selected".into()));
        }
        check_level(self.level)?;
        self.bootstrap().validate()
    }

    fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            n_boot: self.n_boot,
            level: self.level,
            seed: self.seed,
            max_redraws: self.max_redraws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the JSON-serialized configuration.
    pub config_hash: String,
}

impl Provenance {
    fn of<T: Serialize>(config: &T, seed: u64) -> Self {
        let bytes = serde_json::to_vec(config).expect("configuration serializes");
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: hex::encode(Sha256::digest(&bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n_x: usize,
    pub n_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub d: usize,
    pub groups: Vec<GroupSummary>,
}

impl DataSummary {
    fn of(sample: &GroupedSample) -> Self {
        Self {
            d: sample.d(),
            groups: sample
                .groups()
                .iter()
                .map(|g| GroupSummary {
                    label: g.label().to_string(),
                    n_x: g.n_x(),
                    n_y: g.n_y(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub n_boot: usize,
    pub dropped: usize,
    pub not_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub fit: RegressionFit,
    pub intervals: Vec<ConfidenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
}

/// Output of the `fit` command. Estimates are on the standardized scale
/// when `scaling` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub provenance: Provenance,
    pub config: AnalysisConfig,
    pub data: DataSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
    pub results: Vec<MethodReport>,
}

fn bootstrap_summary(r: &BootstrapResult) -> BootstrapSummary {
    BootstrapSummary {
        n_boot: r.estimates.len(),
        dropped: r.dropped,
        not_converged: r.not_converged,
    }
}

/// Fits every configured method and collects its intervals.
pub fn cmd_fit(config: &AnalysisConfig) -> Result<ReportDocument> {
    config.validate()?;
    let raw = read_unlinked_csv(&config.x, &config.y)?;
    let (sample, scaling) = if config.standardize {
        let (s, sc) = standardize(&raw)?;
        (s, Some(sc))
    } else {
        (raw, None)
    };
    let moments = compute_group_moments(&sample);
    let k = sample.k();
    let weights = match &config.weights {
        Some(w) => WeightVector::new(w.clone())?,
        None => WeightVector::uniform(k),
    };
    let pi = match &config.pi {
        Some(p) => GroupWeights::new(p.clone())?,
        None => GroupWeights::uniform(k),
    };
    let boot = config.bootstrap();

    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let mut results = Vec::with_capacity(methods.len());
    for method in methods {
        let report = match method {
            FitMethod::Mm => {
                let fit = fit_moment(&moments, &weights)?;
                let b = bootstrap_estimator(&sample, &Estimator::Moment(weights.clone()), &boot)?;
                let mut intervals = vec![b.report.clone()];
                if sample.d() == 1 && moments.common_group_size().is_some() {
                    intervals.push(asymptotic_ci_simple(&fit, &moments, &weights, config.level)?);
                }
                MethodReport {
                    method: Method::Moment,
                    fit,
                    intervals,
                    bootstrap: Some(bootstrap_summary(&b)),
                }
            }
            FitMethod::Ot => {
                let ot_config = OtConfig::default();
                let (fit, diag) = fit_ot(&moments, &pi, None, &ot_config)?;
                if !diag.converged {
                    return Err(Error::NotConverged(format!(
                        "projected gradient norm {:e} after {} iterations",
                        diag.final_gradient_norm, diag.iterations
                    )));
                }
                let estimator = Estimator::Ot {
                    pi: pi.clone(),
                    config: ot_config,
                };
                let b = bootstrap_estimator(&sample, &estimator, &boot)?;
                MethodReport {
                    method: Method::Ot,
                    fit,
                    intervals: vec![b.report.clone()],
                    bootstrap: Some(bootstrap_summary(&b)),
                }
            }
            FitMethod::Naive => {
                let (fit, report) = crate::simulation::fit_naive_student(&moments, config.level)?;
                MethodReport {
                    method: Method::NaiveStudent,
                    fit,
                    intervals: vec![report],
                    bootstrap: None,
                }
            }
        };
        results.push(report);
    }
    Ok(ReportDocument {
        schema: FIT_SCHEMA.to_string(),
        provenance: Provenance::of(config, config.seed),
        config: config.clone(),
        data: DataSummary::of(&sample),
        scaling,
        results,
    })
}

fn kind_str(kind: IntervalKind) -> &'static str {
    match kind {
        IntervalKind::Asymptotic => "asymptotic",
        IntervalKind::Bootstrap => "bootstrap",
        IntervalKind::Student => "student",
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn render_fit(doc: &ReportDocument, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => to_json(doc),
        OutputFormat::Csv => {
            let mut out = String::from("method,interval,level,coefficient,estimate,lo,hi,significant,seed,config_hash\n");
            for r in &doc.results {
                for rep in &r.intervals {
                    for c in &rep.intervals {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{}",
                            r.method.as_str(),
                            kind_str(rep.kind),
                            rep.level,
                            c.coefficient,
                            c.estimate,
                            c.lo,
                            c.hi,
                            yes_no(c.significant),
                            doc.provenance.seed,
                            doc.provenance.config_hash
                        );
                    }
                }
            }
            out
        }
        OutputFormat::Table => {
            let mut out = format!(
                "seed {}  config {}  version {}\n",
                doc.provenance.seed, doc.provenance.config_hash, doc.provenance.version
            );
            let _ = writeln!(
                out,
                "{:<14} {:<11} {:>5} {:>12} {:>27} {:>6}",
                "method", "interval", "coef", "estimate", "C.I.", "signif"
            );
            for r in &doc.results {
                for rep in &r.intervals {
                    for c in &rep.intervals {
                        let ci = format!("[{:.4}, {:.4}]", c.lo, c.hi);
                        let _ = writeln!(
                            out,
                            "{:<14} {:<11} {:>5} {:>12.4} {:>27} {:>6}",
                            r.method.as_str(),
                            format!("{} {}%", kind_str(rep.kind), rep.level * 100.0),
                            format!("b{}", c.coefficient),
                            c.estimate,
                            ci,
                            yes_no(c.significant)
                        );
                    }
                }
            }
            out
        }
    }
}

/// One cell of a simulation run. Either `scenario` or both `sigma2_x` and
/// `rho` must be given; explicit values override the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyCell {
    pub k: usize,
    pub n: usize,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub sigma2_x: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
}

impl StudyCell {
    fn label(&self) -> String {
        let mut s = format!("K={} n={}", self.k, self.n);
        if let Some(sc) = self.scenario {
            let _ = write!(s, " scenario={}", sc.as_str());
        }
        if let Some(v) = self.sigma2_x {
            let _ = write!(s, " sigma2_x={v}");
        }
        if let Some(v) = self.rho {
            let _ = write!(s, " rho={v}");
        }
        s
    }
}

impl std::str::FromStr for StudyCell {
    type Err = Error;

    /// Parses `K=4,n=10,scenario=S4` (commas or spaces between keys).
    fn from_str(s: &str) -> Result<Self> {
        let mut cell = StudyCell {
            k: 0,
            n: 0,
            scenario: None,
            sigma2_x: None,
            rho: None,
        };
        let bad = |m: String| Error::InvalidConfig(format!("cell {s:?}: {m}"));
        for part in s.split([',', ' ']).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("{key} = {v:?} is not a number")));
            let count = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("{key} = {v:?} is not a count")));
            match key {
                "K" | "k" => cell.k = count(value)?,
                "n" => cell.n = count(value)?,
                "scenario" => cell.scenario = Some(value.parse()?),
                "sigma2_x" => cell.sigma2_x = Some(num(value)?),
                "rho" => cell.rho = Some(num(value)?),
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        if cell.k == 0 || cell.n == 0 {
            return Err(bad("K and n are required".into()));
        }
        Ok(cell)
    }
}

/// Settings of the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub cells: Vec<StudyCell>,
    #[serde(default = "default_n_sim")]
    pub n_sim: usize,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_study_methods")]
    pub methods: Vec<StudyMethod>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_max_redraws")]
    pub max_redraws: usize,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_n_sim() -> usize {
    500
}
fn default_study_methods() -> Vec<StudyMethod> {
    StudyMethod::ALL.to_vec()
}
fn default_beta0() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    2.0
}

/// All sixteen cells of the reference grid.
pub fn grid_cells() -> Vec<StudyCell> {
    ScenarioConfig::grid()
        .into_iter()
        .map(|(scenario, c)| StudyCell {
            k: c.k,
            n: c.n,
            scenario: Some(scenario),
            sigma2_x: None,
            rho: None,
        })
        .collect()
}

impl SimulateConfig {
    pub fn scenario_configs(&self) -> Result<Vec<ScenarioConfig>> {
        if self.cells.is_empty() {
            return Err(Error::InvalidConfig("no simulation cell given".into()));
        }
        self.cells
            .iter()
            .map(|cell| {
                let sigma2_x = cell.sigma2_x.or(cell.scenario.map(Scenario::sigma2_x));
                let rho = cell.rho.or(cell.scenario.map(Scenario::rho));
                let (Some(sigma2_x), Some(rho)) = (sigma2_x, rho) else {
                    return Err(Error::InvalidConfig(format!(
                        "cell {} needs a scenario or both sigma2_x and rho",
                        cell.label()
                    )));
                };
                let cfg = ScenarioConfig {
                    n: cell.n,
                    k: cell.k,
                    sigma2_x,
                    rho,
                    beta0: self.beta0,
                    beta1: self.beta1,
                    n_sim: self.n_sim,
                    n_boot: self.n_boot,
                    methods: self.methods.clone(),
                    seed: self.seed,
                    level: self.level,
                    max_redraws: self.max_redraws,
                };
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: String,
    pub config: ScenarioConfig,
    pub noise_variance: f64,
    pub metrics: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDocument {
    pub schema: String,
    pub provenance: Provenance,
    pub cells: Vec<CellReport>,
}

/// Runs every configured cell. Returns the metrics document and the raw
/// per-replication records, tagged with their cell label.
pub fn cmd_simulate(config: &SimulateConfig) -> Result<(StudyDocument, Vec<(String, ReplicateRecord)>)> {
    let scenarios = config.scenario_configs()?;
    let mut cells = Vec::with_capacity(scenarios.len());
    let mut records = Vec::new();
    for (cell, cfg) in config.cells.iter().zip(&scenarios) {
        let study = run_study(cfg)?;
        let label = cell.label();
        records.extend(study.records.into_iter().map(|r| (label.clone(), r)));
        cells.push(CellReport {
            cell: label,
            config: study.config,
            noise_variance: study.noise_variance,
            metrics: study.metrics,
        });
    }
    Ok((
        StudyDocument {
            schema: STUDY_SCHEMA.to_string(),
            provenance: Provenance::of(config, config.seed),
            cells,
        },
        records,
    ))
}

pub fn render_study(doc: &StudyDocument, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => to_json(doc),
        OutputFormat::Csv => {
            let mut out = String::from(
                "cell,K,n,sigma2_x,rho,method,coverage,mean_amplitude,power,n_effective,failures,seed,config_hash\n",
            );
            for c in &doc.cells {
                for m in &c.metrics {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        c.cell,
                        c.config.k,
                        c.config.n,
                        c.config.sigma2_x,
                        c.config.rho,
                        m.method.as_str(),
                        m.coverage,
                        m.mean_amplitude,
                        m.power,
                        m.n_effective,
                        m.failures,
                        doc.provenance.seed,
                        doc.provenance.config_hash
                    );
                }
            }
            out
        }
        OutputFormat::Table => {
            let mut out = format!("seed {}  config {}\n", doc.provenance.seed, doc.provenance.config_hash);
            let w = doc.cells.iter().map(|c| c.cell.len()).max().unwrap_or(0).max(4);
            let _ = writeln!(
                out,
                "{:<w$} {:<14} {:>9} {:>10} {:>7} {:>6}",
                "cell", "method", "coverage", "amplitude", "power", "n_eff"
            );
            for c in &doc.cells {
                for m in &c.metrics {
                    let _ = writeln!(
                        out,
                        "{:<w$} {:<14} {:>9.3} {:>10.4} {:>7.3} {:>6}",
                        c.cell,
                        m.method.as_str(),
                        m.coverage,
                        m.mean_amplitude,
                        m.power,
                        m.n_effective
                    );
                }
            }
            out
        }
    }
}

pub fn render_records(records: &[(String, ReplicateRecord)]) -> String {
    let mut out = String::from("cell,replicate,method,estimate,lo,hi,amplitude,covered,significant\n");
    for (cell, r) in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            cell,
            r.replicate,
            r.method.as_str(),
            r.estimate,
            r.lo,
            r.hi,
            r.hi - r.lo,
            yes_no(r.covered),
            yes_no(r.significant)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: String,
    pub data: DataSummary,
    /// Condition number of the group-mean normal matrix under equal weights.
    pub condition_number: f64,
}

/// Reads the inputs and checks that the design is identifiable.
pub fn cmd_validate(x: &Path, y: &Path) -> Result<ValidationReport> {
    let sample = read_unlinked_csv(x, y)?;
    let moments = compute_group_moments(&sample);
    let design = build_design(&moments, true)?;
    let w = vec![1.0 / sample.k() as f64; sample.k()];
    Ok(ValidationReport {
        schema: VALIDATE_SCHEMA.to_string(),
        data: DataSummary::of(&sample),
        condition_number: design.weighted_condition_number(&w),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number")))
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "unlinked-regress", version, about = "Regression on unlinked samples sharing a group label")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the estimators and report confidence intervals.
    Fit(FitArgs),
    /// Run the Monte Carlo coverage study.
    Simulate(SimulateArgs),
    /// Check that the input files parse and the design is identifiable.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// TOML or JSON file with an analysis configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Covariate CSV (`group,x1,...,xd`).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Response CSV (`group,y`).
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodSelection>,
    #[arg(long)]
    pub boot: Option<usize>,
    #[arg(long)]
    pub max_redraws: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub standardize: bool,
    /// Moment weights `w1,...,wK`.
    #[arg(long, value_parser = parse_list)]
    pub weights: Option<Vec<f64>>,
    /// Wasserstein weights `p1,...,pK`.
    #[arg(long, value_parser = parse_list)]
    pub pi: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Grid,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML or JSON file with a study configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run every cell of the reference grid.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// One cell, e.g. `--cell K=4 n=10 scenario=S4`. Repeatable.
    #[arg(long, num_args = 1.., action = clap::ArgAction::Append, value_name = "KEY=VALUE")]
    pub cell: Vec<String>,
    #[arg(long)]
    pub n_sim: Option<usize>,
    #[arg(long)]
    pub boot: Option<usize>,
    /// Comma-separated subset of mm-asymptotic, mm-bootstrap, ot-bootstrap,
    /// naive-student, simultaneous.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-replication intervals as CSV to this path.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
}

impl FitArgs {
    pub fn into_config(self) -> Result<(AnalysisConfig, Option<PathBuf>)> {
        let mut cfg = match &self.config {
            Some(p) => load_config::<AnalysisConfig>(p)?,
            None => AnalysisConfig {
                x: self.x.clone().ok_or_else(|| Error::InvalidConfig("--x is required".into()))?,
                y: self.y.clone().ok_or_else(|| Error::InvalidConfig("--y is required".into()))?,
                methods: default_methods(),
                weights: None,
                pi: None,
                n_boot: default_n_boot(),
                max_redraws: default_max_redraws(),
                level: default_level(),
                standardize: false,
                seed: 0,
                format: OutputFormat::Json,
            },
        };
        if let Some(x) = self.x {
            cfg.x = x;
        }
        if let Some(y) = self.y {
            cfg.y = y;
        }
        if let Some(m) = self.method {
            cfg.methods = m.expand();
        }
        if let Some(b) = self.boot {
            cfg.n_boot = b;
        }
        if let Some(r) = self.max_redraws {
            cfg.max_redraws = r;
        }
        if let Some(l) = self.level {
            cfg.level = l;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.standardize |= self.standardize;
        if self.weights.is_some() {
            cfg.weights = self.weights;
        }
        if self.pi.is_some() {
            cfg.pi = self.pi;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        Ok((cfg, self.out))
    }
}

impl SimulateArgs {
    pub fn into_config(self) -> Result<(SimulateConfig, Option<PathBuf>, Option<PathBuf>)> {
        let mut cfg = match &self.config {
            Some(p) => load_config::<SimulateConfig>(p)?,
            None => SimulateConfig {
                cells: Vec::new(),
                n_sim: default_n_sim(),
                n_boot: default_n_boot(),
                methods: default_study_methods(),
                seed: 0,
                level: default_level(),
                max_redraws: default_max_redraws(),
                beta0: default_beta0(),
                beta1: default_beta1(),
                format: OutputFormat::Json,
            },
        };
        if self.preset == Some(Preset::Grid) {
            cfg.cells = grid_cells();
        }
        if !self.cell.is_empty() {
            // `--cell K=4 n=10 scenario=S4` arrives as three values; a new
            // cell starts at every `K=` key.
            let mut specs: Vec<String> = Vec::new();
            for token in &self.cell {
                for part in token.split([',', ' ']).filter(|p| !p.is_empty()) {
                    if part.starts_with("K=") || part.starts_with("k=") || specs.is_empty() {
                        specs.push(part.to_string());
                    } else if let Some(last) = specs.last_mut() {
                        last.push(',');
                        last.push_str(part);
                    }
                }
            }
            let cells = specs.iter().map(|s| s.parse()).collect::<Result<Vec<StudyCell>>>()?;
            if self.preset.is_some() {
                cfg.cells.extend(cells);
            } else {
                cfg.cells = cells;
            }
        }
        if let Some(v) = self.n_sim {
            cfg.n_sim = v;
        }
        if let Some(v) = self.boot {
            cfg.n_boot = v;
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = self.level {
            cfg.level = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        Ok((cfg, self.out, self.records))
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => {
            let (cfg, out) = args.into_config()?;
            let doc = cmd_fit(&cfg)?;
            emit(&render_fit(&doc, cfg.format), out.as_deref())
        }
        Command::Simulate(args) => {
            let (cfg, out, records_path) = args.into_config()?;
            let (doc, records) = cmd_simulate(&cfg)?;
            if let Some(p) = &records_path {
                emit(&render_records(&records), Some(p))?;
            }
            emit(&render_study(&doc, cfg.format), out.as_deref())
        }
        Command::Validate(args) => {
            let report = cmd_validate(&args.x, &args.y)?;
            emit(&to_json(&report), None)
        }
    }
}

/// Machine-readable error body written to standard error.
pub fn error_json(e: &Error) -> String {
    let cat = e.category();
    serde_json::json!({
        "error": {
            "category": cat.as_str(),
            "exit_code": cat.exit_code(),
            "message": e.to_string(),
        }
    })
    .to_string()
}
