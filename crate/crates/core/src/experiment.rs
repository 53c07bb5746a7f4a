//! Batch experiments: TOML configs in, CSV report rows and JSON law
//! artifacts out.
//!
//! A config names a system, a rare family, the values of `l`, an
//! observable, a start measure and a list of tests. Every `(l, test)` pair
//! becomes one [`ReportRow`]. Identical config and seed give identical
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::Rational64;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dynsys::{Intermittent, PwlBranch, PwlMarkov, SystemSpec};
use crate::error::Error;
use crate::gmtheory::theta_at_periodic;
use crate::inducing::{estimate_measure, run_induced_monte_carlo, InducedSystem};
use crate::limits::{compound_geom_pmf_vec, duality_predict_hitting, fixed_point_residual, poisson_pmf, LimitLaw};
use crate::processes::{Observable, ObservableSpec};
use crate::rare_events::{make_target, target_intervals, Interval, IntervalUnion, Itinerary, RadiusRule, RareFamilySpec, UnionRule};
use crate::stats::{
    ks_distance, ks_mc_error, ks_two_sample, pair_dependence, run_monte_carlo, tv_discrete, CountHistogram,
    EmpiricalLaw, McConfig, McRun, Partitioner, SeededRng, StartMeasure,
};

/// Version of the JSON artifact layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Gauss,
    Doubling,
    /// Breakpoints as rationals (`"1/4"`); without `branches` every cell
    /// maps increasingly onto `[0, 1]`.
    Pwl {
        points: Vec<String>,
        #[serde(default)]
        branches: Option<Vec<BranchConfig>>,
    },
    Intermittent {
        alpha: f64,
        #[serde(default = "half")]
        c: f64,
        #[serde(default = "default_burn_in")]
        burn_in: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    /// Image as a range of cells `[start, end)`.
    pub image: [usize; 2],
    #[serde(default = "yes")]
    pub increasing: bool,
}

fn half() -> f64 {
    0.5
}
fn default_burn_in() -> u64 {
    10_000
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    DigitTail,
    CylinderAtPoint {
        period: Vec<u64>,
        #[serde(default)]
        prefix: Vec<u64>,
    },
    ShrinkingInterval {
        center: f64,
        #[serde(default)]
        radius: RadiusRule,
    },
    UnionOfRankOne {
        factor: u64,
    },
}

impl FamilyConfig {
    pub fn spec(&self) -> RareFamilySpec {
        match self {
            FamilyConfig::DigitTail => RareFamilySpec::DigitTail,
            FamilyConfig::CylinderAtPoint { period, prefix } => RareFamilySpec::CylinderAtPoint(Itinerary {
                prefix: prefix.clone(),
                period: period.clone(),
            }),
            FamilyConfig::ShrinkingInterval { center, radius } => RareFamilySpec::ShrinkingInterval {
                center: *center,
                radius: *radius,
            },
            FamilyConfig::UnionOfRankOne { factor } => {
                RareFamilySpec::UnionOfRankOne(UnionRule::DigitWindow { factor: *factor })
            }
        }
    }
}

/// A θ value or `"auto"` (taken from the periodic family).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Value(f64),
    Keyword(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Keyword(Auto::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Exp,
    ExpTheta {
        #[serde(default)]
        theta: ThetaSpec,
    },
    Uniform01,
    Bernoulli {
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountLawConfig {
    /// Poisson count with mean `mean` (default: `t`).
    Poisson {
        #[serde(default)]
        mean: Option<f64>,
    },
    /// Poisson(`mean`) batches of geometric(θ) size (default mean: `t`).
    CompoundGeom {
        #[serde(default)]
        mean: Option<f64>,
        #[serde(default)]
        theta: ThetaSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    ConsecutiveGaps,
    ConsecutiveMarks,
    TimeMark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    /// KS distance between normalized gap number `gap` and `law`.
    Ks {
        law: LawConfig,
        #[serde(default)]
        gap: usize,
        #[serde(default)]
        tol: Option<f64>,
        /// Overrides the config-wide start measure.
        #[serde(default)]
        measure: Option<StartMeasure>,
    },
    /// Hitting law under μ against the duality transform of the return law.
    Duality {
        #[serde(default)]
        grid: Option<Vec<f64>>,
        #[serde(default)]
        tol: Option<f64>,
    },
    /// Compound fixed-point residual of the return law.
    FixedPoint {
        #[serde(default)]
        theta: ThetaSpec,
        #[serde(default)]
        grid: Option<Vec<f64>>,
        #[serde(default)]
        tol: Option<f64>,
    },
    /// TV distance between the law of `N_{A,t}` and a count law.
    CountingTv {
        t: f64,
        law: CountLawConfig,
        #[serde(default)]
        tol: Option<f64>,
        /// Overrides the config-wide start measure.
        #[serde(default)]
        measure: Option<StartMeasure>,
    },
    /// Marks at every hit index against `law`.
    MarkLaw {
        law: LawConfig,
        #[serde(default)]
        tol: Option<f64>,
        /// Overrides the config-wide start measure.
        #[serde(default)]
        measure: Option<StartMeasure>,
    },
    PairIndependence {
        pair: PairKind,
        #[serde(default)]
        tol: Option<f64>,
        /// Overrides the config-wide start measure.
        #[serde(default)]
        measure: Option<StartMeasure>,
    },
    /// Mean normalized return time under μ_A.
    Kac {
        #[serde(default)]
        tol: Option<f64>,
    },
    /// Original gaps under μ against induced gaps under μ_Y.
    InducedComparison {
        y: [f64; 2],
        #[serde(default)]
        tol: Option<f64>,
    },
}

impl TestSpec {
    fn name(&self) -> &'static str {
        match self {
            TestSpec::Ks { .. } => "ks",
            TestSpec::Duality { .. } => "duality",
            TestSpec::FixedPoint { .. } => "fixed_point",
            TestSpec::CountingTv { .. } => "counting_tv",
            TestSpec::MarkLaw { .. } => "mark_law",
            TestSpec::PairIndependence { .. } => "pair_independence",
            TestSpec::Kac { .. } => "kac",
            TestSpec::InducedComparison { .. } => "induced_comparison",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_laws")]
    pub laws: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_report() -> String {
    "report.csv".into()
}
fn default_laws() -> String {
    "laws.json".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            report: default_report(),
            laws: default_laws(),
        }
    }
}

/// Birkhoff settings for systems without a closed-form measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirkhoffConfig {
    #[serde(default = "default_birkhoff_steps")]
    pub steps: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
}

fn default_birkhoff_steps() -> u64 {
    100_000_000
}

impl Default for BirkhoffConfig {
    fn default() -> Self {
        Self {
            steps: default_birkhoff_steps(),
            burn_in: default_burn_in(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    pub family: FamilyConfig,
    pub l_values: Vec<u64>,
    #[serde(default)]
    pub observable: ObservableSpec,
    #[serde(default)]
    pub measure: StartMeasure,
    #[serde(default = "default_n")]
    pub n_samples: usize,
    #[serde(default = "default_k")]
    pub k_hits: usize,
    /// Gap cap in units of `1/μ(A)`.
    #[serde(default = "default_cap")]
    pub cap_multiplier: f64,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub birkhoff: BirkhoffConfig,
}

fn default_n() -> usize {
    10_000
}
fn default_k() -> usize {
    4
}
fn default_cap() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        let before = &text[..offset.min(text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemSpec, Error> {
        match self {
            SystemConfig::Gauss => Ok(SystemSpec::Gauss),
            SystemConfig::Doubling => Ok(SystemSpec::Doubling),
            SystemConfig::Intermittent { alpha, c, burn_in } => Ok(SystemSpec::Intermittent(
                Intermittent::new(*alpha, *c)?.with_burn_in(*burn_in),
            )),
            SystemConfig::Pwl { points, branches } => {
                let pts = points
                    .iter()
                    .map(|p| {
                        p.trim()
                            .parse::<Rational64>()
                            .map_err(|e| Error::InvalidSystem(format!("breakpoint {p:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let m = match branches {
                    None => PwlMarkov::full_branch(pts)?,
                    Some(bs) => PwlMarkov::new(
                        pts,
                        bs.iter()
                            .map(|b| PwlBranch {
                                image_start: b.image[0],
                                image_end: b.image[1],
                                increasing: b.increasing,
                            })
                            .collect(),
                    )?,
                };
                Ok(SystemSpec::PiecewiseLinearMarkov(m))
            }
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let sys = self.system.build().map_err(|e| invalid("system", e.to_string()))?;
        if self.l_values.is_empty() {
            return Err(invalid("l_values", "must not be empty"));
        }
        if self.l_values[0] == 0 {
            return Err(invalid("l_values", "values must be >= 1"));
        }
        if self.l_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("l_values", "must be strictly increasing"));
        }
        if self.n_samples < 100 {
            return Err(invalid("n_samples", "must be >= 100"));
        }
        if self.k_hits == 0 {
            return Err(invalid("k_hits", "must be >= 1"));
        }
        if !(self.cap_multiplier > 0.0) {
            return Err(invalid("cap_multiplier", "must be > 0"));
        }
        let gauss = matches!(sys, SystemSpec::Gauss);
        let digit_tail = matches!(self.family, FamilyConfig::DigitTail);
        match &self.family {
            FamilyConfig::DigitTail | FamilyConfig::UnionOfRankOne { .. } if !gauss => {
                return Err(invalid("family", "digit families need the Gauss system"));
            }
            FamilyConfig::UnionOfRankOne { factor } if *factor < 2 => {
                return Err(invalid("family.factor", "must be >= 2"));
            }
            FamilyConfig::CylinderAtPoint { period, .. } if period.is_empty() => {
                return Err(invalid("family.period", "must not be empty"));
            }
            FamilyConfig::ShrinkingInterval { center, .. } if !(0.0..=1.0).contains(center) => {
                return Err(invalid("family.center", "must lie in [0, 1]"));
            }
            _ => {}
        }
        match &self.observable {
            ObservableSpec::DigitThreshold { .. } | ObservableSpec::DigitResidue { .. } if !(gauss && digit_tail) => {
                return Err(invalid(
                    "observable",
                    "digit observables need the Gauss system with a digit_tail family",
                ));
            }
            ObservableSpec::DigitThreshold { vartheta } if !(*vartheta > 0.0 && *vartheta <= 1.0) => {
                return Err(invalid("observable.vartheta", "must lie in (0, 1]"));
            }
            ObservableSpec::DigitResidue { modulus } if *modulus == 0 => {
                return Err(invalid("observable.modulus", "must be >= 1"));
            }
            _ => {}
        }
        let has_marks = !matches!(self.observable, ObservableSpec::None);
        for (i, t) in self.tests.iter().enumerate() {
            let field = format!("tests[{i}]");
            let need_theta = |theta: &ThetaSpec| -> Result<(), ConfigError> {
                if let ThetaSpec::Value(v) = theta {
                    if !(*v > 0.0 && *v <= 1.0) {
                        return Err(invalid(&field, "theta must lie in (0, 1]"));
                    }
                    return Ok(());
                }
                self.auto_theta(&sys).map(|_| ()).map_err(|m| invalid(&field, m))
            };
            match t {
                TestSpec::Ks { law, gap, .. } => {
                    if *gap >= self.k_hits {
                        return Err(invalid(&field, format!("gap {gap} needs k_hits > {gap}")));
                    }
                    if let LawConfig::ExpTheta { theta } = law {
                        need_theta(theta)?;
                    }
                    self.validate_law(law, &field)?;
                }
                TestSpec::FixedPoint { theta, grid, .. } => {
                    need_theta(theta)?;
                    validate_grid(grid, &field)?;
                }
                TestSpec::Duality { grid, .. } => validate_grid(grid, &field)?,
                TestSpec::CountingTv { t, law, .. } => {
                    if !(*t >= 0.0) {
                        return Err(invalid(&field, "t must be >= 0"));
                    }
                    if let CountLawConfig::CompoundGeom { theta, .. } = law {
                        need_theta(theta)?;
                    }
                }
                TestSpec::MarkLaw { law, .. } => {
                    if !has_marks {
                        return Err(invalid(&field, "mark_law needs an observable"));
                    }
                    if let LawConfig::ExpTheta { theta } = law {
                        need_theta(theta)?;
                    }
                    self.validate_law(law, &field)?;
                }
                TestSpec::PairIndependence { pair, .. } => {
                    if *pair != PairKind::TimeMark && self.k_hits < 2 {
                        return Err(invalid(&field, "consecutive pairs need k_hits >= 2"));
                    }
                    if *pair != PairKind::ConsecutiveGaps && !has_marks {
                        return Err(invalid(&field, "mark pairs need an observable"));
                    }
                }
                TestSpec::Kac { .. } => {}
                TestSpec::InducedComparison { y, .. } => {
                    if !(0.0 <= y[0] && y[0] < y[1] && y[1] <= 1.0) {
                        return Err(invalid(&field, "y must satisfy 0 <= lo < hi <= 1"));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_law(&self, law: &LawConfig, field: &str) -> Result<(), ConfigError> {
        if let LawConfig::Bernoulli { probs } = law {
            LimitLaw::Bernoulli(probs.clone())
                .validate()
                .map_err(|e| invalid(field, e.to_string()))?;
        }
        Ok(())
    }

    /// θ of the periodic family, for `theta = "auto"`.
    fn auto_theta(&self, sys: &SystemSpec) -> Result<f64, String> {
        match &self.family {
            FamilyConfig::CylinderAtPoint { period, prefix } if prefix.is_empty() => {
                theta_at_periodic(sys, period).map_err(|e| e.to_string())
            }
            _ => Err("theta = \"auto\" needs a purely periodic cylinder_at_point family".into()),
        }
    }
}

fn validate_grid(grid: &Option<Vec<f64>>, field: &str) -> Result<(), ConfigError> {
    match grid {
        Some(g) if g.is_empty() || g.iter().any(|t| !(*t >= 0.0)) => {
            Err(invalid(field, "grid must be a nonempty list of nonnegative times"))
        }
        _ => Ok(()),
    }
}

/// `{0.1, 0.2, ..., 3.0}`.
pub fn default_grid() -> Vec<f64> {
    (1..=30).map(|i| i as f64 / 10.0).collect()
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub l: u64,
    pub test: String,
    pub stat: f64,
    pub tol: f64,
    pub mc_err: f64,
    pub pass: bool,
    pub n_eff: usize,
    pub overflows: u64,
    pub ms: u64,
}

impl ReportRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{},{},{},{}",
            self.l, self.test, self.stat, self.tol, self.mc_err, self.pass, self.n_eff, self.overflows, self.ms
        )
    }
}

pub const CSV_HEADER: &str = "l,test,stat,tol,mc_err,pass,n_eff,overflows,ms";

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Fill the `ms` column (breaks byte-determinism of the report).
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub runtime_errors: Vec<String>,
    pub report_path: PathBuf,
    pub laws_path: PathBuf,
}

impl ExperimentOutcome {
    /// 0 all rows pass, 1 some row fails, 3 runtime error.
    pub fn exit_code(&self) -> i32 {
        if !self.runtime_errors.is_empty() {
            3
        } else if self.rows.iter().all(|r| r.pass) {
            0
        } else {
            1
        }
    }
}

#[derive(Serialize)]
struct LawArtifact {
    l: u64,
    measure: StartMeasure,
    mu_a: f64,
    n: usize,
    overflows: u64,
    first_gaps: Option<EmpiricalLaw>,
    first_marks: Option<EmpiricalLaw>,
    counts: BTreeMap<String, CountHistogram>,
}

#[derive(Serialize)]
struct LawsFile<'a> {
    schema: u32,
    seed: u64,
    config: &'a ExperimentConfig,
    runs: Vec<LawArtifact>,
}

struct LContext<'a> {
    cfg: &'a ExperimentConfig,
    sys: &'a SystemSpec,
    l: u64,
    l_index: usize,
    seed: u64,
    target: IntervalUnion,
    obs: Observable,
    count_times: Vec<f64>,
    runs: BTreeMap<u8, std::result::Result<McRun, Error>>,
}

fn measure_code(m: StartMeasure) -> u8 {
    match m {
        StartMeasure::Mu => 0,
        StartMeasure::MuA => 1,
        StartMeasure::LinearDensity => 2,
    }
}

/// Independent master seed for each `(l, purpose)` pair.
fn sub_seed(seed: u64, l_index: usize, purpose: u64) -> u64 {
    SeededRng::new(seed, (1 << 32) + (l_index as u64) * 64 + purpose).next_u64()
}

impl LContext<'_> {
    fn run(&mut self, m: StartMeasure) -> std::result::Result<&McRun, Error> {
        let code = measure_code(m);
        if !self.runs.contains_key(&code) {
            let mc = McConfig {
                n_samples: self.cfg.n_samples,
                k_hits: self.cfg.k_hits,
                cap: Some((self.cfg.cap_multiplier / self.target.mu_mass()).ceil() as u64),
                start: m,
                count_times: self.count_times.clone(),
                count_cutoff: 25,
                max_overflow_fraction: 1e-6,
                threads: None,
            };
            let seed = sub_seed(self.seed, self.l_index, code as u64);
            let r = run_monte_carlo(self.sys, &self.target, &self.obs, &mc, seed);
            self.runs.insert(code, r);
        }
        self.runs[&code].as_ref().map_err(Clone::clone)
    }

    fn theta(&self, spec: &ThetaSpec) -> std::result::Result<f64, Error> {
        match spec {
            ThetaSpec::Value(v) => Ok(*v),
            ThetaSpec::Keyword(_) => self.cfg.auto_theta(self.sys).map_err(Error::InvalidArgument),
        }
    }

    fn law(&self, law: &LawConfig) -> std::result::Result<LimitLaw, Error> {
        Ok(match law {
            LawConfig::Exp => LimitLaw::Exp,
            LawConfig::ExpTheta { theta } => LimitLaw::ExpTheta(self.theta(theta)?),
            LawConfig::Uniform01 => LimitLaw::Uniform01,
            LawConfig::Bernoulli { probs } => LimitLaw::Bernoulli(probs.clone()),
        })
    }

    fn discrete_marks(&self) -> Option<usize> {
        match &self.cfg.observable {
            ObservableSpec::DigitThreshold { .. } => Some(2),
            ObservableSpec::DigitResidue { modulus } => Some(*modulus as usize),
            ObservableSpec::SubsetIndex { cells } => Some(cells.len()),
            _ => None,
        }
    }

    fn partitioner(&self, values: &[f64]) -> Partitioner {
        match self.discrete_marks() {
            Some(cells) => Partitioner::Integer { cells },
            None => Partitioner::quartiles(values),
        }
    }
}

/// (stat, mc_err, default tol, n_eff, overflows)
type Evaluated = (f64, f64, f64, usize, u64);

fn evaluate(ctx: &mut LContext<'_>, test: &TestSpec) -> std::result::Result<Vec<(String, Evaluated, Option<f64>)>, Error> {
    let mu = ctx.target.mu_mass();
    let name = test.name().to_string();
    let one = |e: Evaluated, tol: &Option<f64>| Ok(vec![(name.clone(), e, *tol)]);
    match test {
        TestSpec::Ks { law, gap, tol, measure } => {
            let measure = measure.unwrap_or(ctx.cfg.measure);
            let law = ctx.law(law)?;
            let run = ctx.run(measure)?;
            let gaps = EmpiricalLaw::from_values(run.gaps(*gap))?;
            let n = gaps.len();
            let mc = ks_mc_error(n);
            one((ks_distance(&gaps, &law)?, mc, mu + 3.0 * mc, n, run.overflow_count), tol)
        }
        TestSpec::Duality { grid, tol } => {
            let grid = grid.clone().unwrap_or_else(default_grid);
            let hit = ctx.run(StartMeasure::Mu)?.gap_law(1)?;
            let ovf_hit = ctx.run(StartMeasure::Mu)?.overflow_count;
            let ret_run = ctx.run(StartMeasure::MuA)?;
            let ret = ret_run.gap_law(1)?;
            let mut worst: f64 = 0.0;
            for &t in &grid {
                let pred = duality_predict_hitting(&ret, 0, &[t])?;
                worst = worst.max((hit.cdf_prefix(&[t]) - pred).abs());
            }
            let n = hit.len().min(ret.len());
            let mc = ks_mc_error(n);
            one((worst, mc, mu + 3.0 * mc, n, ovf_hit + ret_run.overflow_count), tol)
        }
        TestSpec::FixedPoint { theta, grid, tol } => {
            let theta = ctx.theta(theta)?;
            let grid = grid.clone().unwrap_or_else(default_grid);
            let run = ctx.run(StartMeasure::MuA)?;
            let ret = run.gap_law(1)?;
            let n = ret.len();
            let mc = ks_mc_error(n);
            one((fixed_point_residual(&ret, theta, &grid)?, mc, mu + 3.0 * mc, n, run.overflow_count), tol)
        }
        TestSpec::CountingTv { t, law, tol, measure } => {
            let measure = measure.unwrap_or(ctx.cfg.measure);
            let pmf: Vec<f64> = match law {
                CountLawConfig::Poisson { mean } => {
                    let m = mean.unwrap_or(*t);
                    (0..=25).map(|k| poisson_pmf(m, k)).collect()
                }
                CountLawConfig::CompoundGeom { mean, theta } => {
                    compound_geom_pmf_vec(mean.unwrap_or(*t), ctx.theta(theta)?, 25)
                }
            };
            let idx = ctx
                .count_times
                .iter()
                .position(|s| s == t)
                .expect("count times collected from tests");
            let run = ctx.run(measure)?;
            let hist = run.counting_histogram(idx);
            let n = hist.total() as usize;
            let tv = tv_discrete(&hist, |k| pmf.get(k as usize).copied().unwrap_or(0.0));
            let mc = 0.5 * pmf.iter().map(|p| (p * (1.0 - p) / n as f64).sqrt()).sum::<f64>();
            one((tv, mc, mu + 3.0 * mc, n, run.overflow_count), tol)
        }
        TestSpec::MarkLaw { law, tol, measure } => {
            let measure = measure.unwrap_or(ctx.cfg.measure);
            let law = ctx.law(law)?;
            let k = ctx.cfg.k_hits;
            let run = ctx.run(measure)?;
            let (mut worst, mut mc, mut n_min): (f64, f64, usize) = (0.0, 0.0, usize::MAX);
            for j in 0..k {
                let marks = run.marks(j);
                if marks.is_empty() {
                    continue;
                }
                let n = marks.len();
                n_min = n_min.min(n);
                match &law {
                    LimitLaw::Bernoulli(p) => {
                        let mut freq = vec![0usize; p.len()];
                        let mut outside = 0usize;
                        for m in &marks {
                            match freq.get_mut(*m as usize) {
                                Some(c) => *c += 1,
                                None => outside += 1,
                            }
                        }
                        for (c, pi) in freq.iter().zip(p) {
                            worst = worst.max((*c as f64 / n as f64 - pi).abs());
                            mc = mc.max((pi * (1.0 - pi) / n as f64).sqrt());
                        }
                        worst = worst.max(outside as f64 / n as f64);
                    }
                    _ => {
                        worst = worst.max(ks_distance(&EmpiricalLaw::from_values(marks)?, &law)?);
                        mc = mc.max(ks_mc_error(n));
                    }
                }
            }
            if n_min == usize::MAX {
                return Err(Error::InvalidArgument("no marks recorded".into()));
            }
            one((worst, mc, mu + 3.0 * mc, n_min, run.overflow_count), tol)
        }
        TestSpec::PairIndependence { pair, tol, measure } => {
            let measure = measure.unwrap_or(ctx.cfg.measure);
            let (a, b) = {
                let run = ctx.run(measure)?;
                match pair {
                    PairKind::ConsecutiveGaps => run.consecutive_gaps(0),
                    PairKind::ConsecutiveMarks => run.consecutive_marks(0),
                    PairKind::TimeMark => run.time_mark_pairs(0),
                }
            };
            let pa = match pair {
                PairKind::ConsecutiveMarks => ctx.partitioner(&a),
                _ => Partitioner::quartiles(&a),
            };
            let pb = ctx.partitioner(&b);
            let pb = match pair {
                PairKind::ConsecutiveGaps => Partitioner::quartiles(&b),
                _ => pb,
            };
            let n = a.len();
            let mc = 0.5 / (n as f64).sqrt();
            let ovf = ctx.run(measure)?.overflow_count;
            one((pair_dependence(&a, &b, &pa, &pb)?, mc, mu + 3.0 * mc, n, ovf), tol)
        }
        TestSpec::Kac { tol } => {
            let run = ctx.run(StartMeasure::MuA)?;
            let gaps = run.gaps(0);
            let n = gaps.len();
            let mean = gaps.iter().sum::<f64>() / n as f64;
            let mc = 1.0 / (n as f64).sqrt();
            one(((mean - 1.0).abs(), mc, 4.0 * mc, n, run.overflow_count), tol)
        }
        TestSpec::InducedComparison { y, tol } => {
            let y_iv = IntervalUnion::estimated(vec![Interval::closed_open(y[0], y[1])], 1.0, 0.0)?;
            if !ctx.target.is_subset_of(&y_iv) {
                return Err(Error::InvalidArgument(format!("target at l = {} is not inside Y", ctx.l)));
            }
            let (mu_a, mu_y) = if ctx.sys.has_exact_measure() {
                let y_exact = IntervalUnion::exact(ctx.sys, y_iv.intervals().to_vec())?;
                (mu, y_exact.mu_mass())
            } else {
                let seed = sub_seed(ctx.seed, ctx.l_index, 10);
                let b = &ctx.cfg.birkhoff;
                let est = estimate_measure(ctx.sys, &[&ctx.target, &y_iv], b.steps, b.burn_in, seed)?;
                (est[0].mass, est[1].mass)
            };
            let y_union = IntervalUnion::estimated(y_iv.intervals().to_vec(), mu_y, 0.0)?;
            let mu_y_a = mu_a / mu_y;
            let ind = InducedSystem::new(ctx.sys.clone(), y_union, u64::MAX / 4)?;
            let cap = (ctx.cfg.cap_multiplier / mu_y_a).ceil() as u64;
            let seed = sub_seed(ctx.seed, ctx.l_index, 11);
            let induced = run_induced_monte_carlo(
                &ind,
                &ctx.target,
                &ctx.obs,
                mu_y_a,
                ctx.cfg.n_samples,
                ctx.cfg.k_hits,
                cap,
                seed,
            )?;
            let orig_run = ctx.run(StartMeasure::Mu)?;
            let orig = orig_run.gap_law(1)?;
            let ind_law = induced.gap_law(1)?;
            let n = orig.len().min(ind_law.len());
            let mc = 1.36 * (2.0 / n as f64).sqrt();
            let ovf = orig_run.overflow_count + induced.overflow_count;
            // A broken time-change identity fails the row outright.
            let ks = ks_two_sample(&orig, &ind_law)?;
            let stat = if induced.identity_violations > 0 { f64::INFINITY } else { ks };
            one((stat, mc, mu_y_a + 3.0 * mc, n, ovf), tol)
        }
    }
}

fn build_target(cfg: &ExperimentConfig, sys: &SystemSpec, l: u64, seed: u64, l_index: usize) -> std::result::Result<IntervalUnion, Error> {
    let fam = cfg.family.spec();
    if sys.has_exact_measure() {
        make_target(sys, &fam, l)
    } else {
        let ivs = target_intervals(sys, &fam, l)?;
        let probe = IntervalUnion::estimated(ivs.clone(), 1.0, 0.0)?;
        let b = &cfg.birkhoff;
        let est = estimate_measure(sys, &[&probe], b.steps, b.burn_in, sub_seed(seed, l_index, 12))?;
        IntervalUnion::estimated(ivs, est[0].mass, est[0].std_err)
    }
}

/// Runs every test at every `l`, writes the CSV report and the JSON law
/// artifacts, and returns the rows.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> std::io::Result<ExperimentOutcome> {
    let seed = opts.seed.unwrap_or(cfg.seed);
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let body = || run_rows(cfg, seed, opts.record_timing);
    let (rows, runtime_errors, artifacts) = match opts.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(std::io::Error::other)?
            .install(body),
        None => body(),
    };

    std::fs::create_dir_all(&out_dir)?;
    let report_path = out_dir.join(&cfg.output.report);
    let laws_path = out_dir.join(&cfg.output.laws);
    let mut csv = format!("# seed: {seed}\n{CSV_HEADER}\n");
    for r in &rows {
        let _ = writeln!(csv, "{}", r.csv_line());
    }
    std::fs::write(&report_path, csv)?;
    let laws = LawsFile {
        schema: SCHEMA_VERSION,
        seed,
        config: cfg,
        runs: artifacts,
    };
    std::fs::write(&laws_path, serde_json::to_vec(&laws).map_err(std::io::Error::other)?)?;
    Ok(ExperimentOutcome {
        seed,
        rows,
        runtime_errors,
        report_path,
        laws_path,
    })
}

fn run_rows(cfg: &ExperimentConfig, seed: u64, record_timing: bool) -> (Vec<ReportRow>, Vec<String>, Vec<LawArtifact>) {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut artifacts = Vec::new();
    let sys = match cfg.system.build() {
        Ok(s) => s,
        Err(e) => return (rows, vec![e.to_string()], artifacts),
    };
    let mut count_times: Vec<f64> = cfg
        .tests
        .iter()
        .filter_map(|t| match t {
            TestSpec::CountingTv { t, .. } => Some(*t),
            _ => None,
        })
        .collect();
    count_times.sort_by(f64::total_cmp);
    count_times.dedup();

    for (l_index, &l) in cfg.l_values.iter().enumerate() {
        let fail_all = |rows: &mut Vec<ReportRow>| {
            for t in &cfg.tests {
                rows.push(failure_row(l, t.name()));
            }
        };
        let target = match build_target(cfg, &sys, l, seed, l_index) {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("l = {l}: {e}"));
                fail_all(&mut rows);
                continue;
            }
        };
        let obs = match cfg.observable.bind(&sys, &target, l) {
            Ok(o) => o,
            Err(e) => {
                errors.push(format!("l = {l}: {e}"));
                fail_all(&mut rows);
                continue;
            }
        };
        let mut ctx = LContext {
            cfg,
            sys: &sys,
            l,
            l_index,
            seed,
            target,
            obs,
            count_times: count_times.clone(),
            runs: BTreeMap::new(),
        };
        for test in &cfg.tests {
            let start = Instant::now();
            match evaluate(&mut ctx, test) {
                Ok(results) => {
                    let ms = if record_timing { start.elapsed().as_millis() as u64 } else { 0 };
                    for (name, (stat, mc_err, default_tol, n_eff, overflows), tol) in results {
                        let tol = tol.unwrap_or(default_tol);
                        rows.push(ReportRow {
                            l,
                            test: name,
                            stat,
                            tol,
                            mc_err,
                            pass: stat <= tol,
                            n_eff,
                            overflows,
                            ms,
                        });
                    }
                }
                Err(e) => {
                    errors.push(format!("l = {l}, {}: {e}", test.name()));
                    rows.push(failure_row(l, test.name()));
                }
            }
        }
        for (code, run) in &ctx.runs {
            if let Ok(run) = run {
                let measure = [StartMeasure::Mu, StartMeasure::MuA, StartMeasure::LinearDensity][*code as usize];
                let marks = run.marks(0);
                artifacts.push(LawArtifact {
                    l,
                    measure,
                    mu_a: run.mu_a,
                    n: run.n(),
                    overflows: run.overflow_count,
                    first_gaps: run.gap_law(1).ok(),
                    first_marks: (!matches!(ctx.obs, Observable::None) && !marks.is_empty())
                        .then(|| EmpiricalLaw::from_values(marks).ok())
                        .flatten(),
                    counts: run
                        .count_times
                        .iter()
                        .enumerate()
                        .map(|(i, t)| (format!("{t}"), run.counting_histogram(i)))
                        .collect(),
                });
            }
        }
    }
    (rows, errors, artifacts)
}

fn failure_row(l: u64, test: &str) -> ReportRow {
    ReportRow {
        l,
        test: test.into(),
        stat: f64::NAN,
        tol: f64::NAN,
        mc_err: f64::NAN,
        pass: false,
        n_eff: 0,
        overflows: 0,
        ms: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
system = { kind = "gauss" }
family = { kind = "digit_tail" }
l_values = [10]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.cap_multiplier, 50.0);
        assert_eq!(cfg.k_hits, 4);
        assert_eq!(cfg.measure, StartMeasure::Mu);
        assert!(cfg.tests.is_empty());
    }

    #[test]
    fn decreasing_l_values_rejected() {
        let text = MINIMAL.replace("[10]", "[10, 5]");
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::Validation { field, .. }) if field == "l_values"
        ));
    }

    #[test]
    fn digit_observable_needs_gauss() {
        let text = r#"
system = { kind = "doubling" }
family = { kind = "shrinking_interval", center = 0.3 }
l_values = [4]
observable = { kind = "digit_residue", modulus = 3 }
"#;
        assert!(matches!(
            parse_config_str(text),
            Err(ConfigError::Validation { field, .. }) if field == "observable"
        ));
    }

    #[test]
    fn unknown_keys_are_errors_with_position() {
        let text = format!("{MINIMAL}bogus = 1\n");
        match parse_config_str(&text) {
            Err(ConfigError::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("{other:?}"),
        }
        let text = "system = { kind = \"gauss\" }\nfamily = [\n";
        match parse_config_str(text) {
            Err(ConfigError::Parse { line, column, .. }) => assert!(line >= 2 && column >= 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auto_theta_needs_periodic_family() {
        let text = format!("{MINIMAL}[[tests]]\nkind = \"fixed_point\"\n");
        assert!(parse_config_str(&text).is_err());
        let text = r#"
system = { kind = "gauss" }
family = { kind = "cylinder_at_point", period = [1] }
l_values = [3]
[[tests]]
kind = "fixed_point"
theta = "auto"
"#;
        assert!(parse_config_str(text).is_ok());
    }

    #[test]
    fn empty_test_list_gives_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config_str(&MINIMAL.replace("[10]", "[10]\nn_samples = 100")).unwrap();
        let out = run_experiment(
            &cfg,
            &RunOptions {
                out_dir: Some(dir.path().to_path_buf()),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.exit_code(), 0);
        let csv = std::fs::read_to_string(&out.report_path).unwrap();
        assert_eq!(csv, format!("# seed: 0\n{CSV_HEADER}\n"));
    }
}
