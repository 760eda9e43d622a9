//! Run configuration files.
//!
//! Every command reads one JSON document carrying `"version": 1`. Unknown
//! keys are rejected; relative paths resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use allocsim::acceptance::{AcceptanceModel, AcceptancePolicyConfig, OfferPredictor};
use allocsim::cohort::{generate, Cohort, CohortConfig};
use allocsim::policies::{PolicySpec, SurvivalModels};
use allocsim::simulator::SimConfig;
use allocsim::survival::{CoxModel, FitOptions};
use allocsim::tuning::TuneConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CohortSource {
    /// Directory written by `gen-cohort`.
    Dir(PathBuf),
    Generate(CohortConfig),
}

impl CohortSource {
    fn resolve(&mut self, base: &Path) {
        if let CohortSource::Dir(p) = self {
            *p = base.join(&*p);
        }
    }

    pub fn load(&self) -> Result<Cohort, CliError> {
        match self {
            CohortSource::Dir(dir) => Ok(Cohort::load_dir(dir)?),
            CohortSource::Generate(cfg) => Ok(generate(cfg)?),
        }
    }

    /// Whether two sources describe the same cohort.
    pub fn same_as(&self, other: &CohortSource) -> bool {
        match (self, other) {
            (CohortSource::Dir(a), CohortSource::Dir(b)) => {
                let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
                canon(a) == canon(b)
            }
            (CohortSource::Generate(a), CohortSource::Generate(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFiles {
    pub graft: PathBuf,
    pub waitlist: PathBuf,
    pub acceptance: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// The generating models stored with a synthetic cohort.
    GroundTruth,
    Files(ModelFiles),
}

pub struct Models {
    pub survival: SurvivalModels,
    pub acceptance: AcceptanceModel,
}

impl Models {
    pub fn predictor(&self) -> &dyn OfferPredictor {
        &self.acceptance
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

impl ModelSource {
    fn resolve(&mut self, base: &Path) {
        if let ModelSource::Files(f) = self {
            for p in [&mut f.graft, &mut f.waitlist, &mut f.acceptance] {
                *p = base.join(&*p);
            }
        }
    }

    pub fn load(&self, cohort: &Cohort) -> Result<Models, CliError> {
        match self {
            ModelSource::GroundTruth => {
                let truth = cohort.ground_truth()?;
                Ok(Models { survival: truth.survival_models()?, acceptance: truth.acceptance.clone() })
            }
            ModelSource::Files(f) => {
                let graft: CoxModel = read_json(&f.graft)?;
                let waitlist: CoxModel = read_json(&f.waitlist)?;
                let acceptance: AcceptanceModel = read_json(&f.acceptance)?;
                let hash = cohort.schema.hash();
                if !acceptance.schema_hash.is_empty() && acceptance.schema_hash != hash {
                    return Err(CliError::Runtime(format!(
                        "acceptance model was fitted for schema {}, cohort schema is {hash}",
                        acceptance.schema_hash
                    )));
                }
                if acceptance.weights.len() != cohort.schema.acceptance_dim() {
                    return Err(CliError::Runtime(format!(
                        "acceptance model takes {} features, cohort provides {}",
                        acceptance.weights.len(),
                        cohort.schema.acceptance_dim()
                    )));
                }
                Ok(Models { survival: SurvivalModels { graft, waitlist }, acceptance })
            }
        }
    }
}

/// Simulation settings shared by every policy in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub horizon_days: f64,
    #[serde(default)]
    pub acceptance: AcceptancePolicyConfig,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default = "default_window")]
    pub batch_window_hours: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
}

fn one() -> usize {
    1
}

fn default_window() -> f64 {
    48.0
}

impl RunSettings {
    pub fn sim_config(&self, policy: PolicySpec) -> SimConfig {
        SimConfig {
            horizon_days: self.horizon_days,
            policy,
            acceptance: self.acceptance,
            batch_size: self.batch_size,
            batch_window_hours: self.batch_window_hours,
            seed: self.seed,
            replications: self.replications,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenCohortFile {
    pub version: u32,
    pub cohort: CohortConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Graft,
    Waitlist,
    Acceptance,
}

fn default_samples() -> usize {
    5000
}

fn default_follow_up() -> f64 {
    15.0 * 365.25
}

fn default_holdout() -> f64 {
    0.3
}

fn default_l2() -> f64 {
    1e-3
}

fn default_logistic_iters() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub version: u32,
    pub cohort: CohortSource,
    pub kind: ModelKind,
    /// Synthetic pairs drawn for graft and acceptance training.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Administrative censoring bound for synthetic graft outcomes.
    #[serde(default = "default_follow_up")]
    pub max_follow_up_days: f64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub survival: FitOptions,
    #[serde(default = "default_l2")]
    pub logistic_l2: f64,
    #[serde(default = "default_logistic_iters")]
    pub logistic_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub version: u32,
    pub cohort: CohortSource,
    pub models: ModelSource,
    pub run: RunSettings,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareFile {
    pub version: u32,
    pub cohort: CohortSource,
    pub models: ModelSource,
    pub run: RunSettings,
    pub policies: Vec<NamedPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    MaxDistance,
    #[serde(alias = "batch_B")]
    BatchB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub version: u32,
    pub cohort: CohortSource,
    pub models: ModelSource,
    pub run: RunSettings,
    pub policy: PolicySpec,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn default_base_policy() -> PolicySpec {
    PolicySpec::potential([0.0; 4])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneFile {
    pub version: u32,
    pub training_cohorts: Vec<CohortSource>,
    /// Held-out cohorts on which tuned and myopic policies are compared.
    #[serde(default)]
    pub evaluation_cohorts: Vec<CohortSource>,
    pub models: ModelSource,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default = "default_base_policy")]
    pub base_policy: PolicySpec,
    /// Settings for the held-out comparison.
    pub run: Option<RunSettings>,
}

/// Parses and validates a config file of type `T`.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut file: T =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if file.version() != CONFIG_VERSION {
        return Err(CliError::Config(format!(
            "{}: unsupported config version {} (expected {CONFIG_VERSION})",
            path.display(),
            file.version()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    file.resolve_paths(base);
    file.validate()?;
    Ok(file)
}

pub trait Versioned {
    fn version(&self) -> u32;
    fn resolve_paths(&mut self, _base: &Path) {}
    fn override_seed(&mut self, seed: u64);
    fn validate(&self) -> Result<(), CliError> {
        Ok(())
    }
}

fn validate_run(run: &RunSettings, policy: &PolicySpec) -> Result<(), CliError> {
    run.sim_config(policy.clone()).validate().map_err(|e| CliError::Config(e.to_string()))
}

impl Versioned for GenCohortFile {
    fn version(&self) -> u32 {
        self.version
    }

    fn override_seed(&mut self, seed: u64) {
        self.cohort.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        self.cohort.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

impl Versioned for FitFile {
    fn version(&self) -> u32 {
        self.version
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.cohort.resolve(base);
    }

    fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(CliError::Config(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction)));
        }
        if self.samples < 10 {
            return Err(CliError::Config("samples must be at least 10".into()));
        }
        if !(self.max_follow_up_days > 0.0) {
            return Err(CliError::Config("max_follow_up_days must be positive".into()));
        }
        Ok(())
    }
}

impl Versioned for SimulateFile {
    fn version(&self) -> u32 {
        self.version
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.cohort.resolve(base);
        self.models.resolve(base);
    }

    fn override_seed(&mut self, seed: u64) {
        self.run.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        validate_run(&self.run, &self.policy)
    }
}

impl Versioned for CompareFile {
    fn version(&self) -> u32 {
        self.version
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.cohort.resolve(base);
        self.models.resolve(base);
    }

    fn override_seed(&mut self, seed: u64) {
        self.run.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.policies.is_empty() {
            return Err(CliError::Config("policies must not be empty".into()));
        }
        self.policies.iter().try_for_each(|p| validate_run(&self.run, &p.policy))
    }
}

impl Versioned for SweepFile {
    fn version(&self) -> u32 {
        self.version
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.cohort.resolve(base);
        self.models.resolve(base);
    }

    fn override_seed(&mut self, seed: u64) {
        self.run.seed = seed;
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Config("values must not be empty".into()));
        }
        validate_run(&self.run, &self.policy)?;
        for &v in &self.values {
            let (run, policy) = crate::commands::sweep_point(&self.run, &self.policy, self.parameter, v)?;
            validate_run(&run, &policy)?;
        }
        Ok(())
    }
}

impl Versioned for TuneFile {
    fn version(&self) -> u32 {
        self.version
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.training_cohorts.iter_mut().chain(&mut self.evaluation_cohorts).for_each(|c| c.resolve(base));
        self.models.resolve(base);
    }

    fn override_seed(&mut self, seed: u64) {
        self.tune.seed = seed;
        if let Some(run) = &mut self.run {
            run.seed = seed;
        }
        // cohorts keep their own seeds so training and evaluation stay disjoint
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.training_cohorts.is_empty() {
            return Err(CliError::Config("training_cohorts must not be empty".into()));
        }
        for t in &self.training_cohorts {
            if self.evaluation_cohorts.iter().any(|e| e.same_as(t)) {
                return Err(CliError::Config("training and evaluation cohorts must be distinct".into()));
            }
        }
        if !self.evaluation_cohorts.is_empty() && self.run.is_none() {
            return Err(CliError::Config("evaluation_cohorts require run settings".into()));
        }
        if let Some(run) = &self.run {
            validate_run(run, &PolicySpec::myopic())?;
        }
        self.tune.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.base_policy.kind != allocsim::policies::PolicyKind::Potential {
            return Err(CliError::Config("base_policy must be a potential policy".into()));
        }
        Ok(())
    }
}
