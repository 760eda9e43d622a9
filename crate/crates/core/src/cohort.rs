//! Cohorts: the patient, donor and covariate-update streams a simulation
//! replays.
//!
//! Synthetic cohorts come with the generative models that produced them
//! (exponential-baseline proportional hazards for waitlist death and graft
//! failure, logistic offer acceptance), so fitted models and policy behavior
//! can be checked against known truth. Cohorts round-trip through CSV files
//! plus a JSON sidecar holding the schema and ground truth.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acceptance::{acceptance_features, AcceptanceModel};
use crate::domain::{BloodType, Donor, DonorId, GeoPoint, Patient, PatientId, Status};
use crate::policies::SurvivalModels;
use crate::simulator::{Event, EventKind};
use crate::survival::{graft_features, CoxModel, SurvivalError, SurvivalSample, DAYS_PER_YEAR};

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("invalid cohort config: {0}")]
    Config(String),
    #[error("{file}: row {row}, column `{column}`: {message}")]
    Parse { file: String, row: usize, column: String, message: String },
    #[error("{file}: header does not match schema (expected {expected:?}, found {found:?})")]
    SchemaMismatch { file: String, expected: Vec<String>, found: Vec<String> },
    #[error("invalid cohort: {0}")]
    Invalid(String),
    #[error("cohort has no ground-truth models")]
    NoGroundTruth,
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CohortError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CohortError + '_ {
    move |source| CohortError::Io { path: path.to_path_buf(), source }
}

/// Covariate layout shared by a cohort and the models applied to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSchema {
    pub waitlist_dim: usize,
    pub donor_dim: usize,
    pub graft_patient_dim: usize,
}

impl CohortSchema {
    /// Width of the graft-model input (donor, patient graft, distance).
    pub fn graft_dim(&self) -> usize {
        self.donor_dim + self.graft_patient_dim + 1
    }

    /// Width of the acceptance-model input (donor, patient waitlist, distance).
    pub fn acceptance_dim(&self) -> usize {
        self.donor_dim + self.waitlist_dim + 1
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(
            format!("wl={};don={};gr={}", self.waitlist_dim, self.donor_dim, self.graft_patient_dim).as_bytes(),
        );
        hex::encode(&digest[..8])
    }

    fn patient_header(&self) -> Vec<String> {
        let mut h: Vec<String> =
            ["id", "arrival_day", "blood_type", "status", "lat", "lon", "death_day"].map(String::from).to_vec();
        h.extend((0..self.waitlist_dim).map(|i| format!("wl_cov_{i}")));
        h.extend((0..self.graft_patient_dim).map(|i| format!("gr_cov_{i}")));
        h
    }

    fn donor_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["id", "arrival_day", "blood_type", "is_dbd", "lat", "lon"].map(String::from).to_vec();
        h.extend((0..self.donor_dim).map(|i| format!("don_cov_{i}")));
        h
    }

    fn update_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["patient_id", "day"].map(String::from).to_vec();
        h.extend((0..self.waitlist_dim).map(|i| format!("wl_cov_{i}")));
        h
    }
}

/// Scripted change of a waitlisted patient's covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateUpdate {
    pub time: f64,
    pub patient_id: PatientId,
    pub waitlist_covariates: Vec<f64>,
}

/// Generative parameters behind a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub waitlist_theta: Vec<f64>,
    /// Baseline waitlist death hazard per day.
    pub waitlist_baseline_rate: f64,
    pub graft_theta: Vec<f64>,
    /// Baseline graft failure hazard per day.
    pub graft_baseline_rate: f64,
    pub acceptance: AcceptanceModel,
    /// Grid spacing of the step-function baselines built from these rates.
    pub baseline_step_days: f64,
    pub baseline_support_days: f64,
}

impl GroundTruth {
    pub fn waitlist_model(&self) -> Result<CoxModel> {
        Ok(CoxModel::exponential(
            self.waitlist_theta.clone(),
            self.waitlist_baseline_rate,
            self.baseline_step_days,
            self.baseline_support_days,
        )?)
    }

    pub fn graft_model(&self) -> Result<CoxModel> {
        Ok(CoxModel::exponential(
            self.graft_theta.clone(),
            self.graft_baseline_rate,
            self.baseline_step_days,
            self.baseline_support_days,
        )?)
    }

    pub fn survival_models(&self) -> Result<SurvivalModels> {
        Ok(SurvivalModels { graft: self.graft_model()?, waitlist: self.waitlist_model()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub horizon_days: f64,
    pub seed: u64,
    pub patient_rate_per_day: f64,
    pub donor_rate_per_day: f64,
    /// Patients already waiting when the window opens.
    pub initial_waitlist: usize,
    /// Listing times of the initial waitlist spread uniformly over this many
    /// days before the window.
    pub initial_listing_spread_days: f64,
    pub dbd_fraction: f64,
    /// Probabilities for (O, A, B, AB).
    pub blood_type_dist: [f64; 4],
    /// Probabilities for statuses 1..=6.
    pub status_dist: [f64; 6],
    pub center_locations: Vec<GeoPoint>,
    /// Donors are placed uniformly in this box.
    pub donor_region: Region,
    pub waitlist_dim: usize,
    pub donor_dim: usize,
    pub graft_patient_dim: usize,
    pub true_waitlist_theta: Vec<f64>,
    pub waitlist_baseline_rate: f64,
    pub true_graft_theta: Vec<f64>,
    pub graft_baseline_rate: f64,
    pub acceptance_intercept: f64,
    pub acceptance_weights: Vec<f64>,
    /// Per-patient rate of scripted covariate updates (0 disables them).
    pub covariate_update_rate_per_day: f64,
    pub covariate_update_sd: f64,
    pub baseline_step_days: f64,
    pub baseline_support_days: f64,
}

fn default_centers() -> Vec<GeoPoint> {
    [
        (42.36, -71.06),  // Boston
        (40.71, -74.01),  // New York
        (39.95, -75.17),  // Philadelphia
        (40.44, -79.99),  // Pittsburgh
        (41.50, -81.69),  // Cleveland
        (41.88, -87.63),  // Chicago
        (36.16, -86.78),  // Nashville
        (33.75, -84.39),  // Atlanta
        (25.76, -80.19),  // Miami
        (29.76, -95.37),  // Houston
        (32.78, -96.80),  // Dallas
        (44.98, -93.27),  // Minneapolis
        (39.74, -104.99), // Denver
        (33.45, -112.07), // Phoenix
        (40.76, -111.89), // Salt Lake City
        (47.61, -122.33), // Seattle
        (37.77, -122.42), // San Francisco
        (34.05, -118.24), // Los Angeles
    ]
    .iter()
    .map(|&(lat, lon)| GeoPoint::new(lat, lon).expect("valid center"))
    .collect()
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            horizon_days: 30.0,
            seed: 0,
            patient_rate_per_day: 3.0,
            donor_rate_per_day: 3.3,
            initial_waitlist: 300,
            initial_listing_spread_days: 365.0,
            dbd_fraction: 0.8,
            blood_type_dist: [0.44, 0.42, 0.10, 0.04],
            status_dist: [0.10, 0.15, 0.20, 0.25, 0.10, 0.20],
            center_locations: default_centers(),
            donor_region: Region { lat_min: 26.0, lat_max: 48.0, lon_min: -123.0, lon_max: -70.0 },
            waitlist_dim: 2,
            donor_dim: 2,
            graft_patient_dim: 2,
            true_waitlist_theta: vec![1.0, -0.5],
            // median waitlist survival of 3 years at zero covariates
            waitlist_baseline_rate: 2f64.ln() / (3.0 * DAYS_PER_YEAR),
            true_graft_theta: vec![0.3, -0.2, 0.35, 0.25, 0.15],
            // median graft survival of 11 years at zero covariates and distance
            graft_baseline_rate: 2f64.ln() / (11.0 * DAYS_PER_YEAR),
            acceptance_intercept: -1.0,
            acceptance_weights: vec![-1.2, 0.3, 0.4, -0.2, -0.6],
            covariate_update_rate_per_day: 0.0,
            covariate_update_sd: 0.3,
            baseline_step_days: 1.0,
            baseline_support_days: 60.0 * DAYS_PER_YEAR,
        }
    }
}

impl CohortConfig {
    pub fn schema(&self) -> CohortSchema {
        CohortSchema {
            waitlist_dim: self.waitlist_dim,
            donor_dim: self.donor_dim,
            graft_patient_dim: self.graft_patient_dim,
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            waitlist_theta: self.true_waitlist_theta.clone(),
            waitlist_baseline_rate: self.waitlist_baseline_rate,
            graft_theta: self.true_graft_theta.clone(),
            graft_baseline_rate: self.graft_baseline_rate,
            acceptance: AcceptanceModel::new(self.acceptance_intercept, self.acceptance_weights.clone())
                .with_schema_hash(self.schema().hash()),
            baseline_step_days: self.baseline_step_days,
            baseline_support_days: self.baseline_support_days,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CohortError::Config(msg));
        if !(self.horizon_days >= 0.0) || !self.horizon_days.is_finite() {
            return fail(format!("horizon_days must be a finite value >= 0, got {}", self.horizon_days));
        }
        for (name, rate) in [
            ("patient_rate_per_day", self.patient_rate_per_day),
            ("donor_rate_per_day", self.donor_rate_per_day),
            ("waitlist_baseline_rate", self.waitlist_baseline_rate),
            ("graft_baseline_rate", self.graft_baseline_rate),
            ("baseline_step_days", self.baseline_step_days),
        ] {
            if !(rate > 0.0) || !rate.is_finite() {
                return fail(format!("{name} must be positive, got {rate}"));
            }
        }
        if !(self.baseline_support_days >= self.baseline_step_days) {
            return fail("baseline_support_days must be at least baseline_step_days".into());
        }
        if !(0.0..=1.0).contains(&self.dbd_fraction) {
            return fail(format!("dbd_fraction must lie in [0, 1], got {}", self.dbd_fraction));
        }
        check_simplex("blood_type_dist", &self.blood_type_dist)?;
        check_simplex("status_dist", &self.status_dist)?;
        if self.center_locations.is_empty() {
            return fail("center_locations must not be empty".into());
        }
        let r = &self.donor_region;
        if GeoPoint::new(r.lat_min, r.lon_min).is_err()
            || GeoPoint::new(r.lat_max, r.lon_max).is_err()
            || r.lat_min > r.lat_max
            || r.lon_min > r.lon_max
        {
            return fail("donor_region must be a valid lat/lon box".into());
        }
        let schema = self.schema();
        for (name, len, expected) in [
            ("true_waitlist_theta", self.true_waitlist_theta.len(), schema.waitlist_dim),
            ("true_graft_theta", self.true_graft_theta.len(), schema.graft_dim()),
            ("acceptance_weights", self.acceptance_weights.len(), schema.acceptance_dim()),
        ] {
            if len != expected {
                return fail(format!("{name} has {len} entries, schema requires {expected}"));
            }
        }
        if !(self.covariate_update_rate_per_day >= 0.0) || !(self.covariate_update_sd >= 0.0) {
            return fail("covariate update rate and sd must be non-negative".into());
        }
        if !(self.initial_listing_spread_days >= 0.0) {
            return fail("initial_listing_spread_days must be non-negative".into());
        }
        Ok(())
    }
}

fn check_simplex(name: &str, p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(CohortError::Config(format!("{name} must be a probability vector summing to 1, got {p:?}")));
    }
    Ok(())
}

/// Sidecar metadata stored next to cohort CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortMeta {
    pub schema: CohortSchema,
    #[serde(default)]
    pub schema_hash: String,
    #[serde(default)]
    pub horizon_days: Option<f64>,
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
}

pub const PATIENTS_FILE: &str = "patients.csv";
pub const DONORS_FILE: &str = "donors.csv";
pub const UPDATES_FILE: &str = "updates.csv";
pub const META_FILE: &str = "cohort.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: CohortSchema,
    /// Sorted by listing time, then id.
    pub patients: Vec<Patient>,
    /// Sorted by arrival time, then id.
    pub donors: Vec<Donor>,
    /// Sorted by time, then patient id.
    pub updates: Vec<CovariateUpdate>,
    pub horizon_days: Option<f64>,
    pub ground_truth: Option<GroundTruth>,
    /// Set when input rows were not in time order and had to be sorted.
    pub reordered: bool,
}

impl Cohort {
    pub fn empty(schema: CohortSchema) -> Self {
        Cohort {
            schema,
            patients: Vec::new(),
            donors: Vec::new(),
            updates: Vec::new(),
            horizon_days: None,
            ground_truth: None,
            reordered: false,
        }
    }

    /// Declared horizon, or the latest scheduled event when none is declared.
    pub fn effective_horizon(&self) -> f64 {
        self.horizon_days.unwrap_or_else(|| {
            let patients = self.patients.iter().map(|p| p.listing_time.max(0.0));
            let donors = self.donors.iter().map(|d| d.arrival_time);
            let updates = self.updates.iter().map(|u| u.time);
            patients.chain(donors).chain(updates).fold(0.0, f64::max).max(f64::MIN_POSITIVE)
        })
    }

    pub fn ground_truth(&self) -> Result<&GroundTruth> {
        self.ground_truth.as_ref().ok_or(CohortError::NoGroundTruth)
    }

    fn sort(&mut self) -> bool {
        let patients_sorted = self.patients.windows(2).all(|w| patient_key(&w[0]) <= patient_key(&w[1]));
        let donors_sorted = self.donors.windows(2).all(|w| donor_key(&w[0]) <= donor_key(&w[1]));
        let updates_sorted = self.updates.windows(2).all(|w| update_key(&w[0]) <= update_key(&w[1]));
        if patients_sorted && donors_sorted && updates_sorted {
            return false;
        }
        self.patients.sort_by(|a, b| patient_key(a).partial_cmp(&patient_key(b)).expect("finite times"));
        self.donors.sort_by(|a, b| donor_key(a).partial_cmp(&donor_key(b)).expect("finite times"));
        self.updates.sort_by(|a, b| update_key(a).partial_cmp(&update_key(b)).expect("finite times"));
        true
    }

    /// Checks covariate widths, id uniqueness, death and update times.
    pub fn validate(&self) -> Result<()> {
        let s = &self.schema;
        let mut listed: HashMap<PatientId, f64> = HashMap::with_capacity(self.patients.len());
        for p in &self.patients {
            if p.waitlist_covariates.len() != s.waitlist_dim || p.graft_covariates.len() != s.graft_patient_dim {
                return Err(CohortError::Invalid(format!("patient {} covariates do not match the schema", p.id)));
            }
            if !p.listing_time.is_finite() {
                return Err(CohortError::Invalid(format!("patient {} has a non-finite listing time", p.id)));
            }
            if let Some(d) = p.death_time {
                if !(d >= p.listing_time) || !(d >= 0.0) {
                    return Err(CohortError::Invalid(format!(
                        "patient {} dies at {d}, before listing or before the window opens",
                        p.id
                    )));
                }
            }
            if listed.insert(p.id, p.listing_time).is_some() {
                return Err(CohortError::Invalid(format!("duplicate patient id {}", p.id)));
            }
        }
        let mut donor_ids = std::collections::HashSet::with_capacity(self.donors.len());
        for d in &self.donors {
            if d.donor_covariates.len() != s.donor_dim {
                return Err(CohortError::Invalid(format!("donor {} covariates do not match the schema", d.id)));
            }
            if !(d.arrival_time >= 0.0) {
                return Err(CohortError::Invalid(format!("donor {} arrives before the window opens", d.id)));
            }
            if !donor_ids.insert(d.id) {
                return Err(CohortError::Invalid(format!("duplicate donor id {}", d.id)));
            }
        }
        for u in &self.updates {
            let Some(&listing) = listed.get(&u.patient_id) else {
                return Err(CohortError::Invalid(format!("update for unknown patient {}", u.patient_id)));
            };
            if !(u.time >= listing.max(0.0)) || u.waitlist_covariates.len() != s.waitlist_dim {
                return Err(CohortError::Invalid(format!("invalid update for patient {} at {}", u.patient_id, u.time)));
            }
        }
        Ok(())
    }

    /// Time-ordered event stream. Patients listed before the window arrive at
    /// time zero; deaths after `horizon` are not emitted.
    pub fn events(&self, horizon: f64) -> Vec<Event> {
        let mut events = Vec::with_capacity(2 * self.patients.len() + self.donors.len() + self.updates.len());
        for p in &self.patients {
            events.push(Event { time: p.listing_time.max(0.0), kind: EventKind::PatientArrival(p.clone()) });
            if let Some(d) = p.death_time.filter(|&d| d <= horizon) {
                events.push(Event { time: d, kind: EventKind::PatientDeath(p.id) });
            }
        }
        for d in &self.donors {
            events.push(Event { time: d.arrival_time, kind: EventKind::DonorArrival(d.clone()) });
        }
        for u in &self.updates {
            events.push(Event {
                time: u.time,
                kind: EventKind::CovariateUpdate(u.patient_id, u.waitlist_covariates.clone()),
            });
        }
        events.sort_by(Event::queue_order);
        events
    }

    /// Observed waitlist outcomes for fitting a waitlist-survival model.
    ///
    /// Follow-up starts at listing (or at time zero for patients listed
    /// before the window) and ends at death, at `observe_until`, or at the
    /// patient's transplant time if one is given, whichever comes first; only
    /// deaths count as events. Covariates are those at listing.
    pub fn waitlist_samples(&self, observe_until: f64, transplants: &HashMap<PatientId, f64>) -> Vec<SurvivalSample> {
        self.patients
            .iter()
            .filter_map(|p| {
                let start = p.listing_time.max(0.0);
                if start >= observe_until {
                    return None;
                }
                let death = p.death_time.unwrap_or(f64::INFINITY);
                let transplant = transplants.get(&p.id).copied().unwrap_or(f64::INFINITY);
                let end = death.min(transplant).min(observe_until);
                let event = death <= transplant.min(observe_until);
                Some(SurvivalSample::new(end - start, event, p.waitlist_covariates.clone()))
            })
            .collect()
    }

    /// Random blood-compatible (donor, patient) index pairs drawn uniformly.
    fn compatible_pairs(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
        if self.donors.is_empty() || self.patients.is_empty() {
            return Err(CohortError::Invalid("need donors and patients to draw pairs".into()));
        }
        let mut pairs = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while pairs.len() < n {
            attempts += 1;
            if attempts > 1000 * n.max(1) {
                return Err(CohortError::Invalid("could not find blood-compatible pairs".into()));
            }
            let d = rng.random_range(0..self.donors.len());
            let p = rng.random_range(0..self.patients.len());
            if self.donors[d].match_with(&self.patients[p]).is_compatible() {
                pairs.push((d, p));
            }
        }
        Ok(pairs)
    }

    /// Synthetic post-transplant outcomes for `n` random compatible pairs,
    /// drawn from the ground-truth graft model with uniform administrative
    /// censoring over `[0, max_follow_up_days]`.
    pub fn graft_samples(&self, n: usize, max_follow_up_days: f64, seed: u64) -> Result<Vec<SurvivalSample>> {
        let truth = self.ground_truth()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = self.compatible_pairs(n, &mut rng)?;
        Ok(pairs
            .into_iter()
            .map(|(d, p)| {
                let x = graft_features(&self.donors[d], &self.patients[p]);
                let rate = truth.graft_baseline_rate * dot(&truth.graft_theta, &x).exp();
                let failure = Exp::new(rate).expect("positive rate").sample(&mut rng);
                let censor = rng.random::<f64>() * max_follow_up_days;
                SurvivalSample::new(failure.min(censor), failure <= censor, x)
            })
            .collect())
    }

    /// Synthetic labeled offers for `n` random compatible pairs, labeled by
    /// the ground-truth acceptance model.
    pub fn acceptance_samples(&self, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
        let truth = self.ground_truth()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = self.compatible_pairs(n, &mut rng)?;
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (d, p) in pairs {
            let x = acceptance_features(&self.donors[d], &self.patients[p]);
            let prob = truth.acceptance.probability(&x).map_err(|e| CohortError::Invalid(e.to_string()))?;
            labels.push(rng.random::<f64>() < prob);
            features.push(x);
        }
        Ok((features, labels))
    }

    pub fn meta(&self) -> CohortMeta {
        CohortMeta {
            schema: self.schema,
            schema_hash: self.schema.hash(),
            horizon_days: self.horizon_days,
            ground_truth: self.ground_truth.clone(),
        }
    }

    /// Writes `patients.csv`, `donors.csv`, `updates.csv` (when there are
    /// updates) and the `cohort.json` sidecar into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.save_csv(&dir.join(PATIENTS_FILE), &dir.join(DONORS_FILE))?;
        let updates = dir.join(UPDATES_FILE);
        if self.updates.is_empty() {
            if updates.exists() {
                fs::remove_file(&updates).map_err(io_err(&updates))?;
            }
        } else {
            self.save_updates_csv(&updates)?;
        }
        let meta_path = dir.join(META_FILE);
        fs::write(&meta_path, serde_json::to_string_pretty(&self.meta())?).map_err(io_err(&meta_path))?;
        Ok(())
    }

    pub fn save_csv(&self, patients_path: &Path, donors_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(patients_path)?;
        w.write_record(self.schema.patient_header())?;
        for p in &self.patients {
            let mut row = vec![
                p.id.to_string(),
                p.listing_time.to_string(),
                p.blood_type.to_string(),
                p.status.get().to_string(),
                p.center.lat().to_string(),
                p.center.lon().to_string(),
                p.death_time.map(|d| d.to_string()).unwrap_or_default(),
            ];
            row.extend(p.waitlist_covariates.iter().chain(&p.graft_covariates).map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(patients_path))?;

        let mut w = csv::Writer::from_path(donors_path)?;
        w.write_record(self.schema.donor_header())?;
        for d in &self.donors {
            let mut row = vec![
                d.id.to_string(),
                d.arrival_time.to_string(),
                d.blood_type.to_string(),
                d.is_dbd.to_string(),
                d.location.lat().to_string(),
                d.location.lon().to_string(),
            ];
            row.extend(d.donor_covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(donors_path))?;
        Ok(())
    }

    pub fn save_updates_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.update_header())?;
        for u in &self.updates {
            let mut row = vec![u.patient_id.to_string(), u.time.to_string()];
            row.extend(u.waitlist_covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }

    /// Loads a directory written by [`Cohort::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Cohort> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: CohortMeta = serde_json::from_str(&text)?;
        let updates = dir.join(UPDATES_FILE);
        let updates = updates.exists().then_some(updates);
        let mut cohort = load_csv(&dir.join(PATIENTS_FILE), &dir.join(DONORS_FILE), updates.as_deref(), &meta.schema)?;
        cohort.horizon_days = meta.horizon_days;
        cohort.ground_truth = meta.ground_truth;
        Ok(cohort)
    }
}

fn patient_key(p: &Patient) -> (f64, u64) {
    (p.listing_time, p.id.0)
}

fn donor_key(d: &Donor) -> (f64, u64) {
    (d.arrival_time, d.id.0)
}

fn update_key(u: &CovariateUpdate) -> (f64, u64) {
    (u.time, u.patient_id.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct RowReader<'a> {
    file: String,
    row: usize,
    header: &'a [String],
    record: &'a csv::StringRecord,
}

impl RowReader<'_> {
    fn raw(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("").trim()
    }

    fn err(&self, col: usize, message: String) -> CohortError {
        CohortError::Parse { file: self.file.clone(), row: self.row, column: self.header[col].clone(), message }
    }

    fn parse<T: std::str::FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(col).parse::<T>().map_err(|e| self.err(col, format!("`{}`: {e}", self.raw(col))))
    }

    fn f64(&self, col: usize) -> Result<f64> {
        let v: f64 = self.parse(col)?;
        if !v.is_finite() {
            return Err(self.err(col, format!("`{}` is not finite", self.raw(col))));
        }
        Ok(v)
    }

    fn point(&self, lat_col: usize) -> Result<GeoPoint> {
        GeoPoint::new(self.f64(lat_col)?, self.f64(lat_col + 1)?).map_err(|e| self.err(lat_col, e.to_string()))
    }

    fn covariates(&self, from: usize, n: usize) -> Result<Vec<f64>> {
        (from..from + n).map(|c| self.f64(c)).collect()
    }
}

fn read_table(path: &Path, expected: &[String], optional: Option<&str>) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => CohortError::Io { path: path.to_path_buf(), source },
        other => CohortError::Invalid(format!("{file}: {other:?}")),
    })?;
    let found: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let without_optional: Vec<String> = expected.iter().filter(|h| Some(h.as_str()) != optional).cloned().collect();
    let header = if found == expected {
        expected.to_vec()
    } else if optional.is_some() && found == without_optional {
        without_optional
    } else {
        return Err(CohortError::SchemaMismatch { file, expected: expected.to_vec(), found });
    };
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, records))
}

/// Parses cohort CSVs against `schema`.
///
/// The `death_day` column of the patient file may be omitted entirely (no
/// scripted deaths) or left empty per row. Rows out of time order are sorted
/// and flagged through [`Cohort::reordered`].
pub fn load_csv(patients_path: &Path, donors_path: &Path, updates_path: Option<&Path>, schema: &CohortSchema) -> Result<Cohort> {
    let mut cohort = Cohort::empty(*schema);

    let (header, records) = read_table(patients_path, &schema.patient_header(), Some("death_day"))?;
    let has_death = header.iter().any(|h| h == "death_day");
    let cov_start = if has_death { 7 } else { 6 };
    for (i, record) in records.iter().enumerate() {
        let r = RowReader { file: patients_path.display().to_string(), row: i + 1, header: &header, record };
        let status: u8 = r.parse(3)?;
        let death_time = if has_death && !r.raw(6).is_empty() { Some(r.f64(6)?) } else { None };
        cohort.patients.push(Patient {
            id: PatientId(r.parse(0)?),
            listing_time: r.f64(1)?,
            blood_type: r.parse(2)?,
            status: Status::new(status).map_err(|e| r.err(3, e.to_string()))?,
            center: r.point(4)?,
            death_time,
            waitlist_covariates: r.covariates(cov_start, schema.waitlist_dim)?,
            graft_covariates: r.covariates(cov_start + schema.waitlist_dim, schema.graft_patient_dim)?,
            active: true,
        });
    }

    let (header, records) = read_table(donors_path, &schema.donor_header(), None)?;
    for (i, record) in records.iter().enumerate() {
        let r = RowReader { file: donors_path.display().to_string(), row: i + 1, header: &header, record };
        cohort.donors.push(Donor {
            id: DonorId(r.parse(0)?),
            arrival_time: r.f64(1)?,
            blood_type: r.parse(2)?,
            is_dbd: r.parse(3)?,
            location: r.point(4)?,
            donor_covariates: r.covariates(6, schema.donor_dim)?,
        });
    }

    if let Some(path) = updates_path {
        let (header, records) = read_table(path, &schema.update_header(), None)?;
        for (i, record) in records.iter().enumerate() {
            let r = RowReader { file: path.display().to_string(), row: i + 1, header: &header, record };
            cohort.updates.push(CovariateUpdate {
                patient_id: PatientId(r.parse(0)?),
                time: r.f64(1)?,
                waitlist_covariates: r.covariates(2, schema.waitlist_dim)?,
            });
        }
    }

    if cohort.sort() {
        log::warn!("cohort rows were not in time order and have been sorted");
        cohort.reordered = true;
    }
    cohort.validate()?;
    Ok(cohort)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws a synthetic cohort.
///
/// Patients and donors arrive as Poisson processes over the horizon, with an
/// initial waitlist present at time zero; covariates are i.i.d. standard
/// normal. Each patient's latent death time follows the proportional-hazards
/// law of `true_waitlist_theta` with an exponential baseline, piecewise in
/// time when scripted covariate updates change the hazard. A zero horizon
/// yields an empty cohort.
pub fn generate(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let schema = config.schema();
    let truth = config.ground_truth();
    let mut cohort = Cohort::empty(schema);
    cohort.horizon_days = Some(config.horizon_days);
    cohort.ground_truth = Some(truth);
    if config.horizon_days == 0.0 {
        return Ok(cohort);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let horizon = config.horizon_days;
    let blood = WeightedIndex::new(config.blood_type_dist).map_err(|e| CohortError::Config(e.to_string()))?;
    let status = WeightedIndex::new(config.status_dist).map_err(|e| CohortError::Config(e.to_string()))?;

    let mut listing_times: Vec<f64> = (0..config.initial_waitlist)
        .map(|_| -rng.random::<f64>() * config.initial_listing_spread_days)
        .collect();
    listing_times.sort_by(f64::total_cmp);
    listing_times.extend(poisson_times(&mut rng, config.patient_rate_per_day, horizon));

    for (k, &listing_time) in listing_times.iter().enumerate() {
        let id = PatientId(k as u64 + 1);
        let waitlist_covariates = normal_vec(&mut rng, schema.waitlist_dim);
        let graft_covariates = normal_vec(&mut rng, schema.graft_patient_dim);
        let blood_type = BloodType::ALL[blood.sample(&mut rng)];
        let st = Status::new(status.sample(&mut rng) as u8 + 1).expect("status in range");
        let center = config.center_locations[rng.random_range(0..config.center_locations.len())];

        // hazard segments: covariates change at each scripted update
        let start = listing_time.max(0.0);
        let mut updates = Vec::new();
        if config.covariate_update_rate_per_day > 0.0 {
            let mut cov = waitlist_covariates.clone();
            for t in poisson_times(&mut rng, config.covariate_update_rate_per_day, horizon - start) {
                cov = cov.iter().map(|c| c + config.covariate_update_sd * rng.sample::<f64, _>(StandardNormal)).collect();
                updates.push(CovariateUpdate { time: start + t, patient_id: id, waitlist_covariates: cov.clone() });
            }
        }
        let death_time = {
            let mut seg_start = start;
            let mut cov = &waitlist_covariates;
            let mut death = None;
            for u in updates.iter().map(Some).chain(std::iter::once(None)) {
                let seg_end = u.map_or(f64::INFINITY, |u| u.time);
                let rate = config.waitlist_baseline_rate * dot(&config.true_waitlist_theta, cov).exp();
                let t = seg_start + Exp::new(rate).expect("positive rate").sample(&mut rng);
                if t < seg_end {
                    death = Some(t);
                    break;
                }
                if let Some(u) = u {
                    seg_start = u.time;
                    cov = &u.waitlist_covariates;
                }
            }
            death.expect("final segment is unbounded")
        };
        updates.retain(|u| u.time < death_time);
        cohort.updates.extend(updates);
        cohort.patients.push(Patient {
            id,
            blood_type,
            status: st,
            listing_time,
            center,
            waitlist_covariates,
            graft_covariates,
            death_time: Some(death_time),
            active: true,
        });
    }

    let region = config.donor_region;
    for (k, arrival_time) in poisson_times(&mut rng, config.donor_rate_per_day, horizon).into_iter().enumerate() {
        let lat = region.lat_min + rng.random::<f64>() * (region.lat_max - region.lat_min);
        let lon = region.lon_min + rng.random::<f64>() * (region.lon_max - region.lon_min);
        cohort.donors.push(Donor {
            id: DonorId(k as u64 + 1),
            blood_type: BloodType::ALL[blood.sample(&mut rng)],
            location: GeoPoint::new(lat, lon).expect("region validated"),
            arrival_time,
            is_dbd: rng.random::<f64>() < config.dbd_fraction,
            donor_covariates: normal_vec(&mut rng, schema.donor_dim),
        });
    }
    cohort.sort();
    Ok(cohort)
}

/// Arrival times of a homogeneous Poisson process on `[0, horizon]`.
fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, horizon: f64) -> Vec<f64> {
    let gap = Exp::new(rate).expect("positive rate");
    let mut times = Vec::new();
    let mut t = gap.sample(rng);
    while t <= horizon {
        times.push(t);
        t += gap.sample(rng);
    }
    times
}
