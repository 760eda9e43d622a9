//! Discrete-event allocation engine.
//!
//! A run replays a cohort's arrivals, covariate updates and deaths, offering
//! each donor down the policy's ordering until a candidate accepts (or, for
//! batched brain-death donors, assigning a whole batch by maximum-weight
//! matching on benefit). The objective is the sum of benefits of all
//! transplants performed.
//!
//! Randomness: each run owns a `ChaCha8Rng` seeded with `seed` (replication
//! `i` uses `seed + i`). The only draws are one uniform `f64` per offer made
//! by a stochastic cascade, taken in cascade order; the offer is accepted iff
//! the draw is below the adjusted acceptance probability.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acceptance::{adjusted_probability, AcceptanceError, AcceptancePolicyConfig, OfferPredictor};
use crate::cohort::{Cohort, CohortSchema};
use crate::domain::{Donor, DonorId, Patient, PatientId};
use crate::matching::{max_weight_matching, WeightMatrix};
use crate::policies::{delta, rank_candidates, PolicyError, PolicyKind, PolicySpec, SurvivalModels};
use crate::stats::MeanStd;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("event at day {time} lies outside [0, {horizon}]")]
    EventOutOfRange { time: f64, horizon: f64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Acceptance(#[from] AcceptanceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    PatientDeath(PatientId),
    CovariateUpdate(PatientId, Vec<f64>),
    PatientArrival(Patient),
    DonorArrival(Donor),
    BatchDeadline(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

impl Event {
    /// Rank among simultaneous events; lower goes first.
    pub fn priority(&self) -> u8 {
        match self.kind {
            EventKind::PatientDeath(_) => 0,
            EventKind::CovariateUpdate(..) => 1,
            EventKind::PatientArrival(_) => 2,
            EventKind::DonorArrival(_) => 3,
            EventKind::BatchDeadline(_) => 4,
        }
    }

    pub fn id(&self) -> u64 {
        match &self.kind {
            EventKind::PatientDeath(id) | EventKind::CovariateUpdate(id, _) => id.0,
            EventKind::PatientArrival(p) => p.id.0,
            EventKind::DonorArrival(d) => d.id.0,
            EventKind::BatchDeadline(batch) => *batch,
        }
    }

    /// Processing order: time, then kind priority, then id.
    pub fn queue_order(a: &Event, b: &Event) -> Ordering {
        a.time.total_cmp(&b.time).then(a.priority().cmp(&b.priority())).then(a.id().cmp(&b.id()))
    }
}

/// Heap entry; `seq` keeps equal-key events in insertion order.
struct Queued {
    event: Event,
    seq: u64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        Event::queue_order(&self.event, &other.event).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, event: Event) {
        self.heap.push(Reverse(Queued { event, seq: self.seq }));
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(q)| q.event)
    }
}

fn default_batch_size() -> usize {
    1
}

fn default_batch_window_hours() -> f64 {
    48.0
}

fn default_replications() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon_days: f64,
    pub policy: PolicySpec,
    #[serde(default)]
    pub acceptance: AcceptancePolicyConfig,
    /// Brain-death donors per batch; 1 disables batching.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_batch_window_hours")]
    pub batch_window_hours: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

impl SimConfig {
    pub fn new(horizon_days: f64, policy: PolicySpec) -> Self {
        SimConfig {
            horizon_days,
            policy,
            acceptance: AcceptancePolicyConfig::default(),
            batch_size: 1,
            batch_window_hours: 48.0,
            seed: 0,
            replications: 1,
        }
    }

    pub fn always_accept(mut self) -> Self {
        self.acceptance.always_accept = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_days > 0.0) || !self.horizon_days.is_finite() {
            return Err(SimError::Config(format!("horizon_days must be positive, got {}", self.horizon_days)));
        }
        if self.batch_size == 0 {
            return Err(SimError::Config("batch_size must be at least 1".into()));
        }
        if !(self.batch_window_hours > 0.0) || !self.batch_window_hours.is_finite() {
            return Err(SimError::Config(format!(
                "batch_window_hours must be positive, got {}",
                self.batch_window_hours
            )));
        }
        if self.replications == 0 {
            return Err(SimError::Config("replications must be at least 1".into()));
        }
        if self.batch_size > 1 && self.policy.kind != PolicyKind::Myopic {
            return Err(SimError::Config("batching is only defined for the myopic policy".into()));
        }
        self.policy.validate()?;
        self.acceptance.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransplantRecord {
    pub donor_id: DonorId,
    pub patient_id: PatientId,
    pub time_days: f64,
    pub delta_years: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimResult {
    /// Sum of `delta_years` over `transplants`, accumulated in order.
    pub total_life_years: f64,
    pub transplants: Vec<TransplantRecord>,
    pub donors_arrived: usize,
    pub discarded_donors: usize,
    pub waitlist_deaths: usize,
    pub offers_made: usize,
    pub offers_rejected: usize,
}

/// Summary without the per-transplant records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub total_life_years: f64,
    pub transplants: usize,
    pub donors_arrived: usize,
    pub discarded_donors: usize,
    pub waitlist_deaths: usize,
    pub offers_made: usize,
    pub offers_rejected: usize,
}

impl SimResult {
    pub fn summary(&self) -> SimSummary {
        SimSummary {
            total_life_years: self.total_life_years,
            transplants: self.transplants.len(),
            donors_arrived: self.donors_arrived,
            discarded_donors: self.discarded_donors,
            waitlist_deaths: self.waitlist_deaths,
            offers_made: self.offers_made,
            offers_rejected: self.offers_rejected,
        }
    }

    /// One row per transplant: donor_id, patient_id, time_days, delta_years.
    pub fn write_transplants_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["donor_id", "patient_id", "time_days", "delta_years"])?;
        for t in &self.transplants {
            w.write_record([
                t.donor_id.to_string(),
                t.patient_id.to_string(),
                t.time_days.to_string(),
                t.delta_years.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_transplants_csv(&self, path: &Path) -> Result<()> {
        self.write_transplants_csv(std::fs::File::create(path)?)
    }
}

fn check_schema(schema: &CohortSchema, models: &SurvivalModels) -> Result<()> {
    let hash = schema.hash();
    for (name, model, dim) in [
        ("graft", &models.graft, schema.graft_dim()),
        ("waitlist", &models.waitlist, schema.waitlist_dim),
    ] {
        if model.covariate_dim() != dim {
            return Err(SimError::SchemaMismatch(format!(
                "{name} model takes {} covariates, cohort provides {dim}",
                model.covariate_dim()
            )));
        }
        if !model.schema_hash().is_empty() && model.schema_hash() != hash {
            return Err(SimError::SchemaMismatch(format!(
                "{name} model was fitted for schema {}, cohort schema is {hash}",
                model.schema_hash()
            )));
        }
    }
    Ok(())
}

/// Mutable state of one run.
struct Engine<'a> {
    config: &'a SimConfig,
    models: &'a SurvivalModels,
    acceptance: &'a dyn OfferPredictor,
    rng: ChaCha8Rng,
    /// Active waitlist with latent death times stripped.
    waitlist: BTreeMap<PatientId, Patient>,
    dead: HashSet<PatientId>,
    batch: Vec<Donor>,
    batch_id: u64,
    result: SimResult,
}

impl Engine<'_> {
    fn view(&self) -> Vec<&Patient> {
        self.waitlist.values().collect()
    }

    fn transplant(&mut self, donor: &Donor, patient_id: PatientId, time: f64, delta_years: f64) {
        self.waitlist.remove(&patient_id);
        self.result.total_life_years += delta_years;
        self.result.transplants.push(TransplantRecord { donor_id: donor.id, patient_id, time_days: time, delta_years });
    }

    fn cascade(&mut self, donor: &Donor, time: f64) -> Result<()> {
        let view: Vec<&Patient> = self.waitlist.values().collect();
        let outcome = offer_cascade(
            donor,
            &view,
            self.models,
            self.acceptance,
            &self.config.policy,
            &self.config.acceptance,
            &mut self.rng,
        )?;
        self.result.offers_made += outcome.offers_made;
        self.result.offers_rejected += outcome.offers_rejected;
        match outcome.transplant {
            Some((patient_id, delta_years)) => self.transplant(donor, patient_id, time, delta_years),
            None => self.result.discarded_donors += 1,
        }
        Ok(())
    }

    fn flush_batch(&mut self, time: f64) -> Result<()> {
        let donors = std::mem::take(&mut self.batch);
        self.batch_id += 1;
        if donors.is_empty() {
            return Ok(());
        }
        let patients: Vec<&Patient> = self.view();
        let mut w = WeightMatrix::new(donors.len(), patients.len()).expect("batch is non-empty");
        for (r, donor) in donors.iter().enumerate() {
            for (c, patient) in patients.iter().enumerate() {
                w.set(r, c, batch_weight(donor, patient, self.models, &self.config.policy)?);
            }
        }
        let matching = max_weight_matching(&w);
        let chosen: Vec<(usize, PatientId, f64)> = matching
            .pairs
            .iter()
            .map(|&(r, c)| (r, patients[c].id, w.get(r, c).expect("matched edges are admissible")))
            .collect();
        self.result.offers_made += chosen.len();
        self.result.discarded_donors += donors.len() - chosen.len();
        for (r, patient_id, delta_years) in chosen {
            self.transplant(&donors[r], patient_id, time, delta_years);
        }
        Ok(())
    }
}

/// Benefit of a batch edge, or `None` when the pair may not transplant.
fn batch_weight(donor: &Donor, patient: &Patient, models: &SurvivalModels, spec: &PolicySpec) -> Result<Option<f64>> {
    if !donor.match_with(patient).is_compatible() || spec.max_distance_nm.is_some_and(|m| donor.distance_to(patient) > m)
    {
        return Ok(None);
    }
    let d = delta(donor, patient, models, spec.urgency_weight)?;
    Ok((d > 0.0).then_some(d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    /// Accepting patient and the transplant's benefit.
    pub transplant: Option<(PatientId, f64)>,
    pub offers_made: usize,
    pub offers_rejected: usize,
}

/// Offers `donor` down the policy ordering of `waitlist`, skipping candidates
/// not eligible to transplant, until one accepts.
pub fn offer_cascade(
    donor: &Donor,
    waitlist: &[&Patient],
    models: &SurvivalModels,
    acceptance: &dyn OfferPredictor,
    policy: &PolicySpec,
    acceptance_config: &AcceptancePolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CascadeOutcome> {
    let ranked = rank_candidates(waitlist, donor, models, policy)?;
    let mut outcome = CascadeOutcome { transplant: None, offers_made: 0, offers_rejected: 0 };
    let by_id: BTreeMap<PatientId, &Patient> = waitlist.iter().map(|p| (p.id, *p)).collect();
    for candidate in ranked.iter().filter(|c| c.eligible_to_transplant) {
        outcome.offers_made += 1;
        let accepted = acceptance_config.always_accept || {
            let p = acceptance.acceptance_probability(donor, by_id[&candidate.patient_id])?;
            let q = adjusted_probability(p, acceptance_config.exponent_alpha)?;
            rng.random::<f64>() < q
        };
        if accepted {
            outcome.transplant = Some((candidate.patient_id, candidate.delta_years));
            return Ok(outcome);
        }
        outcome.offers_rejected += 1;
    }
    Ok(outcome)
}

/// Simulates one trajectory of `cohort` under `config` with seed `config.seed`.
pub fn run(
    config: &SimConfig,
    cohort: &Cohort,
    models: &SurvivalModels,
    acceptance: &dyn OfferPredictor,
) -> Result<SimResult> {
    run_seeded(config, cohort, models, acceptance, config.seed)
}

fn run_seeded(
    config: &SimConfig,
    cohort: &Cohort,
    models: &SurvivalModels,
    acceptance: &dyn OfferPredictor,
    seed: u64,
) -> Result<SimResult> {
    config.validate()?;
    check_schema(&cohort.schema, models)?;
    let horizon = config.horizon_days;
    let mut queue = EventQueue::default();
    for event in cohort.events(horizon) {
        if !(event.time >= 0.0 && event.time <= horizon) {
            return Err(SimError::EventOutOfRange { time: event.time, horizon });
        }
        queue.push(event);
    }

    let batching = config.batch_size > 1;
    let mut engine = Engine {
        config,
        models,
        acceptance,
        rng: ChaCha8Rng::seed_from_u64(seed),
        waitlist: BTreeMap::new(),
        dead: HashSet::new(),
        batch: Vec::new(),
        batch_id: 0,
        result: SimResult::default(),
    };

    while let Some(event) = queue.pop() {
        let time = event.time;
        match event.kind {
            EventKind::PatientDeath(id) => {
                if engine.waitlist.remove(&id).is_some() {
                    engine.result.waitlist_deaths += 1;
                } else {
                    engine.dead.insert(id);
                }
            }
            EventKind::CovariateUpdate(id, covariates) => {
                if let Some(p) = engine.waitlist.get_mut(&id) {
                    p.waitlist_covariates = covariates;
                }
            }
            EventKind::PatientArrival(mut patient) => {
                if !engine.dead.contains(&patient.id) {
                    patient.death_time = None;
                    patient.active = true;
                    engine.waitlist.insert(patient.id, patient);
                }
            }
            EventKind::DonorArrival(donor) => {
                engine.result.donors_arrived += 1;
                if batching && donor.is_dbd {
                    if engine.batch.is_empty() {
                        let deadline = (time + config.batch_window_hours / 24.0).min(horizon);
                        queue.push(Event { time: deadline, kind: EventKind::BatchDeadline(engine.batch_id) });
                    }
                    engine.batch.push(donor);
                    if engine.batch.len() == config.batch_size {
                        engine.flush_batch(time)?;
                    }
                } else {
                    engine.cascade(&donor, time)?;
                }
            }
            EventKind::BatchDeadline(id) => {
                if id == engine.batch_id {
                    engine.flush_batch(time)?;
                }
            }
        }
    }
    Ok(engine.result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRun {
    pub seed: u64,
    pub total_life_years: f64,
    pub transplants: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub runs: Vec<ReplicationRun>,
    pub summary: MeanStd,
}

/// Runs `config.replications` independent trajectories with seeds
/// `config.seed + i`, in parallel on the current rayon pool. Results are
/// reported in seed order and do not depend on the thread count.
pub fn replicate(
    config: &SimConfig,
    cohort: &Cohort,
    models: &SurvivalModels,
    acceptance: &dyn OfferPredictor,
) -> Result<Replication> {
    config.validate()?;
    let runs = (0..config.replications as u64)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i);
            let r = run_seeded(config, cohort, models, acceptance, seed)?;
            Ok(ReplicationRun { seed, total_life_years: r.total_life_years, transplants: r.transplants.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    let totals: Vec<f64> = runs.iter().map(|r| r.total_life_years).collect();
    Ok(Replication { summary: MeanStd::of(&totals), runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acceptance::ConstantAcceptance;
    use crate::domain::{BloodType, GeoPoint, Status};
    use crate::survival::{CoxModel, DAYS_PER_YEAR};

    fn schema() -> CohortSchema {
        CohortSchema { waitlist_dim: 1, donor_dim: 1, graft_patient_dim: 0 }
    }

    /// Graft median 10 years; waitlist median `8 * 2^-x` years.
    fn models() -> SurvivalModels {
        let grid = 1.0;
        let support = 100.0 * DAYS_PER_YEAR;
        let graft_rate = 2f64.ln() / (10.0 * DAYS_PER_YEAR);
        let wl_rate = 2f64.ln() / (8.0 * DAYS_PER_YEAR);
        SurvivalModels {
            graft: CoxModel::exponential(vec![0.0, 0.0], graft_rate, grid, support).unwrap(),
            waitlist: CoxModel::exponential(vec![2f64.ln()], wl_rate, grid, support).unwrap(),
        }
    }

    fn here() -> GeoPoint {
        GeoPoint::new(40.0, -90.0).unwrap()
    }

    fn patient(id: u64, blood_type: BloodType, x: f64, listing: f64) -> Patient {
        Patient {
            id: PatientId(id),
            blood_type,
            status: Status::new(1).unwrap(),
            listing_time: listing,
            center: here(),
            waitlist_covariates: vec![x],
            graft_covariates: vec![],
            death_time: None,
            active: true,
        }
    }

    fn donor(id: u64, blood_type: BloodType, t: f64, dbd: bool) -> Donor {
        Donor {
            id: DonorId(id),
            blood_type,
            location: here(),
            arrival_time: t,
            is_dbd: dbd,
            donor_covariates: vec![0.0],
        }
    }

    fn cohort(patients: Vec<Patient>, donors: Vec<Donor>) -> Cohort {
        Cohort { patients, donors, ..Cohort::empty(schema()) }
    }

    #[test]
    fn empty_donor_stream() {
        let c = cohort(vec![patient(1, BloodType::O, 0.0, 0.0)], vec![]);
        let r = run(&SimConfig::new(30.0, PolicySpec::myopic()), &c, &models(), &ConstantAcceptance(1.0)).unwrap();
        assert_eq!(r.total_life_years, 0.0);
        assert!(r.transplants.is_empty());
    }

    #[test]
    fn single_transplant_gains_delta() {
        // waitlist median 8 * 2^-2 = 2 years, graft 10 years
        let c = cohort(vec![patient(1, BloodType::O, 2.0, 0.0)], vec![donor(1, BloodType::O, 1.0, false)]);
        let cfg = SimConfig::new(30.0, PolicySpec::myopic()).always_accept();
        let r = run(&cfg, &c, &models(), &ConstantAcceptance(0.0)).unwrap();
        assert_eq!(r.transplants.len(), 1);
        assert!((r.total_life_years - 8.0).abs() < 2.0 / DAYS_PER_YEAR);
    }

    #[test]
    fn all_reject_discards_donor() {
        let patients = (1..=4).map(|i| patient(i, BloodType::O, 2.0, 0.0)).collect();
        let c = cohort(patients, vec![donor(1, BloodType::O, 1.0, false)]);
        let r = run(&SimConfig::new(30.0, PolicySpec::myopic()), &c, &models(), &ConstantAcceptance(0.0)).unwrap();
        assert_eq!(r.discarded_donors, 1);
        assert_eq!(r.offers_rejected, 4);
        assert_eq!(r.offers_made, 4);
    }

    #[test]
    fn cascade_replays_rng_trace() {
        // three candidates, benefit decreasing with id
        let patients = vec![
            patient(1, BloodType::O, 3.0, 0.0),
            patient(2, BloodType::O, 2.0, 0.0),
            patient(3, BloodType::O, 1.0, 0.0),
        ];
        let c = cohort(patients, vec![donor(1, BloodType::O, 1.0, false)]);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let expected = (1..=3u64).find(|_| rng.random::<f64>() < 0.5);
            let cfg = SimConfig { seed, ..SimConfig::new(30.0, PolicySpec::myopic()) };
            let r = run(&cfg, &c, &models(), &ConstantAcceptance(0.5)).unwrap();
            assert_eq!(r.transplants.first().map(|t| t.patient_id.0), expected, "seed {seed}");
        }
    }

    #[test]
    fn death_removes_patient_and_transplant_cancels_death() {
        let mut p1 = patient(1, BloodType::O, 2.0, 0.0);
        p1.death_time = Some(0.5);
        let mut p2 = patient(2, BloodType::O, 1.0, 0.0);
        p2.death_time = Some(5.0);
        let c = cohort(vec![p1, p2], vec![donor(1, BloodType::O, 1.0, false)]);
        let cfg = SimConfig::new(30.0, PolicySpec::myopic()).always_accept();
        let r = run(&cfg, &c, &models(), &ConstantAcceptance(1.0)).unwrap();
        assert_eq!(r.waitlist_deaths, 1);
        assert_eq!(r.transplants[0].patient_id, PatientId(2));
    }

    #[test]
    fn event_beyond_horizon_is_rejected() {
        let c = cohort(vec![], vec![donor(1, BloodType::O, 31.0, false)]);
        let err = run(&SimConfig::new(30.0, PolicySpec::myopic()), &c, &models(), &ConstantAcceptance(1.0));
        assert!(matches!(err, Err(SimError::EventOutOfRange { .. })));
    }

    #[test]
    fn model_dimension_mismatch() {
        let c = Cohort { schema: CohortSchema { waitlist_dim: 2, ..schema() }, ..cohort(vec![], vec![]) };
        let err = run(&SimConfig::new(30.0, PolicySpec::myopic()), &c, &models(), &ConstantAcceptance(1.0));
        assert!(matches!(err, Err(SimError::SchemaMismatch(_))));
    }

    #[test]
    fn batching_requires_myopic() {
        let cfg = SimConfig { batch_size: 3, ..SimConfig::new(30.0, PolicySpec::status_quo()) };
        assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn batch_beats_sequential_on_crafted_instance() {
        // O donor first, then A donor. Patient 1 (A) has the larger benefit
        // from either donor; patient 2 (O) can only take the O donor.
        let patients = vec![patient(1, BloodType::A, 3.0, 0.0), patient(2, BloodType::O, 2.0, 0.0)];
        let donors = vec![donor(1, BloodType::O, 1.0, true), donor(2, BloodType::A, 1.5, true)];
        let c = cohort(patients, donors);
        let seq_cfg = SimConfig::new(30.0, PolicySpec::myopic()).always_accept();
        let seq = run(&seq_cfg, &c, &models(), &ConstantAcceptance(1.0)).unwrap();
        let batch_cfg = SimConfig { batch_size: 2, ..seq_cfg };
        let batch = run(&batch_cfg, &c, &models(), &ConstantAcceptance(1.0)).unwrap();
        assert_eq!(seq.transplants.len(), 1);
        assert_eq!(batch.transplants.len(), 2);
        assert!(batch.total_life_years > seq.total_life_years);
    }

    #[test]
    fn batch_deadline_flushes_partial_batch() {
        let patients = vec![patient(1, BloodType::O, 2.0, 0.0)];
        let c = cohort(patients, vec![donor(1, BloodType::O, 1.0, true)]);
        let cfg = SimConfig { batch_size: 5, ..SimConfig::new(30.0, PolicySpec::myopic()).always_accept() };
        let r = run(&cfg, &c, &models(), &ConstantAcceptance(1.0)).unwrap();
        assert_eq!(r.transplants.len(), 1);
        assert!((r.transplants[0].time_days - 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_is_exact_sum_of_records() {
        let patients = (1..=20).map(|i| patient(i, BloodType::O, i as f64 / 5.0, -(i as f64))).collect();
        let donors = (1..=8).map(|i| donor(i, BloodType::O, i as f64, i % 2 == 0)).collect();
        let c = cohort(patients, donors);
        let cfg = SimConfig { batch_size: 3, seed: 4, ..SimConfig::new(30.0, PolicySpec::myopic()) };
        let r = run(&cfg, &c, &models(), &ConstantAcceptance(0.6)).unwrap();
        let mut sum = 0.0;
        for t in &r.transplants {
            sum += t.delta_years;
        }
        assert_eq!(r.total_life_years, sum);
        let mut ids: Vec<_> = r.transplants.iter().map(|t| t.patient_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), r.transplants.len());
        assert!(r.transplants.len() <= r.donors_arrived);
    }

    #[test]
    fn replication_statistics() {
        let patients = (1..=10).map(|i| patient(i, BloodType::O, i as f64 / 5.0, 0.0)).collect();
        let donors = (1..=5).map(|i| donor(i, BloodType::O, i as f64, false)).collect();
        let c = cohort(patients, donors);
        let cfg = SimConfig { replications: 10, seed: 100, ..SimConfig::new(30.0, PolicySpec::myopic()) };
        let rep = replicate(&cfg, &c, &models(), &ConstantAcceptance(0.4)).unwrap();
        let totals: Vec<f64> = (0..10)
            .map(|i| {
                let single = SimConfig { seed: 100 + i, replications: 1, ..cfg.clone() };
                run(&single, &c, &models(), &ConstantAcceptance(0.4)).unwrap().total_life_years
            })
            .collect();
        assert_eq!(rep.runs.iter().map(|r| r.total_life_years).collect::<Vec<_>>(), totals);
        let mean = totals.iter().sum::<f64>() / 10.0;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((rep.summary.mean - mean).abs() < 1e-12);
        assert!((rep.summary.std - var.sqrt()).abs() < 1e-12);

        let det = replicate(&cfg.clone().always_accept(), &c, &models(), &ConstantAcceptance(0.4)).unwrap();
        assert_eq!(det.summary.std, 0.0);
        let one = replicate(&SimConfig { replications: 1, ..cfg }, &c, &models(), &ConstantAcceptance(0.4)).unwrap();
        assert_eq!(one.summary.std, 0.0);
        assert_eq!(one.summary.mean, one.runs[0].total_life_years);
    }

    #[test]
    fn transplant_csv_has_one_row_per_transplant() {
        let c = cohort(vec![patient(1, BloodType::O, 2.0, 0.0)], vec![donor(7, BloodType::O, 1.0, false)]);
        let cfg = SimConfig::new(30.0, PolicySpec::myopic()).always_accept();
        let r = run(&cfg, &c, &models(), &ConstantAcceptance(1.0)).unwrap();
        let mut buf = Vec::new();
        r.write_transplants_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "donor_id,patient_id,time_days,delta_years");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("7,1,1,"));
    }
}
