//! Allocation policies.
//!
//! Each policy maps the current waitlist and an arriving donor to a full
//! priority ordering of blood-compatible candidates. The offer cascade walks
//! that ordering, skipping candidates flagged as not eligible to transplant.
//!
//! Ties on the primary key are broken by earliest listing time, then by
//! patient id, so every ordering is a deterministic function of its inputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BloodMatch, BloodType, Donor, Patient, PatientId, Status};
use crate::survival::{graft_surv, waitlist_surv, CoxModel, SurvivalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error("invalid policy: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Graft and waitlist survival models shared by every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModels {
    pub graft: CoxModel,
    pub waitlist: CoxModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    StatusQuo,
    Myopic,
    Potential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Status quo only: order within a tier by benefit instead of waiting time.
    #[serde(default)]
    pub delta_tiebreak: bool,
    /// Status quo only: never transplant a pair with negative benefit.
    #[serde(default)]
    pub delta_exclude: bool,
    /// Multiplier `W >= 1` on waitlist survival in the benefit.
    #[serde(default = "default_urgency_weight")]
    pub urgency_weight: f64,
    /// Myopic and potential only; `None` means unbounded. The status quo
    /// applies its own distance zones.
    #[serde(default)]
    pub max_distance_nm: Option<f64>,
    /// Blood-type potentials in years, ordered (O, A, B, AB).
    #[serde(default)]
    pub potential_theta: [f64; 4],
}

fn default_urgency_weight() -> f64 {
    1.0
}

impl PolicySpec {
    fn base(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            delta_tiebreak: false,
            delta_exclude: false,
            urgency_weight: 1.0,
            max_distance_nm: None,
            potential_theta: [0.0; 4],
        }
    }

    pub fn status_quo() -> Self {
        PolicySpec::base(PolicyKind::StatusQuo)
    }

    pub fn myopic() -> Self {
        PolicySpec::base(PolicyKind::Myopic)
    }

    pub fn potential(theta: [f64; 4]) -> Self {
        PolicySpec { potential_theta: theta, ..PolicySpec::base(PolicyKind::Potential) }
    }

    pub fn with_max_distance(mut self, nm: f64) -> Self {
        self.max_distance_nm = Some(nm);
        self
    }

    pub fn with_delta_tiebreak(mut self) -> Self {
        self.delta_tiebreak = true;
        self
    }

    pub fn with_delta_exclude(mut self) -> Self {
        self.delta_exclude = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.urgency_weight >= 1.0) || !self.urgency_weight.is_finite() {
            return Err(PolicyError::InvalidSpec(format!(
                "urgency_weight must be a finite value >= 1, got {}",
                self.urgency_weight
            )));
        }
        if let Some(d) = self.max_distance_nm {
            if !(d > 0.0) {
                return Err(PolicyError::InvalidSpec(format!("max_distance_nm must be positive, got {d}")));
            }
        }
        if self.potential_theta.iter().any(|t| !t.is_finite()) {
            return Err(PolicyError::InvalidSpec("potential_theta must be finite".into()));
        }
        if self.kind != PolicyKind::StatusQuo && (self.delta_tiebreak || self.delta_exclude) {
            return Err(PolicyError::InvalidSpec(
                "delta_tiebreak and delta_exclude apply to the status quo policy only".into(),
            ));
        }
        if self.kind != PolicyKind::Potential && self.potential_theta != [0.0; 4] {
            return Err(PolicyError::InvalidSpec("potential_theta applies to the potential policy only".into()));
        }
        Ok(())
    }

    fn within_distance(&self, nm: f64) -> bool {
        self.max_distance_nm.is_none_or(|max| nm <= max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub patient_id: PatientId,
    /// Status-quo tier, 1 (highest priority) to 68.
    pub tier: Option<u8>,
    /// Estimated life-years gained by the transplant.
    pub delta_years: f64,
    /// Sort key: benefit for myopic, benefit plus potential for the potential
    /// policy, and for the status quo the within-tier key (benefit under
    /// benefit tie-breaking, otherwise listing time).
    pub score: f64,
    pub eligible_to_transplant: bool,
}

/// Life-years gained by giving `donor` to `patient`: graft survival minus
/// `urgency_weight` times waitlist survival.
pub fn delta(donor: &Donor, patient: &Patient, models: &SurvivalModels, urgency_weight: f64) -> Result<f64> {
    let graft = graft_surv(&models.graft, donor, patient)?;
    let waitlist = waitlist_surv(&models.waitlist, patient)?;
    Ok(graft - urgency_weight * waitlist)
}

/// Upper distance bound of a status-quo zone, `None` for unrestricted.
type Zone = Option<f64>;

const ANY: Zone = None;
const NM250: Zone = Some(250.0);
const NM500: Zone = Some(500.0);
const NM1000: Zone = Some(1000.0);
const NM1500: Zone = Some(1500.0);
const NM2500: Zone = Some(2500.0);

use BloodMatch::{Primary as P, Secondary as S};

/// The 68 status-quo tiers in priority order: (status, blood match, zone).
const TIERS: [(u8, BloodMatch, Zone); 68] = [
    (1, P, NM500), (1, S, NM500), (2, P, NM500), (2, S, NM500),
    (3, P, NM250), (3, S, NM250), (1, P, NM1000), (1, S, NM1000),
    (2, P, NM1000), (2, S, NM1000), (4, P, NM250), (4, S, NM250),
    (3, P, NM500), (3, S, NM500), (5, P, NM250), (5, S, NM250),
    (3, P, NM1000), (3, S, NM1000), (6, P, NM250), (6, S, NM250),
    (1, P, NM1500), (1, S, NM1500), (2, P, NM1500), (2, S, NM1500),
    (3, P, NM1500), (3, S, NM1500), (4, P, NM500), (4, S, NM500),
    (5, P, NM500), (5, S, NM500), (6, P, NM500), (6, S, NM500),
    (1, P, NM2500), (1, S, NM2500), (2, P, NM2500), (2, S, NM2500),
    (3, P, NM2500), (3, S, NM2500), (4, P, NM1000), (4, S, NM1000),
    (5, P, NM1000), (5, S, NM1000), (6, P, NM1000), (6, S, NM1000),
    (1, P, ANY), (1, S, ANY), (2, P, ANY), (2, S, ANY),
    (3, P, ANY), (3, S, ANY), (4, P, NM1500), (4, S, NM1500),
    (5, P, NM1500), (5, S, NM1500), (6, P, NM1500), (6, S, NM1500),
    (4, P, NM2500), (4, S, NM2500), (5, P, NM2500), (5, S, NM2500),
    (6, P, NM2500), (6, S, NM2500), (4, P, ANY), (4, S, ANY),
    (5, P, ANY), (5, S, ANY), (6, P, ANY), (6, S, ANY),
];

/// Highest-priority tier admitting the (status, blood match, distance)
/// combination; zone bounds are inclusive.
pub fn tier_lookup(status: Status, blood: BloodMatch, distance_nm: f64) -> Option<u8> {
    if !blood.is_compatible() {
        return None;
    }
    TIERS
        .iter()
        .position(|&(s, m, zone)| s == status.get() && m == blood && zone.is_none_or(|max| distance_nm <= max))
        .map(|i| (i + 1) as u8)
}

fn by_listing_then_id(a: &Patient, b: &Patient) -> Ordering {
    a.listing_time.total_cmp(&b.listing_time).then(a.id.cmp(&b.id))
}

struct Scored<'a> {
    patient: &'a Patient,
    candidate: RankedCandidate,
}

fn finish(mut scored: Vec<Scored<'_>>, primary: impl Fn(&RankedCandidate, &RankedCandidate) -> Ordering) -> Vec<RankedCandidate> {
    scored.sort_by(|a, b| primary(&a.candidate, &b.candidate).then_with(|| by_listing_then_id(a.patient, b.patient)));
    scored.into_iter().map(|s| s.candidate).collect()
}

/// Tiered status-quo ordering: ascending tier, then waiting time (earliest
/// listing first) or benefit under `delta_tiebreak`.
pub fn status_quo_order(
    waitlist: &[&Patient],
    donor: &Donor,
    models: &SurvivalModels,
    spec: &PolicySpec,
) -> Result<Vec<RankedCandidate>> {
    expect_kind(spec, PolicyKind::StatusQuo)?;
    let mut scored = Vec::with_capacity(waitlist.len());
    for &patient in waitlist {
        let Some(tier) = tier_lookup(patient.status, donor.match_with(patient), donor.distance_to(patient)) else {
            continue;
        };
        let delta_years = delta(donor, patient, models, spec.urgency_weight)?;
        scored.push(Scored {
            patient,
            candidate: RankedCandidate {
                patient_id: patient.id,
                tier: Some(tier),
                delta_years,
                score: if spec.delta_tiebreak { delta_years } else { patient.listing_time },
                eligible_to_transplant: !(spec.delta_exclude && delta_years < 0.0),
            },
        });
    }
    let tiebreak = spec.delta_tiebreak;
    Ok(finish(scored, |a, b| {
        let by_tier = a.tier.cmp(&b.tier);
        if tiebreak {
            by_tier.then(b.delta_years.total_cmp(&a.delta_years))
        } else {
            by_tier
        }
    }))
}

fn scored_by_benefit<'a>(
    waitlist: &[&'a Patient],
    donor: &Donor,
    models: &SurvivalModels,
    spec: &PolicySpec,
    potential: impl Fn(BloodType) -> f64,
) -> Result<Vec<Scored<'a>>> {
    let mut scored = Vec::with_capacity(waitlist.len());
    for &patient in waitlist {
        if !donor.match_with(patient).is_compatible() || !spec.within_distance(donor.distance_to(patient)) {
            continue;
        }
        let delta_years = delta(donor, patient, models, spec.urgency_weight)?;
        scored.push(Scored {
            patient,
            candidate: RankedCandidate {
                patient_id: patient.id,
                tier: None,
                delta_years,
                score: delta_years + potential(patient.blood_type),
                eligible_to_transplant: delta_years > 0.0,
            },
        });
    }
    Ok(scored)
}

/// Candidates within range, by decreasing benefit; only positive benefit is
/// transplant-eligible.
pub fn myopic_order(
    waitlist: &[&Patient],
    donor: &Donor,
    models: &SurvivalModels,
    spec: &PolicySpec,
) -> Result<Vec<RankedCandidate>> {
    expect_kind(spec, PolicyKind::Myopic)?;
    let scored = scored_by_benefit(waitlist, donor, models, spec, |_| 0.0)?;
    Ok(finish(scored, |a, b| b.score.total_cmp(&a.score)))
}

/// Like [`myopic_order`] but sorted by benefit plus the candidate's blood-type
/// potential. Eligibility still requires positive benefit.
pub fn potential_order(
    waitlist: &[&Patient],
    donor: &Donor,
    models: &SurvivalModels,
    spec: &PolicySpec,
) -> Result<Vec<RankedCandidate>> {
    expect_kind(spec, PolicyKind::Potential)?;
    let theta = spec.potential_theta;
    let scored = scored_by_benefit(waitlist, donor, models, spec, |bt| theta[bt.index()])?;
    Ok(finish(scored, |a, b| b.score.total_cmp(&a.score)))
}

/// Dispatches on `spec.kind`.
pub fn rank_candidates(
    waitlist: &[&Patient],
    donor: &Donor,
    models: &SurvivalModels,
    spec: &PolicySpec,
) -> Result<Vec<RankedCandidate>> {
    match spec.kind {
        PolicyKind::StatusQuo => status_quo_order(waitlist, donor, models, spec),
        PolicyKind::Myopic => myopic_order(waitlist, donor, models, spec),
        PolicyKind::Potential => potential_order(waitlist, donor, models, spec),
    }
}

fn expect_kind(spec: &PolicySpec, kind: PolicyKind) -> Result<()> {
    if spec.kind != kind {
        return Err(PolicyError::InvalidSpec(format!("expected a {kind:?} policy, got {:?}", spec.kind)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DonorId, GeoPoint};
    use crate::survival::DAYS_PER_YEAR;

    fn status(s: u8) -> Status {
        Status::new(s).unwrap()
    }

    /// Graft survival constant at `graft_years`; waitlist median set by the
    /// patient's single waitlist covariate `x` as `base_years * 2^-x`.
    fn models(graft_years: f64) -> SurvivalModels {
        let step = 1.0;
        let horizon = 100.0 * DAYS_PER_YEAR;
        let graft_rate = 2f64.ln() / (graft_years * DAYS_PER_YEAR);
        // waitlist baseline median 8 years at x = 0
        let wl_rate = 2f64.ln() / (8.0 * DAYS_PER_YEAR);
        SurvivalModels {
            graft: CoxModel::exponential(vec![0.0, 0.0], graft_rate, step, horizon).unwrap(),
            waitlist: CoxModel::exponential(vec![2f64.ln()], wl_rate, step, horizon).unwrap(),
        }
    }

    fn patient(id: u64, bt: BloodType, st: u8, listed: f64, x: f64, at: GeoPoint) -> Patient {
        Patient {
            id: PatientId(id),
            blood_type: bt,
            status: status(st),
            listing_time: listed,
            center: at,
            waitlist_covariates: vec![x],
            graft_covariates: vec![],
            death_time: None,
            active: true,
        }
    }

    fn donor(bt: BloodType, at: GeoPoint) -> Donor {
        Donor {
            id: DonorId(1),
            blood_type: bt,
            location: at,
            arrival_time: 0.0,
            is_dbd: true,
            donor_covariates: vec![0.0],
        }
    }

    fn origin() -> GeoPoint {
        GeoPoint::new(0.0, 0.0).unwrap()
    }

    /// Point due north of the origin at the given distance.
    fn north(nm: f64) -> GeoPoint {
        GeoPoint::new((nm / crate::domain::EARTH_RADIUS_NM).to_degrees(), 0.0).unwrap()
    }

    #[test]
    fn tier_examples() {
        assert_eq!(tier_lookup(status(1), P, 400.0), Some(1));
        assert_eq!(tier_lookup(status(3), S, 200.0), Some(6));
        assert_eq!(tier_lookup(status(2), P, 600.0), Some(9));
        assert_eq!(tier_lookup(status(6), S, 3000.0), Some(68));
        assert_eq!(tier_lookup(status(1), BloodMatch::Incompatible, 10.0), None);
    }

    #[test]
    fn delta_arithmetic() {
        // graft 10y; waitlist 8 * 2^-1 = 4y
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        let p = patient(1, BloodType::O, 1, 0.0, 1.0, origin());
        let one = delta(&d, &p, &m, 1.0).unwrap();
        let two = delta(&d, &p, &m, 2.0).unwrap();
        // medians are resolved on a 1-day grid
        assert!((one - 6.0).abs() < 2.0 / DAYS_PER_YEAR, "{one}");
        assert!((two - 2.0).abs() < 3.0 / DAYS_PER_YEAR, "{two}");
        let even = patient(2, BloodType::O, 1, 0.0, -(10f64 / 8.0).log2(), origin());
        assert!(delta(&d, &even, &m, 1.0).unwrap().abs() < 2.0 / DAYS_PER_YEAR);
    }

    #[test]
    fn status_quo_orders_by_tier_then_listing() {
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        let near_s1 = patient(1, BloodType::O, 1, 50.0, 0.0, north(100.0));
        let far_s2 = patient(2, BloodType::O, 2, 10.0, 0.0, north(700.0));
        let order = status_quo_order(&[&far_s2, &near_s1], &d, &m, &PolicySpec::status_quo()).unwrap();
        assert_eq!(order[0].patient_id, PatientId(1));
        assert_eq!(order[0].tier, Some(1));
        assert_eq!(order[1].tier, Some(9));

        let early = patient(3, BloodType::O, 4, 100.0, 0.0, north(100.0));
        let late = patient(4, BloodType::O, 4, 200.0, 0.0, north(100.0));
        let order = status_quo_order(&[&late, &early], &d, &m, &PolicySpec::status_quo()).unwrap();
        assert_eq!(order.iter().map(|c| c.patient_id.0).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn status_quo_delta_variants() {
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        // waitlist medians: x=-1 -> 16y (delta -6), x=1 -> 4y (delta 6)
        let healthy_early = patient(1, BloodType::O, 2, 0.0, -1.0, north(10.0));
        let sick_late = patient(2, BloodType::O, 2, 30.0, 1.0, north(10.0));
        let list = [&healthy_early, &sick_late];

        let plain = status_quo_order(&list, &d, &m, &PolicySpec::status_quo()).unwrap();
        assert_eq!(plain[0].patient_id, PatientId(1));
        assert!(plain.iter().all(|c| c.eligible_to_transplant));

        let tiebreak = status_quo_order(&list, &d, &m, &PolicySpec::status_quo().with_delta_tiebreak()).unwrap();
        assert_eq!(tiebreak[0].patient_id, PatientId(2));

        let exclude = status_quo_order(&list, &d, &m, &PolicySpec::status_quo().with_delta_exclude()).unwrap();
        assert_eq!(exclude[0].patient_id, PatientId(1));
        assert!(!exclude[0].eligible_to_transplant);
        assert!(exclude[1].eligible_to_transplant);
    }

    #[test]
    fn myopic_sorts_and_thresholds() {
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        // waitlist 7y -> delta 3; 2.5y -> delta 7.5; 11y -> delta -1
        let xs = [-(7f64 / 8.0).log2(), -(2.5f64 / 8.0).log2(), -(11f64 / 8.0).log2()];
        let ps: Vec<Patient> = xs.iter().enumerate().map(|(i, &x)| patient(i as u64, BloodType::O, 1, 0.0, x, origin())).collect();
        let refs: Vec<&Patient> = ps.iter().collect();
        let order = myopic_order(&refs, &d, &m, &PolicySpec::myopic()).unwrap();
        let ids: Vec<u64> = order.iter().map(|c| c.patient_id.0).collect();
        assert_eq!(ids, vec![1, 0, 2]);
        assert_eq!(order.iter().map(|c| c.eligible_to_transplant).collect::<Vec<_>>(), vec![true, true, false]);
        assert!((order[0].delta_years - 7.5).abs() < 0.01);
    }

    #[test]
    fn myopic_respects_distance_and_blood() {
        let m = models(10.0);
        let d = donor(BloodType::A, origin());
        let far = patient(1, BloodType::A, 1, 0.0, 1.0, north(1500.0));
        let incompatible = patient(2, BloodType::O, 1, 0.0, 1.0, origin());
        let spec = PolicySpec::myopic().with_max_distance(1000.0);
        assert!(myopic_order(&[&far, &incompatible], &d, &m, &spec).unwrap().is_empty());
    }

    #[test]
    fn equal_benefit_breaks_on_listing_then_id() {
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        let a = patient(7, BloodType::O, 1, 5.0, 1.0, origin());
        let b = patient(3, BloodType::O, 1, 5.0, 1.0, origin());
        let c = patient(9, BloodType::O, 1, 1.0, 1.0, origin());
        let order = myopic_order(&[&a, &b, &c], &d, &m, &PolicySpec::myopic()).unwrap();
        assert_eq!(order.iter().map(|c| c.patient_id.0).collect::<Vec<_>>(), vec![9, 3, 7]);
    }

    #[test]
    fn potential_examples() {
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        // type O with delta ~5 (waitlist 5y), type AB with delta ~5.5 (waitlist 4.5y)
        let o = patient(1, BloodType::O, 1, 0.0, -(5f64 / 8.0).log2(), origin());
        let ab = patient(2, BloodType::AB, 1, 0.0, -(4.5f64 / 8.0).log2(), origin());
        let list = [&o, &ab];
        let zero = potential_order(&list, &d, &m, &PolicySpec::potential([0.0; 4])).unwrap();
        assert_eq!(zero[0].patient_id, PatientId(2));
        let order = potential_order(&list, &d, &m, &PolicySpec::potential([1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(order[0].patient_id, PatientId(1));
        assert!((order[0].score - 6.0).abs() < 0.01);
        let shifted = potential_order(&list, &d, &m, &PolicySpec::potential([3.5, 2.5, 2.5, 2.5])).unwrap();
        assert_eq!(
            shifted.iter().map(|c| c.patient_id).collect::<Vec<_>>(),
            order.iter().map(|c| c.patient_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn spec_validation() {
        assert!(PolicySpec::myopic().validate().is_ok());
        assert!(PolicySpec { urgency_weight: 0.5, ..PolicySpec::myopic() }.validate().is_err());
        assert!(PolicySpec::myopic().with_max_distance(0.0).validate().is_err());
        assert!(PolicySpec::myopic().with_delta_exclude().validate().is_err());
        assert!(PolicySpec::potential([f64::NAN, 0.0, 0.0, 0.0]).validate().is_err());
        let parsed: PolicySpec = serde_json::from_str(r#"{"kind":"status_quo","delta_exclude":true}"#).unwrap();
        assert!(parsed.delta_exclude && parsed.urgency_weight == 1.0);
        assert!(serde_json::from_str::<PolicySpec>(r#"{"kind":"myopic","bogus":1}"#).is_err());
    }

    #[test]
    fn wrong_kind_rejected() {
        let m = models(10.0);
        let d = donor(BloodType::O, origin());
        assert!(myopic_order(&[], &d, &m, &PolicySpec::status_quo()).is_err());
    }
}
