//! Actors of the allocation problem: patients, donors, ABO compatibility and
//! great-circle distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in nautical miles.
pub const EARTH_RADIUS_NM: f64 = 3440.065;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("unknown blood type `{0}`")]
    BloodType(String),
    #[error("status {0} outside 1..=6")]
    Status(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BloodType {
    O,
    A,
    B,
    AB,
}

impl BloodType {
    pub const ALL: [BloodType; 4] = [BloodType::O, BloodType::A, BloodType::B, BloodType::AB];

    /// Position in the (O, A, B, AB) ordering used by potential vectors.
    pub fn index(self) -> usize {
        match self {
            BloodType::O => 0,
            BloodType::A => 1,
            BloodType::B => 2,
            BloodType::AB => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BloodType::O => "O",
            BloodType::A => "A",
            BloodType::B => "B",
            BloodType::AB => "AB",
        }
    }
}

impl fmt::Display for BloodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BloodType {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "O" => Ok(BloodType::O),
            "A" => Ok(BloodType::A),
            "B" => Ok(BloodType::B),
            "AB" => Ok(BloodType::AB),
            other => Err(DomainError::BloodType(other.to_string())),
        }
    }
}

/// Two-grade ABO compatibility used by the tiered allocation rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BloodMatch {
    Primary,
    Secondary,
    Incompatible,
}

impl BloodMatch {
    pub fn is_compatible(self) -> bool {
        !matches!(self, BloodMatch::Incompatible)
    }
}

/// Compatibility of a donor heart with a recipient.
///
/// Type-O donors are primary for O and B recipients and secondary for everyone
/// else; A, B and AB donors are primary for recipients sharing their antigens
/// and incompatible otherwise.
pub fn blood_match(donor: BloodType, patient: BloodType) -> BloodMatch {
    use BloodType::*;
    match (donor, patient) {
        (O, O) | (O, B) => BloodMatch::Primary,
        (O, A) | (O, AB) => BloodMatch::Secondary,
        (A, A) | (A, AB) => BloodMatch::Primary,
        (B, B) | (B, AB) => BloodMatch::Primary,
        (AB, AB) => BloodMatch::Primary,
        _ => BloodMatch::Incompatible,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = DomainError;

    fn try_from(raw: RawGeoPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, DomainError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(DomainError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(DomainError::Longitude(lon));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Haversine great-circle distance in nautical miles.
pub fn distance_nm(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_NM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DonorId(pub u64);

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for DonorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Medical urgency class, 1 (most urgent) through 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Status(u8);

impl Status {
    pub fn new(value: u8) -> Result<Self, DomainError> {
        if (1..=6).contains(&value) {
            Ok(Status(value))
        } else {
            Err(DomainError::Status(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Status {
    type Error = DomainError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Status::new(value)
    }
}

impl From<Status> for u8 {
    fn from(s: Status) -> u8 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: PatientId,
    pub blood_type: BloodType,
    pub status: Status,
    /// Days on the simulation clock; negative for candidates listed before
    /// the simulated window opens.
    pub listing_time: f64,
    pub center: GeoPoint,
    pub waitlist_covariates: Vec<f64>,
    pub graft_covariates: Vec<f64>,
    /// Latent time of death without transplant. Never visible to policies.
    pub death_time: Option<f64>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Donor {
    pub id: DonorId,
    pub blood_type: BloodType,
    pub location: GeoPoint,
    pub arrival_time: f64,
    /// Brain-dead donor; only these can be held for batched allocation.
    pub is_dbd: bool,
    pub donor_covariates: Vec<f64>,
}

impl Donor {
    pub fn match_with(&self, patient: &Patient) -> BloodMatch {
        blood_match(self.blood_type, patient.blood_type)
    }

    pub fn distance_to(&self, patient: &Patient) -> f64 {
        distance_nm(self.location, patient.center)
    }
}
