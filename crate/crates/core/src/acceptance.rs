//! Offer acceptance: probability that a transplant center accepts a donor
//! offer for one of its candidates, and the `p^alpha` permissiveness knob.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Donor, Patient};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcceptanceError {
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("acceptance exponent {0} outside [0, 1]")]
    Exponent(f64),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("empty training set")]
    Empty,
}

pub type Result<T> = std::result::Result<T, AcceptanceError>;

/// Anything that can score a donor offer to a given candidate.
pub trait OfferPredictor: Send + Sync {
    fn acceptance_probability(&self, donor: &Donor, patient: &Patient) -> Result<f64>;
}

/// Offer-acceptance features: donor covariates, then the candidate's waitlist
/// covariates, then the distance in thousands of nautical miles.
pub fn acceptance_features(donor: &Donor, patient: &Patient) -> Vec<f64> {
    let mut x = Vec::with_capacity(donor.donor_covariates.len() + patient.waitlist_covariates.len() + 1);
    x.extend_from_slice(&donor.donor_covariates);
    x.extend_from_slice(&patient.waitlist_covariates);
    x.push(donor.distance_to(patient) / 1000.0);
    x
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic-linear acceptance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub schema_hash: String,
}

impl AcceptanceModel {
    pub fn new(intercept: f64, weights: Vec<f64>) -> Self {
        AcceptanceModel { intercept, weights, schema_hash: String::new() }
    }

    pub fn with_schema_hash(mut self, hash: impl Into<String>) -> Self {
        self.schema_hash = hash.into();
        self
    }

    /// Probability for a raw feature vector, kept strictly inside (0, 1).
    pub fn probability(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(AcceptanceError::DimensionMismatch {
                expected: self.weights.len(),
                actual: features.len(),
            });
        }
        let z = self.intercept + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
        Ok(logistic(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }
}

impl OfferPredictor for AcceptanceModel {
    fn acceptance_probability(&self, donor: &Donor, patient: &Patient) -> Result<f64> {
        self.probability(&acceptance_features(donor, patient))
    }
}

pub fn predict_acceptance(model: &AcceptanceModel, donor: &Donor, patient: &Patient) -> Result<f64> {
    model.acceptance_probability(donor, patient)
}

/// Same probability for every offer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAcceptance(pub f64);

impl OfferPredictor for ConstantAcceptance {
    fn acceptance_probability(&self, _: &Donor, _: &Patient) -> Result<f64> {
        if !(0.0..=1.0).contains(&self.0) {
            return Err(AcceptanceError::Probability(self.0));
        }
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptancePolicyConfig {
    /// Offers are accepted with probability `p^exponent_alpha`.
    pub exponent_alpha: f64,
    /// Skip acceptance draws entirely; the first eligible candidate transplants.
    pub always_accept: bool,
}

impl Default for AcceptancePolicyConfig {
    fn default() -> Self {
        AcceptancePolicyConfig { exponent_alpha: 1.0, always_accept: false }
    }
}

impl AcceptancePolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.exponent_alpha) {
            return Err(AcceptanceError::Exponent(self.exponent_alpha));
        }
        Ok(())
    }
}

/// `p^alpha`, with `p^0 = 1` for every `p` including zero.
pub fn adjusted_probability(p: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(AcceptanceError::Probability(p));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AcceptanceError::Exponent(alpha));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    Ok(p.powf(alpha))
}

/// L2-penalized logistic regression by fixed-step gradient ascent.
///
/// The step is the reciprocal of a Lipschitz bound on the gradient of the
/// mean log-likelihood, so iterates ascend monotonically. The intercept is not
/// penalized. Stops early once the gradient sup-norm falls below 1e-9.
pub fn fit_logistic(features: &[Vec<f64>], labels: &[bool], l2_penalty: f64, iters: usize) -> Result<AcceptanceModel> {
    if features.len() != labels.len() {
        return Err(AcceptanceError::LengthMismatch { features: features.len(), labels: labels.len() });
    }
    let Some(first) = features.first() else {
        return Err(AcceptanceError::Empty);
    };
    let d = first.len();
    if let Some(bad) = features.iter().find(|x| x.len() != d) {
        return Err(AcceptanceError::DimensionMismatch { expected: d, actual: bad.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(AcceptanceError::SingleClass);
    }

    let n = features.len() as f64;
    let mean_sq_norm = features.iter().map(|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
    let step = 1.0 / (0.25 * mean_sq_norm + l2_penalty.max(0.0));

    let mut w = vec![0.0; d + 1]; // w[0] is the intercept
    let mut grad = vec![0.0; d + 1];
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (x, &y) in features.iter().zip(labels) {
            let z = w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let resid = if y { 1.0 } else { 0.0 } - logistic(z);
            grad[0] += resid;
            for (g, v) in grad[1..].iter_mut().zip(x) {
                *g += resid * v;
            }
        }
        grad[0] /= n;
        for j in 1..=d {
            grad[j] = grad[j] / n - l2_penalty * w[j];
        }
        if grad.iter().all(|g| g.abs() < 1e-9) {
            break;
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj += step * g;
        }
    }
    Ok(AcceptanceModel::new(w[0], w[1..].to_vec()))
}

/// Area under the ROC curve via the Mann-Whitney rank statistic; tied scores
/// contribute one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(AcceptanceError::LengthMismatch { features: scores.len(), labels: labels.len() });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(AcceptanceError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie block
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}
