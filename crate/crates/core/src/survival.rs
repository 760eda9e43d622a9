//! Cox proportional-hazards models.
//!
//! Fitting maximizes the ridge-penalized partial log-likelihood with Breslow
//! handling of tied event times, using damped Newton iterations on internally
//! standardized covariates. The cumulative baseline hazard is the Breslow
//! estimator at the fitted coefficients and is stored as a right-continuous
//! step function, so that
//!
//! ```text
//! S(t | x) = exp(-exp(theta' x) * H0(t))
//! ```
//!
//! Graft and waitlist survival are the medians of this curve, in years.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Donor, Patient};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Gradient sup-norm at which Newton iterations stop regardless of the
/// objective change.
const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_STEP_HALVINGS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("no observed events; every sample is censored")]
    NoEvents,
    #[error("Newton system is singular (degenerate or collinear covariates)")]
    SingularHessian,
    #[error("Newton iterations did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("covariate dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("model has an empty baseline hazard")]
    EmptyBaseline,
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("invalid fit options: {0}")]
    InvalidOptions(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("scores ({scores}) and samples ({samples}) differ in length")]
    LengthMismatch { scores: usize, samples: usize },
    #[error("dataset admits no comparable pairs")]
    NoComparablePairs,
}

pub type Result<T> = std::result::Result<T, SurvivalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    /// Observed time in days.
    pub time: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl SurvivalSample {
    pub fn new(time: f64, event: bool, covariates: Vec<f64>) -> Self {
        SurvivalSample { time, event, covariates }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub ridge_penalty: f64,
    pub max_newton_iters: usize,
    /// Relative change of the penalized log-likelihood that counts as converged.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { ridge_penalty: 0.1, max_newton_iters: 100, tolerance: 1e-8 }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.ridge_penalty >= 0.0) || !self.ridge_penalty.is_finite() {
            return Err(SurvivalError::InvalidOptions(format!(
                "ridge_penalty must be a non-negative finite number, got {}",
                self.ridge_penalty
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(SurvivalError::InvalidOptions(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Fitted Cox model: coefficients plus a step-function cumulative baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoxModelDoc", into = "CoxModelDoc")]
pub struct CoxModel {
    coefficients: Vec<f64>,
    baseline_times: Vec<f64>,
    baseline_cumhaz: Vec<f64>,
    covariate_dim: usize,
    schema_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoxModelDoc {
    coefficients: Vec<f64>,
    baseline_times: Vec<f64>,
    baseline_cumhaz: Vec<f64>,
    covariate_dim: usize,
    #[serde(default)]
    schema_hash: String,
}

impl TryFrom<CoxModelDoc> for CoxModel {
    type Error = SurvivalError;

    fn try_from(doc: CoxModelDoc) -> Result<Self> {
        if doc.covariate_dim != doc.coefficients.len() {
            return Err(SurvivalError::InvalidModel(format!(
                "covariate_dim {} but {} coefficients",
                doc.covariate_dim,
                doc.coefficients.len()
            )));
        }
        let model = CoxModel::new(doc.coefficients, doc.baseline_times, doc.baseline_cumhaz)?;
        Ok(model.with_schema_hash(doc.schema_hash))
    }
}

impl From<CoxModel> for CoxModelDoc {
    fn from(m: CoxModel) -> Self {
        CoxModelDoc {
            coefficients: m.coefficients,
            baseline_times: m.baseline_times,
            baseline_cumhaz: m.baseline_cumhaz,
            covariate_dim: m.covariate_dim,
            schema_hash: m.schema_hash,
        }
    }
}

impl CoxModel {
    pub fn new(
        coefficients: Vec<f64>,
        baseline_times: Vec<f64>,
        baseline_cumhaz: Vec<f64>,
    ) -> Result<Self> {
        if baseline_times.len() != baseline_cumhaz.len() {
            return Err(SurvivalError::InvalidModel(format!(
                "{} baseline times but {} cumulative hazard values",
                baseline_times.len(),
                baseline_cumhaz.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(SurvivalError::InvalidModel("non-finite coefficient".into()));
        }
        if baseline_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SurvivalError::InvalidModel(
                "baseline times must be strictly increasing".into(),
            ));
        }
        if baseline_cumhaz.first().is_some_and(|&h| !(h >= 0.0))
            || baseline_cumhaz.windows(2).any(|w| !(w[0] <= w[1]))
            || baseline_cumhaz.iter().any(|h| !h.is_finite())
        {
            return Err(SurvivalError::InvalidModel(
                "cumulative baseline hazard must be finite, non-negative and non-decreasing".into(),
            ));
        }
        Ok(CoxModel {
            covariate_dim: coefficients.len(),
            coefficients,
            baseline_times,
            baseline_cumhaz,
            schema_hash: String::new(),
        })
    }

    /// Model whose baseline is `H0(t) = rate * t` sampled on a regular grid
    /// `step, 2 step, ...` up to `horizon` days.
    pub fn exponential(coefficients: Vec<f64>, rate: f64, step: f64, horizon: f64) -> Result<Self> {
        if !(rate > 0.0) || !(step > 0.0) || !(horizon >= step) {
            return Err(SurvivalError::InvalidModel(format!(
                "exponential baseline needs rate > 0 and 0 < step <= horizon (rate {rate}, step {step}, horizon {horizon})"
            )));
        }
        let n = (horizon / step).floor() as usize;
        let times: Vec<f64> = (1..=n).map(|k| k as f64 * step).collect();
        let cumhaz = times.iter().map(|t| rate * t).collect();
        CoxModel::new(coefficients, times, cumhaz)
    }

    pub fn with_schema_hash(mut self, hash: impl Into<String>) -> Self {
        self.schema_hash = hash.into();
        self
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn baseline_times(&self) -> &[f64] {
        &self.baseline_times
    }

    pub fn baseline_cumhaz(&self) -> &[f64] {
        &self.baseline_cumhaz
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn schema_hash(&self) -> &str {
        &self.schema_hash
    }

    /// Linear predictor `theta' x`.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.covariate_dim, x.len())?;
        Ok(dot(&self.coefficients, x))
    }

    /// Right-continuous lookup of the cumulative baseline hazard.
    pub fn cumulative_baseline(&self, t: f64) -> f64 {
        let idx = self.baseline_times.partition_point(|&bt| bt <= t);
        if idx == 0 {
            0.0
        } else {
            self.baseline_cumhaz[idx - 1]
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("CoxModel serializes")
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(SurvivalError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Samples grouped by distinct observed time, latest first, with covariates
/// already transformed to the working scale.
struct Design {
    dim: usize,
    rows: Vec<Vec<f64>>,
    /// Indices into `rows` sorted by decreasing time.
    order: Vec<usize>,
    times: Vec<f64>,
    events: Vec<bool>,
}

impl Design {
    fn new(data: &[SurvivalSample], center: &[f64], scale: &[f64]) -> Self {
        let dim = center.len();
        let rows = data
            .iter()
            .map(|s| {
                s.covariates
                    .iter()
                    .zip(center.iter().zip(scale))
                    .map(|(x, (m, sd))| (x - m) / sd)
                    .collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| data[b].time.total_cmp(&data[a].time).then(a.cmp(&b)));
        Design {
            dim,
            rows,
            order,
            times: data.iter().map(|s| s.time).collect(),
            events: data.iter().map(|s| s.event).collect(),
        }
    }

    /// Calls `f(time, events_at_time, risk_set)` for each distinct event time,
    /// latest first, where `risk_set` holds every index with time >= `time`.
    fn for_each_event_time(&self, mut f: impl FnMut(f64, &[usize], &[usize])) {
        let mut at_risk: Vec<usize> = Vec::with_capacity(self.order.len());
        let mut events: Vec<usize> = Vec::new();
        let mut pos = 0;
        while pos < self.order.len() {
            let t = self.times[self.order[pos]];
            events.clear();
            while pos < self.order.len() && self.times[self.order[pos]] == t {
                let i = self.order[pos];
                at_risk.push(i);
                if self.events[i] {
                    events.push(i);
                }
                pos += 1;
            }
            if !events.is_empty() {
                f(t, &events, &at_risk);
            }
        }
    }
}

struct Evaluation {
    value: f64,
    gradient: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

/// Penalized Breslow partial log-likelihood on the working scale.
/// `penalty_weights[j]` multiplies `beta_j^2` in the ridge term.
fn evaluate(
    design: &Design,
    beta: &DVector<f64>,
    ridge: f64,
    penalty_weights: &[f64],
    with_hessian: bool,
) -> Evaluation {
    let d = design.dim;
    let eta: Vec<f64> = design.rows.iter().map(|z| dot(beta.as_slice(), z)).collect();
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    let mut value = 0.0;
    let mut gradient = DVector::<f64>::zeros(d);
    let mut hessian = with_hessian.then(|| DMatrix::<f64>::zeros(d, d));

    // running risk-set sums, extended as the scan moves to earlier times
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d * d];
    let mut consumed = 0usize;

    design.for_each_event_time(|_, events, at_risk| {
        for &i in &at_risk[consumed..] {
            let wi = w[i];
            let z = &design.rows[i];
            s0 += wi;
            for a in 0..d {
                s1[a] += wi * z[a];
                if with_hessian {
                    for b in 0..d {
                        s2[a * d + b] += wi * z[a] * z[b];
                    }
                }
            }
        }
        consumed = at_risk.len();

        let n_events = events.len() as f64;
        value += events.iter().map(|&i| eta[i]).sum::<f64>() - n_events * (s0.ln() + shift);
        for a in 0..d {
            let mean_a = s1[a] / s0;
            gradient[a] += events.iter().map(|&i| design.rows[i][a]).sum::<f64>() - n_events * mean_a;
            if let Some(h) = hessian.as_mut() {
                for b in 0..d {
                    let mean_b = s1[b] / s0;
                    h[(a, b)] -= n_events * (s2[a * d + b] / s0 - mean_a * mean_b);
                }
            }
        }
    });

    for a in 0..d {
        let pw = ridge * penalty_weights[a];
        value -= 0.5 * pw * beta[a] * beta[a];
        gradient[a] -= pw * beta[a];
        if let Some(h) = hessian.as_mut() {
            h[(a, a)] -= pw;
        }
    }
    Evaluation { value, gradient, hessian }
}

fn validate_samples(data: &[SurvivalSample], dim: usize) -> Result<()> {
    for s in data {
        check_dim(dim, s.covariates.len())?;
        if !(s.time >= 0.0) || !s.time.is_finite() {
            return Err(SurvivalError::InvalidTime(s.time));
        }
    }
    Ok(())
}

/// Penalized Breslow partial log-likelihood and its gradient, evaluated on
/// the raw covariate scale.
pub fn partial_loglik_grad(
    data: &[SurvivalSample],
    theta: &[f64],
    ridge_penalty: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = theta.len();
    validate_samples(data, d)?;
    let design = Design::new(data, &vec![0.0; d], &vec![1.0; d]);
    let eval = evaluate(&design, &DVector::from_column_slice(theta), ridge_penalty, &vec![1.0; d], false);
    Ok((eval.value, eval.gradient.as_slice().to_vec()))
}

/// Outcome of a Cox fit, including the penalized objective after every
/// accepted Newton step (the first entry is the starting point).
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub model: CoxModel,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_cox(data: &[SurvivalSample], opts: &FitOptions) -> Result<CoxModel> {
    fit_cox_traced(data, opts).map(|fit| fit.model)
}

pub fn fit_cox_traced(data: &[SurvivalSample], opts: &FitOptions) -> Result<CoxFit> {
    opts.validate()?;
    let Some(first) = data.first() else {
        return Err(SurvivalError::NoEvents);
    };
    let d = first.covariates.len();
    validate_samples(data, d)?;
    if !data.iter().any(|s| s.event) {
        return Err(SurvivalError::NoEvents);
    }

    let n = data.len() as f64;
    let mut center = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let mean = data.iter().map(|s| s.covariates[j]).sum::<f64>() / n;
        let var = data.iter().map(|s| (s.covariates[j] - mean).powi(2)).sum::<f64>() / n;
        center[j] = mean;
        if var.sqrt() > 1e-12 {
            scale[j] = var.sqrt();
        }
    }
    // ridge on the raw-scale coefficients theta_j = beta_j / scale_j
    let penalty_weights: Vec<f64> = scale.iter().map(|s| 1.0 / (s * s)).collect();
    let design = Design::new(data, &center, &scale);

    let mut beta = DVector::<f64>::zeros(d);
    let mut current = evaluate(&design, &beta, opts.ridge_penalty, &penalty_weights, true);
    let mut trace = vec![current.value];
    let mut iterations = 0;
    let mut converged = d == 0 || current.gradient.amax() < GRADIENT_TOLERANCE;

    while !converged {
        if iterations >= opts.max_newton_iters {
            return Err(SurvivalError::NonConvergence(opts.max_newton_iters));
        }
        iterations += 1;
        let neg_hessian = -current.hessian.take().expect("hessian requested");
        let chol = neg_hessian.cholesky().ok_or(SurvivalError::SingularHessian)?;
        let step = chol.solve(&current.gradient);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(SurvivalError::SingularHessian);
        }

        let mut scale_factor = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate = &beta + &step * scale_factor;
            let eval = evaluate(&design, &candidate, opts.ridge_penalty, &penalty_weights, true);
            if eval.value.is_finite() && eval.value >= current.value {
                accepted = Some((candidate, eval));
                break;
            }
            scale_factor *= 0.5;
        }
        let Some((next_beta, next)) = accepted else {
            // no ascent direction left at working precision
            break;
        };
        let rel_change = (next.value - current.value).abs() / current.value.abs().max(1e-300);
        beta = next_beta;
        current = next;
        trace.push(current.value);
        converged = rel_change < opts.tolerance || current.gradient.amax() < GRADIENT_TOLERANCE;
    }

    let coefficients: Vec<f64> = (0..d).map(|j| beta[j] / scale[j]).collect();
    let (baseline_times, baseline_cumhaz) = breslow_baseline(&design, &beta, dot(&coefficients, &center));
    let model = CoxModel::new(coefficients, baseline_times, baseline_cumhaz)?;
    Ok(CoxFit { model, objective_trace: trace, iterations })
}

/// Breslow cumulative baseline hazard for raw covariates, given working-scale
/// coefficients and the offset `theta' mean` removed by centering.
fn breslow_baseline(design: &Design, beta: &DVector<f64>, offset: f64) -> (Vec<f64>, Vec<f64>) {
    let eta: Vec<f64> = design.rows.iter().map(|z| dot(beta.as_slice(), z)).collect();
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let mut increments: Vec<(f64, f64)> = Vec::new();
    let mut s0 = 0.0;
    let mut consumed = 0;
    design.for_each_event_time(|t, events, at_risk| {
        for &i in &at_risk[consumed..] {
            s0 += (eta[i] - shift).exp();
        }
        consumed = at_risk.len();
        let jump = events.len() as f64 * (-(offset + shift)).exp() / s0;
        increments.push((t, jump));
    });
    increments.reverse();
    let mut cumulative = 0.0;
    let mut times = Vec::with_capacity(increments.len());
    let mut cumhaz = Vec::with_capacity(increments.len());
    for (t, jump) in increments {
        cumulative += jump;
        times.push(t);
        cumhaz.push(cumulative);
    }
    (times, cumhaz)
}

/// `S(t | x)` from the fitted model.
pub fn survival_prob(model: &CoxModel, x: &[f64], t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(SurvivalError::InvalidTime(t));
    }
    let hazard_ratio = model.risk_score(x)?.exp();
    Ok(survival_from(hazard_ratio, model.cumulative_baseline(t)))
}

fn survival_from(hazard_ratio: f64, cumhaz: f64) -> f64 {
    if cumhaz == 0.0 {
        1.0
    } else {
        (-hazard_ratio * cumhaz).exp()
    }
}

/// Median survival in days.
///
/// Returns the first baseline time at which `S(t | x) <= 0.5` and `true`, or
/// the last baseline time and `false` when the curve stays above one half over
/// the whole support.
pub fn median_survival(model: &CoxModel, x: &[f64]) -> Result<(f64, bool)> {
    let hazard_ratio = model.risk_score(x)?.exp();
    let last = *model.baseline_times.last().ok_or(SurvivalError::EmptyBaseline)?;
    let idx = model
        .baseline_cumhaz
        .partition_point(|&h| survival_from(hazard_ratio, h) > 0.5);
    if idx < model.baseline_times.len() {
        Ok((model.baseline_times[idx], true))
    } else {
        Ok((last, false))
    }
}

/// Harrell's concordance index for risk scores (higher = earlier event).
///
/// A pair is comparable when the sample with the strictly shorter observed
/// time had an event; equal times are never comparable. Tied scores count one
/// half.
pub fn concordance_index(scores: &[f64], data: &[SurvivalSample]) -> Result<f64> {
    if scores.len() != data.len() {
        return Err(SurvivalError::LengthMismatch { scores: scores.len(), samples: data.len() });
    }
    // rank scores for the Fenwick tree
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |s: f64| sorted.partition_point(|&v| v < s);

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].time.total_cmp(&data[a].time));

    let mut tree = Fenwick::new(sorted.len());
    let mut inserted = 0u64;
    let (mut concordant, mut ties, mut comparable) = (0.0f64, 0.0f64, 0u64);
    let mut pos = 0;
    while pos < order.len() {
        let t = data[order[pos]].time;
        let end = pos + order[pos..].iter().take_while(|&&i| data[i].time == t).count();
        // compare events at time t against everything strictly later
        for &i in &order[pos..end] {
            if !data[i].event {
                continue;
            }
            let r = rank(scores[i]);
            let below = tree.prefix(r);
            let equal = tree.prefix(r + 1) - below;
            concordant += below as f64;
            ties += equal as f64;
            comparable += inserted;
        }
        for &i in &order[pos..end] {
            tree.add(rank(scores[i]));
            inserted += 1;
        }
        pos = end;
    }
    if comparable == 0 {
        return Err(SurvivalError::NoComparablePairs);
    }
    Ok((concordant + 0.5 * ties) / comparable as f64)
}

struct Fenwick {
    counts: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { counts: vec![0; n + 1] }
    }

    fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.counts.len() {
            self.counts[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks strictly below `idx`.
    fn prefix(&self, idx: usize) -> u64 {
        let mut i = idx;
        let mut total = 0;
        while i > 0 {
            total += self.counts[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// Graft-model input: donor covariates, then the patient's graft covariates,
/// then the donor-to-center distance in thousands of nautical miles.
pub fn graft_features(donor: &Donor, patient: &Patient) -> Vec<f64> {
    let mut x = Vec::with_capacity(donor.donor_covariates.len() + patient.graft_covariates.len() + 1);
    x.extend_from_slice(&donor.donor_covariates);
    x.extend_from_slice(&patient.graft_covariates);
    x.push(donor.distance_to(patient) / 1000.0);
    x
}

/// Median predicted graft survival of the pair, in years.
pub fn graft_surv(graft_model: &CoxModel, donor: &Donor, patient: &Patient) -> Result<f64> {
    let (days, _) = median_survival(graft_model, &graft_features(donor, patient))?;
    Ok(days / DAYS_PER_YEAR)
}

/// Median predicted survival on the waitlist without transplant, in years.
pub fn waitlist_surv(waitlist_model: &CoxModel, patient: &Patient) -> Result<f64> {
    let (days, _) = median_survival(waitlist_model, &patient.waitlist_covariates)?;
    Ok(days / DAYS_PER_YEAR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(time: f64, event: bool, x: &[f64]) -> SurvivalSample {
        SurvivalSample::new(time, event, x.to_vec())
    }

    #[test]
    fn breslow_reduces_to_nelson_aalen_without_covariates() {
        let data: Vec<_> = (1..=4).map(|t| sample(t as f64, true, &[])).collect();
        let model = fit_cox(&data, &FitOptions::default()).unwrap();
        assert!(model.coefficients().is_empty());
        assert_eq!(model.baseline_times(), &[1.0, 2.0, 3.0, 4.0]);
        let expected = [1.0 / 4.0, 7.0 / 12.0, 13.0 / 12.0, 25.0 / 12.0];
        for (h, e) in model.baseline_cumhaz().iter().zip(expected) {
            assert!((h - e).abs() < 1e-12);
        }
    }

    #[test]
    fn all_censored_is_no_events() {
        let data = vec![sample(1.0, false, &[0.3]), sample(2.0, false, &[-0.1])];
        assert_eq!(fit_cox(&data, &FitOptions::default()), Err(SurvivalError::NoEvents));
    }

    #[test]
    fn two_sample_loglik_hand_expansion() {
        let data = vec![sample(1.0, true, &[0.0]), sample(2.0, true, &[0.0])];
        let (value, grad) = partial_loglik_grad(&data, &[0.0], 0.0).unwrap();
        assert_relative_eq!(value, -(2f64.ln()), epsilon = 1e-15);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn ridge_term_shifts_value() {
        let data = vec![
            sample(1.0, true, &[0.5, -1.0]),
            sample(2.5, false, &[1.5, 0.2]),
            sample(3.0, true, &[-0.7, 0.4]),
        ];
        let theta = [0.4, -1.2];
        let (plain, _) = partial_loglik_grad(&data, &theta, 0.0).unwrap();
        let (pen, _) = partial_loglik_grad(&data, &theta, 0.3).unwrap();
        assert_relative_eq!(plain - pen, 0.15 * (0.16 + 1.44), epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let data = vec![sample(1.0, true, &[0.0, 1.0])];
        assert!(matches!(
            partial_loglik_grad(&data, &[0.0], 0.0),
            Err(SurvivalError::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn survival_prob_examples() {
        let unit = CoxModel::exponential(vec![0.0], 1.0, 1e-4, 5.0).unwrap();
        assert_eq!(survival_prob(&unit, &[3.0], 0.0).unwrap(), 1.0);
        let s = survival_prob(&unit, &[0.0], 2f64.ln()).unwrap();
        assert!((s - 0.5).abs() < 1e-4);

        let m = CoxModel::new(vec![2f64.ln()], vec![1.0], vec![1.0]).unwrap();
        assert_relative_eq!(survival_prob(&m, &[1.0], 1.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
        assert!(survival_prob(&m, &[1.0, 2.0], 1.0).is_err());
        assert!(survival_prob(&m, &[1.0], -1.0).is_err());
    }

    #[test]
    fn lookup_is_right_continuous() {
        let m = CoxModel::new(vec![], vec![1.0, 2.0], vec![0.5, 0.9]).unwrap();
        assert_eq!(m.cumulative_baseline(0.999), 0.0);
        assert_eq!(m.cumulative_baseline(1.0), 0.5);
        assert_eq!(m.cumulative_baseline(1.5), 0.5);
        assert_eq!(m.cumulative_baseline(2.0), 0.9);
        assert_eq!(m.cumulative_baseline(100.0), 0.9);
    }

    #[test]
    fn median_examples() {
        let step = 1e-4;
        let unit = CoxModel::exponential(vec![1.0], 1.0, step, 10.0).unwrap();
        let (t, reached) = median_survival(&unit, &[0.0]).unwrap();
        assert!(reached);
        assert!((t - 2f64.ln()).abs() <= step);
        let (t, reached) = median_survival(&unit, &[2f64.ln()]).unwrap();
        assert!(reached);
        assert!((t - 2f64.ln() / 2.0).abs() <= step);
        let (t, reached) = median_survival(&unit, &[-40.0]).unwrap();
        assert!(!reached);
        assert_eq!(t, *unit.baseline_times().last().unwrap());

        let empty = CoxModel::new(vec![], vec![], vec![]).unwrap();
        assert_eq!(median_survival(&empty, &[]), Err(SurvivalError::EmptyBaseline));
    }

    #[test]
    fn model_rejects_bad_baselines() {
        assert!(CoxModel::new(vec![], vec![1.0, 1.0], vec![0.1, 0.2]).is_err());
        assert!(CoxModel::new(vec![], vec![1.0, 2.0], vec![0.3, 0.2]).is_err());
        assert!(CoxModel::new(vec![], vec![1.0], vec![-0.1]).is_err());
        assert!(CoxModel::new(vec![], vec![1.0], vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = CoxModel::new(vec![0.5, -0.25], vec![1.0, 3.0], vec![0.1, 0.4])
            .unwrap()
            .with_schema_hash("abc");
        let back: CoxModel = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bad = r#"{"coefficients":[1.0],"baseline_times":[1.0],"baseline_cumhaz":[0.1],"covariate_dim":2}"#;
        assert!(serde_json::from_str::<CoxModel>(bad).is_err());
        let unknown = r#"{"coefficients":[],"baseline_times":[],"baseline_cumhaz":[],"covariate_dim":0,"x":1}"#;
        assert!(serde_json::from_str::<CoxModel>(unknown).is_err());
    }

    #[test]
    fn concordance_contracts() {
        let data: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&t| sample(t, true, &[])).collect();
        assert_eq!(concordance_index(&[3.0, 2.0, 1.0], &data).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0], &data).unwrap(), 0.0);
        assert_eq!(concordance_index(&[1.0, 1.0, 1.0], &data).unwrap(), 0.5);
        let censored: Vec<_> = [1.0, 2.0].iter().map(|&t| sample(t, false, &[])).collect();
        assert_eq!(concordance_index(&[1.0, 2.0], &censored), Err(SurvivalError::NoComparablePairs));
        assert!(concordance_index(&[1.0], &censored).is_err());
    }

    #[test]
    fn concordance_mixed_censoring_by_hand() {
        // times 1(event) 2(censored) 3(event) 3(censored)
        // comparable: (1,2) (1,3) (1,3c) (3e vs 3c is equal time -> no); 2 is censored -> none
        // so 3 pairs, all anchored on sample 0.
        let data = vec![
            sample(1.0, true, &[]),
            sample(2.0, false, &[]),
            sample(3.0, true, &[]),
            sample(3.0, false, &[]),
        ];
        // sample 0 score 0.5: beats 0.2 (s2), ties 0.5 (s1), loses to 0.9 (s3)
        let c = concordance_index(&[0.5, 0.5, 0.2, 0.9], &data).unwrap();
        assert_relative_eq!(c, 1.5 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fit_objective_trace_is_monotone() {
        let data = vec![
            sample(2.0, true, &[1.0, 0.3]),
            sample(3.0, true, &[0.2, -0.4]),
            sample(3.0, false, &[-0.5, 1.0]),
            sample(5.0, true, &[-1.0, 0.1]),
            sample(6.0, false, &[0.7, -0.9]),
            sample(7.0, true, &[-1.2, 0.5]),
        ];
        let fit = fit_cox_traced(&data, &FitOptions::default()).unwrap();
        assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0]));
        // the fitted point is stationary on the raw scale
        let (_, grad) = partial_loglik_grad(&data, fit.model.coefficients(), 0.1).unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-5), "{grad:?}");
    }

    #[test]
    fn perfectly_collinear_without_ridge_is_singular() {
        let data: Vec<_> = (0..6)
            .map(|i| sample(i as f64 + 1.0, i % 2 == 0, &[i as f64, 2.0 * i as f64]))
            .collect();
        let opts = FitOptions { ridge_penalty: 0.0, ..FitOptions::default() };
        assert_eq!(fit_cox(&data, &opts).unwrap_err(), SurvivalError::SingularHessian);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let data: Vec<_> = (0..8)
            .map(|i| sample(i as f64 + 1.0, i != 3, &[(i as f64 * 0.7).sin(), (i % 3) as f64]))
            .collect();
        let opts = FitOptions { max_newton_iters: 1, ..FitOptions::default() };
        assert_eq!(fit_cox(&data, &opts).unwrap_err(), SurvivalError::NonConvergence(1));
    }

    #[test]
    fn invalid_options_rejected() {
        let data = vec![sample(1.0, true, &[])];
        let opts = FitOptions { ridge_penalty: -1.0, ..FitOptions::default() };
        assert!(matches!(fit_cox(&data, &opts), Err(SurvivalError::InvalidOptions(_))));
        let opts = FitOptions { tolerance: 0.0, ..FitOptions::default() };
        assert!(matches!(fit_cox(&data, &opts), Err(SurvivalError::InvalidOptions(_))));
    }
}
