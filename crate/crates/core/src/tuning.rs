//! Black-box tuning of blood-type potentials.
//!
//! Candidates are scored by deterministic all-accept simulation over a set of
//! training cohorts. The search evaluates `θ = 0` first, then shifted Halton
//! points in the search box, then (optionally) a coordinate-wise pattern
//! search around the incumbent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acceptance::ConstantAcceptance;
use crate::cohort::Cohort;
use crate::policies::{PolicyKind, PolicySpec, SurvivalModels};
use crate::simulator::{run, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid tuning config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, TuneError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub budget_evals: usize,
    /// Per-coordinate (lower, upper) bounds in years, ordered (O, A, B, AB).
    pub search_box: [(f64, f64); 4],
    pub local_refine: bool,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig { budget_evals: 50, search_box: [(-5.0, 5.0); 4], local_refine: true, seed: 0 }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_evals == 0 {
            return Err(TuneError::Config("budget_evals must be at least 1".into()));
        }
        for (lo, hi) in self.search_box {
            if !lo.is_finite() || !hi.is_finite() || lo > hi || lo > 0.0 || hi < 0.0 {
                return Err(TuneError::Config(format!(
                    "search box bounds must be finite, ordered and contain 0, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub theta: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_theta: [f64; 4],
    pub best_score: f64,
    /// Every evaluation in the order performed.
    pub evaluation_log: Vec<Evaluation>,
}

/// Summed all-accept objective of the potential policy with `theta` over
/// `cohorts`, each simulated over its own horizon.
pub fn evaluate_theta(
    theta: [f64; 4],
    cohorts: &[Cohort],
    models: &SurvivalModels,
    base_spec: &PolicySpec,
) -> Result<f64> {
    if base_spec.kind != PolicyKind::Potential {
        return Err(TuneError::Config("base policy must be the potential policy".into()));
    }
    let spec = PolicySpec { potential_theta: theta, ..base_spec.clone() };
    let mut total = 0.0;
    for cohort in cohorts {
        let config = SimConfig::new(cohort.effective_horizon(), spec.clone()).always_accept();
        total += run(&config, cohort, models, &ConstantAcceptance(1.0))?.total_life_years;
    }
    Ok(total)
}

/// First Halton coordinates in bases 2, 3, 5, 7.
fn halton(index: u64) -> [f64; 4] {
    [2u64, 3, 5, 7].map(|base| {
        let (mut f, mut r, mut i) = (1.0, 0.0, index);
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    })
}

struct Search<'a> {
    cohorts: &'a [Cohort],
    models: &'a SurvivalModels,
    base_spec: &'a PolicySpec,
    log: Vec<Evaluation>,
    best: usize,
}

impl Search<'_> {
    /// Scores candidates concurrently and records them in order.
    fn evaluate(&mut self, thetas: Vec<[f64; 4]>) -> Result<()> {
        let scores = thetas
            .par_iter()
            .map(|&t| evaluate_theta(t, self.cohorts, self.models, self.base_spec))
            .collect::<Result<Vec<f64>>>()?;
        for (theta, score) in thetas.into_iter().zip(scores) {
            self.log.push(Evaluation { theta, score });
            if score > self.log[self.best].score {
                self.best = self.log.len() - 1;
            }
        }
        Ok(())
    }

    fn incumbent(&self) -> &Evaluation {
        &self.log[self.best]
    }
}

pub fn tune_potentials(
    cohorts: &[Cohort],
    models: &SurvivalModels,
    base_spec: &PolicySpec,
    config: &TuneConfig,
) -> Result<TuneResult> {
    config.validate()?;
    let budget = config.budget_evals;
    let mut search = Search { cohorts, models, base_spec, log: Vec::with_capacity(budget), best: 0 };
    search.evaluate(vec![[0.0; 4]])?;

    let refine_budget = if config.local_refine { (budget - 1) * 2 / 5 } else { 0 };
    let global_budget = budget - 1 - refine_budget;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shift: [f64; 4] = std::array::from_fn(|_| rng.random());
    let points = (1..=global_budget as u64)
        .map(|k| {
            let h = halton(k);
            std::array::from_fn(|i| {
                let (lo, hi) = config.search_box[i];
                lo + (h[i] + shift[i]).fract() * (hi - lo)
            })
        })
        .collect();
    search.evaluate(points)?;

    let mut step: [f64; 4] = config.search_box.map(|(lo, hi)| (hi - lo) / 8.0);
    let mut remaining = refine_budget;
    while remaining > 0 && step.iter().any(|&s| s > 1e-3) {
        let mut improved = false;
        for i in 0..4 {
            for sign in [1.0, -1.0] {
                if remaining == 0 {
                    break;
                }
                let (lo, hi) = config.search_box[i];
                let mut theta = search.incumbent().theta;
                let moved = (theta[i] + sign * step[i]).clamp(lo, hi);
                if moved == theta[i] {
                    continue;
                }
                theta[i] = moved;
                let before = search.best;
                search.evaluate(vec![theta])?;
                remaining -= 1;
                improved |= search.best != before;
            }
        }
        if !improved {
            step = step.map(|s| s / 2.0);
        }
    }

    let best = search.incumbent().clone();
    Ok(TuneResult { best_theta: best.theta, best_score: best.score, evaluation_log: search.log })
}
