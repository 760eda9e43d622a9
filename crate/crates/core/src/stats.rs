//! Summary statistics for replicated simulation runs.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); exactly zero for one
    /// value or identical values.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let constant = values.iter().all(|v| *v == values[0]);
        let mean = if constant { values[0] } else { mean };
        let std = if n > 1 && !constant {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }

    pub fn standard_error(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Standard error of the difference of two independent means.
pub fn pooled_standard_error(a: &MeanStd, b: &MeanStd) -> f64 {
    (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// One-sided p-value for the alternative `mean(a - b) > 0`.
    pub p_value: f64,
}

/// One-sided paired t-test of `a > b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let summary = MeanStd::of(&diffs);
    let se = summary.standard_error();
    let (t, p) = if se > 0.0 {
        let t = summary.mean / se;
        let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64).ok()?;
        (t, 1.0 - dist.cdf(t))
    } else if summary.mean > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (f64::NAN, 1.0)
    };
    Some(PairedTest { mean_difference: summary.mean, t_statistic: t, p_value: p })
}
