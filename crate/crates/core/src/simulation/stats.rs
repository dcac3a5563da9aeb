use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("no recommendations to evaluate")]
    EmptyRecommendation,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Binary acceptance summary. With outcomes in {0, 1} the absolute error is
/// `1 - rate` and the root mean squared error is its square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceMetrics {
    pub rate: f64,
    pub mae: f64,
    pub rmse: f64,
}

pub fn acceptance_metrics(accepted: &[bool]) -> Result<AcceptanceMetrics, StatsError> {
    if accepted.is_empty() {
        return Err(StatsError::EmptyRecommendation);
    }
    let rate = accepted.iter().filter(|&&a| a).count() as f64 / accepted.len() as f64;
    Ok(AcceptanceMetrics {
        rate,
        mae: 1.0 - rate,
        rmse: (1.0 - rate).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_difference: f64,
    /// `None` when the differences have (numerically) zero variance.
    pub t_statistic: Option<f64>,
    /// Two-sided.
    pub p_value: f64,
    /// `(mean_a - mean_b) / mean_b`, absent when `mean_b` is 0.
    pub relative_improvement: Option<f64>,
    pub degenerate: bool,
}

/// Paired two-sided t-test of `a` against `b`.
pub fn paired_comparison(a: &[f64], b: &[f64]) -> Result<PairedComparison, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let var = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (mean_a, mean_b) = (mean(a), mean(b));
    let relative_improvement = (mean_b != 0.0).then(|| (mean_a - mean_b) / mean_b);
    // rounding alone leaves a spread of a few ulps after a constant shift
    if var.sqrt() <= 1e-12 * md.abs().max(1.0) {
        return Ok(PairedComparison {
            n,
            mean_a,
            mean_b,
            mean_difference: md,
            t_statistic: None,
            p_value: if md == 0.0 { 1.0 } else { 0.0 },
            relative_improvement,
            degenerate: true,
        });
    }
    let t = md / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedComparison {
        n,
        mean_a,
        mean_b,
        mean_difference: md,
        t_statistic: Some(t),
        p_value,
        relative_improvement,
        degenerate: false,
    })
}
