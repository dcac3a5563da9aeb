use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EmbeddingSet;
use crate::rng::seeded;

/// Largest distance between two unit vectors.
pub const MAX_UNIT_DISTANCE: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("need at least 2 items to estimate the kernel, got {0}")]
    TooFewItems(usize),
    #[error("degenerate embedding set: {0}")]
    Degenerate(&'static str),
    #[error("delta_percentile and delta_absolute are mutually exclusive")]
    ConflictingDelta,
    #[error("invalid delta {0}: must lie in (0, 2]")]
    InvalidDelta(f64),
    #[error("invalid percentile {0}: must lie in (0, 100)")]
    InvalidPercentile(f64),
}

/// How the neighbor radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaRule {
    /// Percentile (0-100) of the pairwise distance distribution.
    Percentile(f64),
    Absolute(f64),
}

fn default_sample_size() -> usize {
    1_000_000
}

fn default_exact_threshold() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_percentile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_absolute: Option<f64>,
    #[serde(default = "default_sample_size")]
    pub pair_sample_size: usize,
    #[serde(default = "default_exact_threshold")]
    pub exact_threshold: usize,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            delta_percentile: None,
            delta_absolute: None,
            pair_sample_size: default_sample_size(),
            exact_threshold: default_exact_threshold(),
            rng_seed: 0,
        }
    }
}

impl KernelConfig {
    pub const DEFAULT_PERCENTILE: f64 = 5.0;

    pub fn with_percentile(q: f64) -> Self {
        Self {
            delta_percentile: Some(q),
            ..Self::default()
        }
    }

    pub fn with_absolute(delta: f64) -> Self {
        Self {
            delta_absolute: Some(delta),
            ..Self::default()
        }
    }

    pub fn delta_rule(&self) -> Result<DeltaRule, KernelError> {
        match (self.delta_percentile, self.delta_absolute) {
            (Some(_), Some(_)) => Err(KernelError::ConflictingDelta),
            (None, Some(d)) if d > 0.0 && d <= MAX_UNIT_DISTANCE => Ok(DeltaRule::Absolute(d)),
            (None, Some(d)) => Err(KernelError::InvalidDelta(d)),
            (Some(q), None) if q > 0.0 && q < 100.0 => Ok(DeltaRule::Percentile(q)),
            (Some(q), None) => Err(KernelError::InvalidPercentile(q)),
            (None, None) => Ok(DeltaRule::Percentile(Self::DEFAULT_PERCENTILE)),
        }
    }
}

/// Gaussian bandwidth and neighbor radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha_sq: f64,
    pub delta: f64,
}

impl KernelParams {
    pub fn new(alpha_sq: f64, delta: f64) -> Result<Self, KernelError> {
        if !(alpha_sq.is_finite() && alpha_sq > 0.0) {
            return Err(KernelError::Degenerate("alpha_sq must be positive"));
        }
        if !(delta > 0.0 && delta <= MAX_UNIT_DISTANCE) {
            return Err(KernelError::InvalidDelta(delta));
        }
        Ok(Self { alpha_sq, delta })
    }

    /// Similarity for a squared distance; exactly 0 beyond the radius.
    #[inline]
    pub fn weight_from_dist_sq(&self, dist_sq: f64) -> f64 {
        if dist_sq.sqrt() <= self.delta {
            (-dist_sq / (2.0 * self.alpha_sq)).exp()
        } else {
            0.0
        }
    }

    #[inline]
    pub fn within(&self, dist_sq: f64) -> bool {
        dist_sq.sqrt() <= self.delta
    }

    /// Estimates the bandwidth (mean squared distance over all ordered pairs,
    /// self-pairs included) and the radius.
    pub fn estimate(embeddings: &EmbeddingSet, config: &KernelConfig) -> Result<Self, KernelError> {
        let n = embeddings.len();
        if n < 2 {
            return Err(KernelError::TooFewItems(n));
        }
        let rule = config.delta_rule()?;
        let mut rng = seeded(config.rng_seed);

        let alpha_sq = if n <= config.exact_threshold {
            mean_sq_distance_exact(embeddings)
        } else {
            let samples = config.pair_sample_size.max(1);
            let total: f64 = (0..samples)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    let j = rng.random_range(0..n);
                    embeddings.dist_sq(i, j)
                })
                .sum();
            total / samples as f64
        };
        if alpha_sq <= 1e-12 {
            return Err(KernelError::Degenerate("all embeddings coincide"));
        }

        let delta = match rule {
            DeltaRule::Absolute(d) => d,
            DeltaRule::Percentile(q) => {
                let mut dists = pair_distances(embeddings, config.pair_sample_size.max(1), &mut rng);
                let d = percentile(&mut dists, q).min(MAX_UNIT_DISTANCE);
                if d <= 0.0 {
                    return Err(KernelError::Degenerate("distance percentile is zero"));
                }
                d
            }
        };
        Self::new(alpha_sq, delta)
    }
}

/// Exact mean squared pairwise distance over all |S|² ordered pairs, via
/// `2 * mean ||x||^2 - 2 * ||mean x||^2`.
fn mean_sq_distance_exact(embeddings: &EmbeddingSet) -> f64 {
    let n = embeddings.len();
    let dim = embeddings.dim();
    let mut mean = vec![0.0f64; dim];
    let mut sq_norms = 0.0;
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(embeddings.row(i)) {
            *m += f64::from(x);
            sq_norms += f64::from(x) * f64::from(x);
        }
    }
    let nf = n as f64;
    let mean_sq: f64 = mean.iter().map(|m| (m / nf).powi(2)).sum();
    (2.0 * sq_norms / nf - 2.0 * mean_sq).max(0.0)
}

/// Distances over distinct unordered pairs: every pair when there are at most
/// `budget` of them, otherwise `budget` uniformly sampled pairs.
fn pair_distances(embeddings: &EmbeddingSet, budget: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = embeddings.len();
    let pairs = n * (n - 1) / 2;
    if pairs <= budget {
        let mut out = Vec::with_capacity(pairs);
        for i in 0..n {
            for j in i + 1..n {
                out.push(embeddings.dist(i, j));
            }
        }
        out
    } else {
        (0..budget)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                embeddings.dist(i, j)
            })
            .collect()
    }
}

/// Linear-interpolated percentile (0-100) of `values`; reorders the slice.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Radius graph over the catalog in compressed-row form. Each row lists every
/// item within `delta` (itself included, weight 1) in ascending index order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    columns: Vec<u32>,
    weights: Vec<f64>,
    kernel: KernelParams,
}

impl NeighborIndex {
    /// Exhaustive O(|S|²) construction.
    pub fn build(embeddings: &EmbeddingSet, kernel: KernelParams) -> Self {
        let n = embeddings.len();
        let mut rows: Vec<Vec<(u32, f64)>> = (0..n).map(|i| vec![(i as u32, 1.0)]).collect();
        for i in 0..n {
            for j in i + 1..n {
                let d2 = embeddings.dist_sq(i, j);
                if kernel.within(d2) {
                    let w = kernel.weight_from_dist_sq(d2);
                    rows[i].push((j as u32, w));
                    rows[j].push((i as u32, w));
                }
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let total: usize = rows.iter().map(Vec::len).sum();
        let mut columns = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        offsets.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            for (j, w) in row {
                columns.push(j);
                weights.push(w);
            }
            offsets.push(columns.len());
        }
        Self {
            offsets,
            columns,
            weights,
            kernel,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kernel(&self) -> KernelParams {
        self.kernel
    }

    /// `(j, w_ij)` pairs for item `i`, self entry included.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[i]..self.offsets[i + 1];
        self.columns[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&j, &w)| (j as usize, w))
    }

    /// Neighbor count including the item itself.
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let range = self.offsets[i]..self.offsets[i + 1];
        match self.columns[range.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.weights[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.columns.len()
    }
}
