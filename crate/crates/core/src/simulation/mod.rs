//! Simulated users and offline experiments over the elicitation loop.

mod experiment;
mod runner;
mod stats;

pub use experiment::{
    run_experiment, run_experiment_on, CellReport, CellTiming, Comparison, ExperimentConfig,
    ExperimentError, ExperimentReport, PrototypeRule, REPORT_VERSION,
};
pub use runner::{run_session, test_sets, SessionConfig, SessionResult, StepTiming};
pub use stats::{acceptance_metrics, mean, paired_comparison, AcceptanceMetrics, PairedComparison, StatsError};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::catalog::{percentile, ItemSpace};
use crate::elicitation::{Phase, Presentation};
use crate::rng::stream;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
/// Percentile of the user's utilities below which an item is disliked.
pub const YUCK_PERCENTILE: f64 = 10.0;

/// A synthetic respondent whose utility for an item is the negative distance
/// between its embedding and a hidden prototype.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    prototype: Vec<f64>,
    utilities: Vec<f64>,
    temperature: f64,
    yuck_threshold: f64,
    seed: u64,
}

impl SimulatedUser {
    /// Prototype is a random convex combination of three distinct items,
    /// renormalized to unit length.
    pub fn sample(space: &ItemSpace, temperature: f64, seed: u64) -> Self {
        let emb = space.embeddings();
        let mut rng = stream(seed, &[b"prototype"]);
        let k = 3.min(emb.len());
        let anchors = index::sample(&mut rng, emb.len(), k);
        let weights: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        let mut proto = vec![0.0; emb.dim()];
        for (a, w) in anchors.iter().zip(&weights) {
            for (p, &x) in proto.iter_mut().zip(emb.row(a)) {
                *p += w / total * x as f64;
            }
        }
        Self::with_prototype(space, proto, temperature, seed)
    }

    /// Prototype is one random item's embedding.
    pub fn from_random_item(space: &ItemSpace, temperature: f64, seed: u64) -> Self {
        let emb = space.embeddings();
        let mut rng = stream(seed, &[b"prototype"]);
        let k = rng.random_range(0..emb.len());
        let proto = emb.row(k).iter().map(|&x| x as f64).collect();
        Self::with_prototype(space, proto, temperature, seed)
    }

    pub fn with_prototype(space: &ItemSpace, mut prototype: Vec<f64>, temperature: f64, seed: u64) -> Self {
        let emb = space.embeddings();
        assert_eq!(prototype.len(), emb.dim(), "prototype dimension");
        let norm = prototype.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            prototype.iter_mut().for_each(|x| *x /= norm);
        }
        let utilities: Vec<f64> = (0..emb.len())
            .map(|i| {
                -emb.row(i)
                    .iter()
                    .zip(&prototype)
                    .map(|(&x, p)| (x as f64 - p).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let yuck_threshold = percentile(&mut utilities.clone(), YUCK_PERCENTILE);
        Self {
            prototype,
            utilities,
            temperature,
            yuck_threshold,
            seed,
        }
    }

    pub fn prototype(&self) -> &[f64] {
        &self.prototype
    }

    pub fn utility(&self, i: usize) -> f64 {
        self.utilities[i]
    }

    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn yuck_threshold(&self) -> f64 {
        self.yuck_threshold
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Answer for `iteration`, drawn from the user's own choice stream.
    pub fn answer(&self, presentation: &Presentation, iteration: u32) -> Vec<usize> {
        let mut rng = stream(self.seed, &[b"choice", &iteration.to_le_bytes()]);
        self.choose(presentation, &mut rng)
    }

    /// Grid: items whose Gumbel-perturbed utility beats the median perturbed
    /// utility of the grid. Pair: logistic choice, or "Yuck" (empty) when both
    /// items fall below the dislike threshold.
    pub fn choose(&self, presentation: &Presentation, rng: &mut impl Rng) -> Vec<usize> {
        let items = &presentation.items;
        match presentation.phase {
            Phase::Grid10 => {
                let noisy: Vec<f64> = items
                    .iter()
                    .map(|&i| self.utilities[i] + self.temperature * gumbel(rng))
                    .collect();
                let median = percentile(&mut noisy.clone(), 50.0);
                let mut picked: Vec<usize> = items
                    .iter()
                    .zip(&noisy)
                    .filter(|(_, &v)| v > median)
                    .map(|(&i, _)| i)
                    .collect();
                picked.sort_unstable();
                picked
            }
            Phase::Pair => {
                let (a, b) = (items[0], items[1]);
                if self.utilities[a] < self.yuck_threshold && self.utilities[b] < self.yuck_threshold {
                    return Vec::new();
                }
                vec![self.prefer(a, b, rng)]
            }
        }
    }

    /// Forced choice between two items.
    pub fn prefer(&self, a: usize, b: usize, rng: &mut impl Rng) -> usize {
        let (ua, ub) = (self.utilities[a], self.utilities[b]);
        if self.temperature <= 0.0 {
            return if ua > ub || (ua == ub && a < b) { a } else { b };
        }
        let p_a = 1.0 / (1.0 + (-(ua - ub) / self.temperature).exp());
        if rng.random::<f64>() < p_a {
            a
        } else {
            b
        }
    }
}

fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}
