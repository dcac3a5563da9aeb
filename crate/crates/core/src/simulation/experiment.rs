use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::runner::{run_session, SessionConfig, StepTiming, DEFAULT_TEST_PAIRS};
use super::stats::{
    acceptance_metrics, mean, paired_comparison, AcceptanceMetrics, PairedComparison, StatsError,
};
use super::{SimulatedUser, DEFAULT_TEMPERATURE};
use crate::catalog::{DietType, ItemSpace, KernelConfig, KernelParams};
use crate::elicitation::{ElicitationError, Phase, Strategy, StrategyConfig, DEFAULT_CLAMP, DEFAULT_FRACTION};
use crate::rng::derive_seed;
use crate::synthetic::{SyntheticData, SyntheticError, SyntheticSpec};

pub const REPORT_VERSION: u32 = 1;

/// How each simulated user's hidden prototype is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeRule {
    /// Convex combination of three random items.
    #[default]
    Mixture,
    /// One random item's embedding.
    Item,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] SyntheticError),
    #[error(transparent)]
    Elicitation(#[from] ElicitationError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid experiment config: {0}")]
    Invalid(String),
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_iterations() -> Vec<u32> {
    vec![5, 10, 15]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub diet: DietType,
    pub kernel: KernelConfig,
    pub strategies: Vec<Strategy>,
    pub iterations: Vec<u32>,
    pub users: usize,
    pub test_pairs: usize,
    pub test_fraction: f64,
    pub temperature: f64,
    pub prototype: PrototypeRule,
    pub beta: Option<f64>,
    pub exponent_clamp: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            diet: DietType::NoRestrictions,
            kernel: KernelConfig::default(),
            strategies: default_strategies(),
            iterations: default_iterations(),
            users: 200,
            test_pairs: DEFAULT_TEST_PAIRS,
            test_fraction: DEFAULT_FRACTION,
            temperature: DEFAULT_TEMPERATURE,
            prototype: PrototypeRule::Mixture,
            beta: None,
            exponent_clamp: DEFAULT_CLAMP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub strategy: Strategy,
    pub iterations: u32,
    /// Per-user test accuracy, in user order.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Mean entropy after 0..=T updates.
    pub mean_entropy: Vec<f64>,
    /// Mean explored-set size after 0..=T updates.
    pub mean_explored: Vec<f64>,
}

impl CellReport {
    pub fn label(&self) -> String {
        format!("{} T={}", self.strategy, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub result: PairedComparison,
}

/// Wall-clock figures, kept apart from the deterministic part of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub strategy: Strategy,
    pub iterations: u32,
    pub grid_median_ms: Option<f64>,
    pub pair_median_ms: Option<f64>,
    pub pair_p95_ms: Option<f64>,
    pub pair_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub catalog_size: usize,
    pub kernel: KernelParams,
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub comparisons: Vec<Comparison>,
    pub timing: Vec<CellTiming>,
}

impl ExperimentReport {
    pub fn cell(&self, strategy: Strategy, iterations: u32) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.iterations == iterations)
    }

    pub fn comparison(&self, a: &CellReport, b: &CellReport) -> Option<&Comparison> {
        let (la, lb) = (a.label(), b.label());
        self.comparisons.iter().find(|c| c.a == la && c.b == lb)
    }

    /// Long-format per-user accuracies.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,iterations,user,accuracy\n");
        for c in &self.cells {
            for (u, a) in c.accuracies.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", c.strategy, c.iterations, u, a);
            }
        }
        out
    }

    /// Mean entropy by iteration, one row per cell and step.
    pub fn entropy_csv(&self) -> String {
        let mut out = String::from("strategy,iterations,t,mean_entropy,mean_explored\n");
        for c in &self.cells {
            for (t, (h, e)) in c.mean_entropy.iter().zip(&c.mean_explored).enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", c.strategy, c.iterations, t, h, e);
            }
        }
        out
    }
}

/// Generates the synthetic catalog described by `config` and runs on it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let data = SyntheticData::generate(&config.synthetic);
    let (_, space) = data.build(config.diet, &config.kernel)?;
    run_experiment_on(&space, config)
}

fn median_ms(mut values: Vec<Duration>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let n = values.len();
    let mid = if n % 2 == 1 {
        values[n / 2].as_secs_f64()
    } else {
        (values[n / 2 - 1].as_secs_f64() + values[n / 2].as_secs_f64()) / 2.0
    };
    Some(mid * 1e3)
}

fn p95_ms(mut values: Vec<Duration>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let k = ((values.len() as f64 * 0.95).ceil() as usize).clamp(1, values.len()) - 1;
    Some(values[k].as_secs_f64() * 1e3)
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Every (strategy, T) cell over the same simulated users. User `u` is
/// identical across cells; the session stream depends on the cell as well.
pub fn run_experiment_on(
    space: &ItemSpace,
    config: &ExperimentConfig,
) -> Result<ExperimentReport, ExperimentError> {
    if config.users == 0 {
        return Err(ExperimentError::Invalid("users must be >= 1".into()));
    }
    if config.test_pairs == 0 {
        return Err(ExperimentError::Invalid("test_pairs must be >= 1".into()));
    }
    if config.strategies.is_empty() || config.iterations.is_empty() {
        return Err(ExperimentError::Invalid("no cells to run".into()));
    }
    let users: Vec<SimulatedUser> = (0..config.users)
        .map(|u| {
            let seed = derive_seed(config.seed, &[b"user", &(u as u64).to_le_bytes()]);
            match config.prototype {
                PrototypeRule::Mixture => SimulatedUser::sample(space, config.temperature, seed),
                PrototypeRule::Item => SimulatedUser::from_random_item(space, config.temperature, seed),
            }
        })
        .collect();

    let mut cells = Vec::new();
    let mut timing = Vec::new();
    for &strategy in &config.strategies {
        let mut strategy_config = StrategyConfig::new(strategy);
        strategy_config.beta = config.beta;
        strategy_config.exponent_clamp = config.exponent_clamp;
        strategy_config.fraction = config.test_fraction;
        for &t in &config.iterations {
            let session = SessionConfig {
                strategy: strategy_config.clone(),
                iterations: t,
                test_pairs: config.test_pairs,
                test_fraction: config.test_fraction,
            };
            let label = strategy.to_string();
            let mut accuracies = Vec::with_capacity(users.len());
            let mut outcomes = Vec::new();
            let mut entropy = Vec::with_capacity(users.len());
            let mut explored = Vec::with_capacity(users.len());
            let mut steps: Vec<StepTiming> = Vec::new();
            for (u, user) in users.iter().enumerate() {
                let seed = derive_seed(
                    config.seed,
                    &[b"session", label.as_bytes(), &t.to_le_bytes(), &(u as u64).to_le_bytes()],
                );
                let r = run_session(space, user, &session, seed)?;
                accuracies.push(r.accuracy());
                outcomes.extend_from_slice(&r.test_outcomes);
                entropy.push(r.entropy);
                explored.push(r.explored.iter().map(|&e| e as f64).collect());
                steps.extend(r.timings);
            }
            let metrics = acceptance_metrics(&outcomes).unwrap_or(AcceptanceMetrics {
                rate: 0.0,
                mae: 1.0,
                rmse: 1.0,
            });
            cells.push(CellReport {
                strategy,
                iterations: t,
                mean_accuracy: mean(&accuracies),
                accuracies,
                mae: metrics.mae,
                rmse: metrics.rmse,
                mean_entropy: mean_columns(&entropy),
                mean_explored: mean_columns(&explored),
            });
            let of = |phase: Phase| -> Vec<Duration> {
                steps.iter().filter(|s| s.phase == phase).map(StepTiming::total).collect()
            };
            let pair = of(Phase::Pair);
            timing.push(CellTiming {
                strategy,
                iterations: t,
                grid_median_ms: median_ms(of(Phase::Grid10)),
                pair_median_ms: median_ms(pair.clone()),
                pair_p95_ms: p95_ms(pair.clone()),
                pair_steps: pair.len(),
            });
        }
    }

    // paired tests need at least two shared users
    let mut comparisons = Vec::new();
    let paired_cells = if config.users >= 2 { cells.len() } else { 0 };
    for i in 0..paired_cells {
        for j in 0..cells.len() {
            if i == j {
                continue;
            }
            comparisons.push(Comparison {
                a: cells[i].label(),
                b: cells[j].label(),
                result: paired_comparison(&cells[i].accuracies, &cells[j].accuracies)?,
            });
        }
    }

    Ok(ExperimentReport {
        version: REPORT_VERSION,
        catalog_size: space.len(),
        kernel: space.kernel(),
        config: config.clone(),
        cells,
        comparisons,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            synthetic: SyntheticSpec {
                items: 150,
                clusters: 4,
                dim: 8,
                seed: 1,
                ..SyntheticSpec::default()
            },
            strategies: vec![Strategy::LE_EE, Strategy::OP_RS],
            iterations: vec![3, 5],
            users: 6,
            seed: 42,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn report_shape_and_determinism() {
        let a = run_experiment(&tiny()).unwrap();
        let b = run_experiment(&tiny()).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.comparisons, b.comparisons);
        assert_eq!(a.cells.len(), 4);
        assert_eq!(a.comparisons.len(), 12);
        assert_eq!(a.cell(Strategy::LE_EE, 5).unwrap().mean_entropy.len(), 6);
        assert_eq!(a.to_csv().lines().count(), 1 + 4 * 6);
        let json = serde_json::to_string(&a).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.cells, a.cells);
    }

    #[test]
    fn config_defaults_from_empty_json() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c: ExperimentConfig = serde_json::from_str(r#"{"strategies":["OP+RS"],"users":3}"#).unwrap();
        assert_eq!(c.strategies, [Strategy::OP_RS]);
    }

    #[test]
    fn single_user_single_cell() {
        let cfg = ExperimentConfig {
            users: 1,
            strategies: vec![Strategy::LE_EE],
            iterations: vec![4],
            ..tiny()
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].accuracies.len(), 1);
        assert!(r.comparisons.is_empty());
        assert!((r.cells[0].mean_entropy[0] - (r.catalog_size as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_counts() {
        let cfg = ExperimentConfig { users: 0, ..tiny() };
        assert!(matches!(run_experiment(&cfg), Err(ExperimentError::Invalid(_))));
        let cfg = ExperimentConfig { test_pairs: 0, ..tiny() };
        assert!(matches!(run_experiment(&cfg), Err(ExperimentError::Invalid(_))));
    }
}
