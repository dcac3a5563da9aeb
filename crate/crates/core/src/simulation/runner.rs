use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::SimulatedUser;
use crate::catalog::ItemSpace;
use crate::elicitation::{
    bottom_fraction, select, selection_rng, top_fraction, update, ElicitationError, Phase,
    StrategyConfig, UserState, DEFAULT_FRACTION,
};
use crate::rng::stream;

pub const DEFAULT_TEST_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub strategy: StrategyConfig,
    pub iterations: u32,
    pub test_pairs: usize,
    pub test_fraction: f64,
}

impl SessionConfig {
    pub fn new(strategy: StrategyConfig, iterations: u32) -> Self {
        Self {
            strategy,
            iterations,
            test_pairs: DEFAULT_TEST_PAIRS,
            test_fraction: DEFAULT_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTiming {
    pub iteration: u32,
    pub phase: Phase,
    pub select: Duration,
    pub update: Duration,
}

impl StepTiming {
    pub fn total(&self) -> Duration {
        self.select + self.update
    }
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub state: UserState,
    /// One flag per test pair: did the user prefer the high-preference item.
    pub test_outcomes: Vec<bool>,
    /// Entropy of `p` after 0, 1, ..., T updates.
    pub entropy: Vec<f64>,
    /// Explored set size after 0, 1, ..., T updates.
    pub explored: Vec<usize>,
    pub timings: Vec<StepTiming>,
}

impl SessionResult {
    pub fn accuracy(&self) -> f64 {
        if self.test_outcomes.is_empty() {
            return 0.0;
        }
        self.test_outcomes.iter().filter(|&&c| c).count() as f64 / self.test_outcomes.len() as f64
    }
}

/// High- and low-preference candidate sets for testing, drawn from items the
/// session never explored. The low set excludes the high set so the two never
/// overlap, even under a uniform `p`. Falls back to the whole catalog when
/// fewer than two unexplored items remain.
pub fn test_sets(state: &UserState, fraction: f64) -> Result<(Vec<usize>, Vec<usize>), ElicitationError> {
    let mut pool: Vec<usize> = (0..state.len()).filter(|&i| !state.is_explored(i)).collect();
    if pool.len() < 2 {
        pool = (0..state.len()).collect();
    }
    let lp = state.log_p();
    let values: Vec<f64> = pool.iter().map(|&i| lp[i]).collect();
    let top: Vec<usize> = top_fraction(&values, fraction)?.into_iter().map(|k| pool[k]).collect();
    let rest: Vec<usize> = pool.iter().copied().filter(|i| !top.contains(i)).collect();
    let rest_values: Vec<f64> = rest.iter().map(|&i| lp[i]).collect();
    let bottom = bottom_fraction(&rest_values, fraction)?.into_iter().map(|k| rest[k]).collect();
    Ok((top, bottom))
}

/// Runs `config.iterations` elicitation steps against `user`, then the
/// forced-choice test phase.
pub fn run_session(
    space: &ItemSpace,
    user: &SimulatedUser,
    config: &SessionConfig,
    seed: u64,
) -> Result<SessionResult, ElicitationError> {
    config.strategy.validate()?;
    let mut state = UserState::for_updater(config.strategy.updater, space.len(), space.embeddings().dim())?;
    let mut entropy = vec![state.entropy()];
    let mut explored = vec![state.explored_count()];
    let mut timings = Vec::with_capacity(config.iterations as usize);

    for iteration in 1..=config.iterations {
        let started = Instant::now();
        let presentation = select(
            &state,
            iteration,
            space,
            &config.strategy,
            &mut selection_rng(seed, iteration),
        )?;
        let selected_at = Instant::now();
        let answer = user.answer(&presentation, iteration);
        let answered_at = Instant::now();
        update(&mut state, &presentation.items, &answer, space, &config.strategy)?;
        let done = Instant::now();
        timings.push(StepTiming {
            iteration,
            phase: presentation.phase,
            select: selected_at - started,
            update: done - answered_at,
        });
        entropy.push(state.entropy());
        explored.push(state.explored_count());
    }

    let (top, bottom) = test_sets(&state, config.test_fraction)?;
    let mut rng = stream(seed, &[b"test"]);
    let mut test_outcomes = Vec::with_capacity(config.test_pairs);
    if !top.is_empty() && !bottom.is_empty() {
        for _ in 0..config.test_pairs {
            let hi = *top.choose(&mut rng).expect("non-empty");
            let lo = *bottom.choose(&mut rng).expect("non-empty");
            test_outcomes.push(user.prefer(hi, lo, &mut rng) == hi);
        }
    }
    Ok(SessionResult {
        state,
        test_outcomes,
        entropy,
        explored,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{DietType, KernelConfig};
    use crate::elicitation::Strategy;
    use crate::synthetic::{SyntheticData, SyntheticSpec};

    fn space() -> ItemSpace {
        let spec = SyntheticSpec {
            items: 400,
            clusters: 8,
            dim: 16,
            seed: 11,
            ..SyntheticSpec::default()
        };
        SyntheticData::generate(&spec)
            .build(DietType::NoRestrictions, &KernelConfig::default())
            .unwrap()
            .1
    }

    #[test]
    fn trajectories_have_t_plus_one_entries() {
        let s = space();
        let user = SimulatedUser::sample(&s, 0.1, 1);
        let r = run_session(&s, &user, &SessionConfig::new(StrategyConfig::new(Strategy::LE_EE), 6), 9).unwrap();
        assert_eq!(r.entropy.len(), 7);
        assert_eq!(r.explored.len(), 7);
        assert_eq!(r.timings.len(), 6);
        assert_eq!(r.state.t(), 6);
        assert_eq!(r.test_outcomes.len(), DEFAULT_TEST_PAIRS);
        assert!((r.entropy[0] - (400f64).ln()).abs() < 1e-9);
        assert!(r.explored.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = space();
        let user = SimulatedUser::sample(&s, 0.1, 1);
        let cfg = SessionConfig::new(StrategyConfig::new(Strategy::OP_EE), 5);
        let a = run_session(&s, &user, &cfg, 3).unwrap();
        let b = run_session(&s, &user, &cfg, 3).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.test_outcomes, b.test_outcomes);
    }

    #[test]
    fn zero_iterations_uses_uniform_state() {
        let s = space();
        let user = SimulatedUser::sample(&s, 0.1, 1);
        let r = run_session(&s, &user, &SessionConfig::new(StrategyConfig::default(), 0), 3).unwrap();
        assert_eq!(r.state.t(), 0);
        let (top, bottom) = test_sets(&r.state, 0.01).unwrap();
        assert_eq!(top, [0, 1, 2, 3]);
        assert_eq!(bottom, [4, 5, 6, 7]);
    }
}
