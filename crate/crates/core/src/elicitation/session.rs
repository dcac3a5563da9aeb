use super::{select, update, ElicitationError, Presentation, StrategyConfig, UserState};
use crate::catalog::ItemSpace;
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Next(Presentation),
    Finished,
}

/// Drives the select/answer/update loop for a fixed number of iterations.
///
/// Randomness for the presentation of iteration `t` comes from a stream keyed
/// by `(seed, t)`, so a session is fully determined by its seed and the
/// answers it receives.
#[derive(Debug, Clone)]
pub struct ElicitationSession {
    state: UserState,
    config: StrategyConfig,
    pending: Option<Presentation>,
    seed: u64,
    iterations: u32,
}

pub fn selection_rng(seed: u64, iteration: u32) -> StreamRng {
    stream(seed, &[b"select", &iteration.to_le_bytes()])
}

impl ElicitationSession {
    pub fn start(
        space: &ItemSpace,
        config: StrategyConfig,
        seed: u64,
        iterations: u32,
    ) -> Result<Self, ElicitationError> {
        config.validate()?;
        if iterations == 0 {
            return Err(ElicitationError::InvalidConfig("iterations must be >= 1".into()));
        }
        let state = UserState::for_updater(config.updater, space.len(), space.embeddings().dim())?;
        let mut session = Self {
            state,
            config,
            pending: None,
            seed,
            iterations,
        };
        session.pending = Some(session.next_presentation(space)?);
        Ok(session)
    }

    fn next_presentation(&self, space: &ItemSpace) -> Result<Presentation, ElicitationError> {
        let iteration = self.state.t() + 1;
        select(
            &self.state,
            iteration,
            space,
            &self.config,
            &mut selection_rng(self.seed, iteration),
        )
    }

    /// The presentation awaiting an answer, if any.
    pub fn pending(&self) -> Option<&Presentation> {
        self.pending.as_ref()
    }

    /// 1-based number of the pending iteration.
    pub fn iteration(&self) -> u32 {
        self.state.t() + 1
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn is_finished(&self) -> bool {
        self.pending.is_none()
    }

    pub fn state(&self) -> &UserState {
        &self.state
    }

    pub fn into_state(self) -> UserState {
        self.state
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    /// Applies the answer to the pending presentation; an empty selection is
    /// a "none of these" answer.
    pub fn submit(
        &mut self,
        space: &ItemSpace,
        selected: &[usize],
    ) -> Result<StepOutcome, ElicitationError> {
        let presented = self.pending.as_ref().ok_or(ElicitationError::Finished)?.items.clone();
        update(&mut self.state, &presented, selected, space, &self.config)?;
        if self.state.t() >= self.iterations {
            self.pending = None;
            return Ok(StepOutcome::Finished);
        }
        let next = self.next_presentation(space)?;
        self.pending = Some(next.clone());
        Ok(StepOutcome::Next(next))
    }
}
