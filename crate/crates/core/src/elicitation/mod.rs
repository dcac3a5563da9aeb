//! Online preference elicitation.
//!
//! A user's taste is a probability vector `p` over the whole catalog. Each
//! answered presentation labels the shown items (+1 picked, -1 passed over),
//! spreads those labels to radius neighbors with the Gaussian weights, and
//! applies a multiplicative exponentiated update to `p`. Selection alternates
//! k-means++ grids (first two iterations) with exploit/explore pairs.

mod select;
mod session;
mod update;

pub use select::{bottom_fraction, kmeans_pp, kmeans_pp_with, select, top_fraction};
pub use session::{selection_rng, ElicitationSession, StepOutcome};
pub use update::{
    apply_exponentiated_update, fused_update_vector, label_vector, perceptron_update, propagate,
    update, update_explored, LabelVector, UpdateVector,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two ten-item grids must fit.
pub const MIN_CATALOG_SIZE: usize = 20;
pub const GRID_SIZE: usize = 10;
pub const GRID_ITERATIONS: u32 = 2;
pub const DEFAULT_CLAMP: f64 = 50.0;
pub const DEFAULT_FRACTION: f64 = 0.01;
pub const DEFAULT_ITERATIONS: u32 = 15;
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElicitationError {
    #[error("catalog has {0} items, at least {MIN_CATALOG_SIZE} are required")]
    CatalogTooSmall(usize),
    #[error("selected item {0} was not presented")]
    SelectionNotSubset(usize),
    #[error("item {0} appears more than once in a presentation")]
    DuplicateItem(usize),
    #[error("item index {0} is out of range")]
    ItemOutOfRange(usize),
    #[error("requested {requested} distinct items but only {available} exist")]
    NotEnoughItems { requested: usize, available: usize },
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
    #[error("elicitation already finished")]
    Finished,
    #[error("invalid user state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Updater {
    /// Label propagation with exponentiated-gradient updates.
    #[serde(rename = "LE")]
    Le,
    /// Online perceptron over the embedding features.
    #[serde(rename = "OP")]
    Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Selector {
    /// Exploit a top-preference item, explore an unexplored one.
    #[serde(rename = "EE")]
    Ee,
    /// Uniform random items.
    #[serde(rename = "RS")]
    Rs,
}

/// One cell of the updater × selector matrix, written like `LE+EE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Strategy {
    pub updater: Updater,
    pub selector: Selector,
}

impl Strategy {
    pub const LE_EE: Strategy = Strategy {
        updater: Updater::Le,
        selector: Selector::Ee,
    };
    pub const LE_RS: Strategy = Strategy {
        updater: Updater::Le,
        selector: Selector::Rs,
    };
    pub const OP_EE: Strategy = Strategy {
        updater: Updater::Op,
        selector: Selector::Ee,
    };
    pub const OP_RS: Strategy = Strategy {
        updater: Updater::Op,
        selector: Selector::Rs,
    };
    pub const ALL: [Strategy; 4] = [Self::LE_EE, Self::LE_RS, Self::OP_EE, Self::OP_RS];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let u = match self.updater {
            Updater::Le => "LE",
            Updater::Op => "OP",
        };
        let s = match self.selector {
            Selector::Ee => "EE",
            Selector::Rs => "RS",
        };
        write!(f, "{u}+{s}")
    }
}

impl FromStr for Strategy {
    type Err = ElicitationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ElicitationError::InvalidConfig(format!("unknown strategy `{s}`"));
        let (u, sel) = s.split_once('+').ok_or_else(bad)?;
        let updater = match u.trim().to_ascii_uppercase().as_str() {
            "LE" => Updater::Le,
            "OP" => Updater::Op,
            _ => return Err(bad()),
        };
        let selector = match sel.trim().to_ascii_uppercase().as_str() {
            "EE" => Selector::Ee,
            "RS" => Selector::Rs,
            _ => return Err(bad()),
        };
        Ok(Strategy { updater, selector })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_clamp() -> f64 {
    DEFAULT_CLAMP
}

fn default_fraction() -> f64 {
    DEFAULT_FRACTION
}

fn default_updater() -> Updater {
    Updater::Le
}

fn default_selector() -> Selector {
    Selector::Ee
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    #[serde(default = "default_updater")]
    pub updater: Updater,
    #[serde(default = "default_selector")]
    pub selector: Selector,
    /// Exponentiated coefficient; `None` means `0.5 / |S|`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_clamp")]
    pub exponent_clamp: f64,
    /// Quantile used for the exploit set.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::new(Strategy::LE_EE)
    }
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            updater: strategy.updater,
            selector: strategy.selector,
            beta: None,
            exponent_clamp: DEFAULT_CLAMP,
            fraction: DEFAULT_FRACTION,
            rng_seed: 0,
        }
    }

    pub fn strategy(&self) -> Strategy {
        Strategy {
            updater: self.updater,
            selector: self.selector,
        }
    }

    pub fn beta_for(&self, catalog_size: usize) -> f64 {
        self.beta.unwrap_or(0.5 / catalog_size as f64)
    }

    pub fn validate(&self) -> Result<(), ElicitationError> {
        if let Some(b) = self.beta {
            if !(b.is_finite() && b > 0.0) {
                return Err(ElicitationError::InvalidConfig(format!("beta {b} must be > 0")));
            }
        }
        if !(self.exponent_clamp.is_finite() && self.exponent_clamp > 0.0) {
            return Err(ElicitationError::InvalidConfig(format!(
                "exponent_clamp {} must be > 0",
                self.exponent_clamp
            )));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(ElicitationError::InvalidFraction(self.fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Grid10,
    Pair,
}

impl Phase {
    pub fn for_iteration(iteration: u32) -> Self {
        if iteration <= GRID_ITERATIONS {
            Phase::Grid10
        } else {
            Phase::Pair
        }
    }

    pub fn size(self) -> usize {
        match self {
            Phase::Grid10 => GRID_SIZE,
            Phase::Pair => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub items: Vec<usize>,
    pub phase: Phase,
}

/// One answered presentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub presented: Vec<usize>,
    pub selected: Vec<usize>,
}

/// Preference distribution, explored set, iteration counter and history.
///
/// `p` is held as log-probabilities so that heavily down-weighted items keep
/// their ordering long after `exp` would underflow. With the perceptron
/// updater, `log_p` is the log-softmax of the perceptron scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateDocument", into = "StateDocument")]
pub struct UserState {
    log_p: Vec<f64>,
    explored: Vec<bool>,
    explored_count: usize,
    t: u32,
    history: Vec<Step>,
    perceptron: Option<Vec<f64>>,
}

impl UserState {
    /// Uniform preferences, nothing explored, `t = 0`.
    pub fn new(catalog_size: usize) -> Result<Self, ElicitationError> {
        if catalog_size < MIN_CATALOG_SIZE {
            return Err(ElicitationError::CatalogTooSmall(catalog_size));
        }
        Ok(Self {
            log_p: vec![-(catalog_size as f64).ln(); catalog_size],
            explored: vec![false; catalog_size],
            explored_count: 0,
            t: 0,
            history: Vec::new(),
            perceptron: None,
        })
    }

    /// Fresh state for the perceptron updater with zero weights.
    pub fn new_perceptron(catalog_size: usize, dim: usize) -> Result<Self, ElicitationError> {
        let mut s = Self::new(catalog_size)?;
        s.perceptron = Some(vec![0.0; dim]);
        Ok(s)
    }

    pub fn for_updater(
        updater: Updater,
        catalog_size: usize,
        dim: usize,
    ) -> Result<Self, ElicitationError> {
        match updater {
            Updater::Le => Self::new(catalog_size),
            Updater::Op => Self::new_perceptron(catalog_size, dim),
        }
    }

    pub fn len(&self) -> usize {
        self.log_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_p.is_empty()
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn log_p(&self) -> &[f64] {
        &self.log_p
    }

    pub fn p(&self) -> Vec<f64> {
        self.log_p.iter().map(|l| l.exp()).collect()
    }

    pub fn p_at(&self, i: usize) -> f64 {
        self.log_p[i].exp()
    }

    pub fn history(&self) -> &[Step] {
        &self.history
    }

    pub fn perceptron_weights(&self) -> Option<&[f64]> {
        self.perceptron.as_deref()
    }

    pub fn is_explored(&self, i: usize) -> bool {
        self.explored[i]
    }

    pub fn explored_count(&self) -> usize {
        self.explored_count
    }

    pub fn explored_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.explored[i]).collect()
    }

    /// Items shown in any past presentation.
    pub fn presented_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for step in &self.history {
            for &i in &step.presented {
                mask[i] = true;
            }
        }
        mask
    }

    /// Natural-log entropy of `p`, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy_of_log(&self.log_p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ElicitationError> {
        serde_json::from_str(text).map_err(|e| ElicitationError::InvalidState(e.to_string()))
    }

    pub(crate) fn mark_explored(&mut self, i: usize) {
        if !self.explored[i] {
            self.explored[i] = true;
            self.explored_count += 1;
        }
    }

    pub(crate) fn set_log_p(&mut self, log_p: Vec<f64>) {
        debug_assert_eq!(log_p.len(), self.len());
        self.log_p = log_p;
    }

    pub(crate) fn set_perceptron(&mut self, w: Vec<f64>) {
        self.perceptron = Some(w);
    }

    pub(crate) fn finish_step(&mut self, presented: &[usize], selected: &[usize]) {
        if !presented.is_empty() {
            self.history.push(Step {
                presented: presented.to_vec(),
                selected: selected.to_vec(),
            });
        }
        self.t += 1;
    }
}

/// Entropy of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn entropy_of_log(log_p: &[f64]) -> f64 {
    -log_p
        .iter()
        .map(|&l| {
            let p = l.exp();
            if p > 0.0 {
                p * l
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

/// Log-sum-exp normalization in place.
pub(crate) fn normalize_log(log_w: &mut [f64]) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log_w.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for l in log_w.iter_mut() {
        *l -= lse;
    }
}

/// Versioned JSON form of [`UserState`].
#[derive(Serialize, Deserialize)]
struct StateDocument {
    version: u32,
    t: u32,
    p: Vec<f64>,
    log_p: Vec<f64>,
    explored: Vec<usize>,
    history: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perceptron: Option<Vec<f64>>,
}

impl From<UserState> for StateDocument {
    fn from(s: UserState) -> Self {
        StateDocument {
            version: STATE_VERSION,
            t: s.t,
            p: s.p(),
            explored: s.explored_indices(),
            log_p: s.log_p,
            history: s.history,
            perceptron: s.perceptron,
        }
    }
}

impl TryFrom<StateDocument> for UserState {
    type Error = ElicitationError;

    fn try_from(d: StateDocument) -> Result<Self, Self::Error> {
        let invalid = |m: &str| ElicitationError::InvalidState(m.to_string());
        if d.version != STATE_VERSION {
            return Err(invalid("unsupported version"));
        }
        let n = d.log_p.len();
        if d.p.len() != n || n < MIN_CATALOG_SIZE {
            return Err(invalid("preference length"));
        }
        if d.log_p.iter().any(|l| !l.is_finite()) {
            return Err(invalid("non-finite log preference"));
        }
        let mut explored = vec![false; n];
        for &i in &d.explored {
            if i >= n || explored[i] {
                return Err(invalid("explored index"));
            }
            explored[i] = true;
        }
        for step in &d.history {
            if step.presented.iter().chain(&step.selected).any(|&i| i >= n)
                || step.selected.iter().any(|i| !step.presented.contains(i))
            {
                return Err(invalid("history entry"));
            }
        }
        Ok(UserState {
            log_p: d.log_p,
            explored_count: d.explored.len(),
            explored,
            t: d.t,
            history: d.history,
            perceptron: d.perceptron,
        })
    }
}
