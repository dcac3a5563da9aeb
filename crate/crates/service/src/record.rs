//! Session log events and the record folded from them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use tastebud::elicitation::{Phase, StrategyConfig};
use tastebud::nutrition::GoalProfile;
use tastebud::recommender::RecommendationList;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionStatus {
    AwaitingChoices,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub version: u32,
    pub session_id: String,
    pub created_at_ms: u64,
    pub profile: GoalProfile,
    pub strategy: StrategyConfig,
    pub iterations: u32,
    pub pool_size: usize,
    pub recommendations: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Elicited,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yummy,
    NoWay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationItem {
    pub id: String,
    pub source: Source,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Header(SessionHeader),
    Presented {
        t: u32,
        phase: Phase,
        items: Vec<String>,
        at_ms: u64,
    },
    Answered {
        t: u32,
        selected: Vec<String>,
        at_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nonce: Option<String>,
        /// Entropy of `p` after this update.
        entropy: f64,
    },
    Completed {
        at_ms: u64,
        recommendations: RecommendationList,
        /// Serialized terminal state, kept verbatim for replay audits.
        state: String,
    },
    Abandoned {
        at_ms: u64,
    },
    EvaluationOpened {
        at_ms: u64,
        items: Vec<EvaluationItem>,
    },
    Judged {
        at_ms: u64,
        id: String,
        verdict: Verdict,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub t: u32,
    pub phase: Phase,
    pub presented: Vec<String>,
    pub selected: Option<Vec<String>>,
    pub presented_at_ms: u64,
    pub answered_at_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<String>,
}

/// Evaluation bookkeeping. The item sources never leave the server.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub items: Vec<EvaluationItem>,
    pub verdicts: BTreeMap<String, Verdict>,
}

impl Evaluation {
    pub fn is_complete(&self) -> bool {
        !self.items.is_empty() && self.verdicts.len() == self.items.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at_ms: u64,
    pub profile: GoalProfile,
    pub strategy: StrategyConfig,
    pub iterations: u32,
    pub pool_size: usize,
    pub recommendation_count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub status: SessionStatus,
    pub entries: Vec<IterationEntry>,
    /// Entropy after 0, 1, ... answered iterations.
    pub entropy: Vec<f64>,
    pub recommendations: Option<RecommendationList>,
    pub final_state: Option<String>,
    pub last_activity_ms: u64,
    #[serde(skip)]
    pub evaluation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("log does not start with a header")]
    MissingHeader,
    #[error("unsupported log version {0}")]
    Version(u32),
    #[error("event out of order: {0}")]
    OutOfOrder(String),
}

impl SessionRecord {
    pub fn from_header(h: &SessionHeader, initial_entropy: f64) -> Self {
        Self {
            session_id: h.session_id.clone(),
            created_at_ms: h.created_at_ms,
            profile: h.profile,
            strategy: h.strategy.clone(),
            iterations: h.iterations,
            pool_size: h.pool_size,
            recommendation_count: h.recommendations,
            seed: h.seed,
            config_hash: h.config_hash.clone(),
            status: SessionStatus::AwaitingChoices,
            entries: Vec::new(),
            entropy: vec![initial_entropy],
            recommendations: None,
            final_state: None,
            last_activity_ms: h.created_at_ms,
            evaluation: None,
        }
    }

    /// Folds a log. `initial_entropy` is `ln |S|` for the session's diet, which
    /// the log does not repeat.
    pub fn from_events(events: &[SessionEvent], initial_entropy: f64) -> Result<Self, RecordError> {
        let Some(SessionEvent::Header(h)) = events.first() else {
            return Err(RecordError::MissingHeader);
        };
        if h.version != LOG_VERSION {
            return Err(RecordError::Version(h.version));
        }
        let mut record = Self::from_header(h, initial_entropy);
        for e in &events[1..] {
            record.apply(e)?;
        }
        Ok(record)
    }

    pub fn header(&self) -> SessionHeader {
        SessionHeader {
            version: LOG_VERSION,
            session_id: self.session_id.clone(),
            created_at_ms: self.created_at_ms,
            profile: self.profile,
            strategy: self.strategy.clone(),
            iterations: self.iterations,
            pool_size: self.pool_size,
            recommendations: self.recommendation_count,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }

    /// The open (unanswered) entry, if any.
    pub fn pending(&self) -> Option<&IterationEntry> {
        self.entries.last().filter(|e| e.selected.is_none())
    }

    pub fn answered(&self) -> impl Iterator<Item = &IterationEntry> {
        self.entries.iter().filter(|e| e.selected.is_some())
    }

    pub fn last_nonce(&self) -> Option<&str> {
        self.answered().last().and_then(|e| e.nonce.as_deref())
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), RecordError> {
        let order = |m: &str| Err(RecordError::OutOfOrder(m.to_string()));
        match event {
            SessionEvent::Header(_) => return order("second header"),
            SessionEvent::Presented { t, phase, items, at_ms } => {
                if self.status != SessionStatus::AwaitingChoices || self.pending().is_some() {
                    return order("presentation while another is open");
                }
                let expected = self.entries.len() as u32 + 1;
                if *t != expected {
                    return order(&format!("presentation {t}, expected {expected}"));
                }
                self.entries.push(IterationEntry {
                    t: *t,
                    phase: *phase,
                    presented: items.clone(),
                    selected: None,
                    presented_at_ms: *at_ms,
                    answered_at_ms: None,
                    nonce: None,
                });
                self.last_activity_ms = *at_ms;
            }
            SessionEvent::Answered { t, selected, at_ms, nonce, entropy } => {
                let Some(entry) = self.entries.last_mut().filter(|e| e.selected.is_none()) else {
                    return order("answer without presentation");
                };
                if entry.t != *t {
                    return order(&format!("answer {t} for presentation {}", entry.t));
                }
                entry.selected = Some(selected.clone());
                entry.answered_at_ms = Some(*at_ms);
                entry.nonce = nonce.clone();
                self.entropy.push(*entropy);
                self.last_activity_ms = *at_ms;
            }
            SessionEvent::Completed { at_ms, recommendations, state } => {
                if self.pending().is_some() || self.status != SessionStatus::AwaitingChoices {
                    return order("completion with an open presentation");
                }
                self.status = SessionStatus::Completed;
                self.recommendations = Some(recommendations.clone());
                self.final_state = Some(state.clone());
                self.last_activity_ms = *at_ms;
            }
            SessionEvent::Abandoned { at_ms } => {
                if self.status != SessionStatus::AwaitingChoices {
                    return order("abandoning a closed session");
                }
                self.status = SessionStatus::Abandoned;
                self.last_activity_ms = *at_ms;
            }
            SessionEvent::EvaluationOpened { at_ms, items } => {
                if self.status != SessionStatus::Completed || self.evaluation.is_some() {
                    return order("evaluation before completion");
                }
                self.evaluation = Some(Evaluation {
                    items: items.clone(),
                    verdicts: BTreeMap::new(),
                });
                self.last_activity_ms = *at_ms;
            }
            SessionEvent::Judged { at_ms, id, verdict } => {
                let Some(eval) = self.evaluation.as_mut() else {
                    return order("verdict before evaluation");
                };
                if !eval.items.iter().any(|i| &i.id == id) {
                    return order(&format!("verdict for unknown item {id}"));
                }
                eval.verdicts.insert(id.clone(), *verdict);
                self.last_activity_ms = *at_ms;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tastebud::catalog::DietType;

    fn header() -> SessionHeader {
        SessionHeader {
            version: LOG_VERSION,
            session_id: "s".into(),
            created_at_ms: 5,
            profile: GoalProfile::maintain_all(DietType::Vegan),
            strategy: StrategyConfig::default(),
            iterations: 3,
            pool_size: 50,
            recommendations: 10,
            seed: 1,
            config_hash: "h".into(),
        }
    }

    fn presented(t: u32) -> SessionEvent {
        SessionEvent::Presented {
            t,
            phase: Phase::for_iteration(t),
            items: vec!["a".into(), "b".into()],
            at_ms: 10 * t as u64,
        }
    }

    fn answered(t: u32) -> SessionEvent {
        SessionEvent::Answered {
            t,
            selected: vec!["a".into()],
            at_ms: 10 * t as u64 + 1,
            nonce: None,
            entropy: 1.0,
        }
    }

    #[test]
    fn fold_and_pending() {
        let events = vec![SessionEvent::Header(header()), presented(1), answered(1), presented(2)];
        let r = SessionRecord::from_events(&events, 2.0).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.pending().unwrap().t, 2);
        assert_eq!(r.entropy, [2.0, 1.0]);
        assert_eq!(r.status, SessionStatus::AwaitingChoices);
        assert_eq!(r.last_activity_ms, 20);
    }

    #[test]
    fn rejects_out_of_order() {
        let bad = vec![SessionEvent::Header(header()), presented(2)];
        assert!(SessionRecord::from_events(&bad, 0.0).is_err());
        let bad = vec![SessionEvent::Header(header()), answered(1)];
        assert!(SessionRecord::from_events(&bad, 0.0).is_err());
        assert_eq!(
            SessionRecord::from_events(&[presented(1)], 0.0),
            Err(RecordError::MissingHeader)
        );
    }

    #[test]
    fn event_json_is_tagged() {
        let line = serde_json::to_string(&answered(3)).unwrap();
        assert!(line.starts_with(r#"{"event":"answered","t":3"#), "{line}");
        let back: SessionEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, answered(3));
    }
}
