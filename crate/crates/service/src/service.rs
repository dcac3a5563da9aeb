//! Session lifecycle independent of the HTTP layer.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use tastebud::catalog::{Catalog, DietType};
use tastebud::elicitation::{
    ElicitationError, ElicitationSession, Phase, Presentation, StepOutcome, UserState,
};
use tastebud::nutrition::{CandidatePool, GoalProfile};
use tastebud::recommender::{baseline_recommend, recommend, DietEngine, RecommendError, RecommendationList};
use tastebud::rng::{derive_seed, stream};
use tastebud::simulation::{acceptance_metrics, AcceptanceMetrics};

use crate::config::ServiceConfig;
use crate::engine::Engines;
use crate::record::{
    EvaluationItem, RecordError, SessionEvent, SessionHeader, SessionRecord, SessionStatus, Source,
    Verdict, LOG_VERSION,
};
use crate::store::{SessionStore, StoreError};

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("unknown diet {0:?}")]
    UnknownDiet(String),
    #[error("no catalog loaded for diet `{0}`")]
    CatalogUnavailable(DietType),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("item {0} was not presented in this step")]
    SelectionNotSubset(String),
    #[error("session is already completed")]
    SessionCompleted,
    #[error("session was abandoned")]
    SessionAbandoned,
    #[error("another step for this session is in flight")]
    ConcurrentStep,
    #[error("session was recorded under config {stored}, current config is {current}")]
    ConfigHashMismatch { stored: String, current: String },
    #[error("session is not completed yet")]
    NotCompleted,
    #[error("item {0} is not part of this evaluation")]
    UnknownEvaluationItem(String),
    #[error("item {0} already has a different verdict")]
    AlreadyJudged(String),
    #[error("replay diverged from the log: {0}")]
    ReplayDivergence(String),
    #[error(transparent)]
    Storage(#[from] StoreError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("engine error: {0}")]
    Engine(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidRequest(_) => "InvalidRequest",
            Self::InvalidProfile(_) => "InvalidProfile",
            Self::UnknownDiet(_) => "UnknownDiet",
            Self::CatalogUnavailable(_) => "CatalogUnavailable",
            Self::UnknownSession(_) => "UnknownSession",
            Self::SelectionNotSubset(_) => "SelectionNotSubset",
            Self::SessionCompleted => "SessionCompleted",
            Self::SessionAbandoned => "SessionAbandoned",
            Self::ConcurrentStep => "ConcurrentStep",
            Self::ConfigHashMismatch { .. } => "ConfigHashMismatch",
            Self::NotCompleted => "NotCompleted",
            Self::UnknownEvaluationItem(_) => "UnknownEvaluationItem",
            Self::AlreadyJudged(_) => "AlreadyJudged",
            Self::ReplayDivergence(_) => "ReplayDivergence",
            Self::Storage(_) => "Storage",
            Self::Record(_) => "CorruptRecord",
            Self::Engine(_) => "Engine",
        }
    }

    /// HTTP status for the error.
    pub fn status(&self) -> u16 {
        match self {
            Self::InvalidRequest(_) | Self::InvalidProfile(_) | Self::UnknownDiet(_) => 400,
            Self::UnknownSession(_) => 404,
            Self::SelectionNotSubset(_) | Self::UnknownEvaluationItem(_) => 422,
            Self::SessionCompleted
            | Self::ConcurrentStep
            | Self::ConfigHashMismatch { .. }
            | Self::NotCompleted
            | Self::AlreadyJudged(_) => 409,
            Self::SessionAbandoned => 410,
            Self::CatalogUnavailable(_) => 503,
            Self::ReplayDivergence(_) | Self::Storage(_) | Self::Record(_) | Self::Engine(_) => 500,
        }
    }
}

impl From<ElicitationError> for ServiceError {
    fn from(e: ElicitationError) -> Self {
        Self::Engine(e.to_string())
    }
}

impl From<RecommendError> for ServiceError {
    fn from(e: RecommendError) -> Self {
        Self::Engine(e.to_string())
    }
}

/// Public view of an item: no embedding is ever exposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub name: String,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    /// 1-based iteration number of this presentation.
    pub iteration: u32,
    pub iterations: u32,
    pub phase: Phase,
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub step: StepView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendations: Option<RecommendationList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total: usize,
    pub yummy: usize,
    pub no_way: usize,
    pub elicited: AcceptanceMetrics,
    pub baseline: Option<AcceptanceMetrics>,
    /// `(elicited - baseline) / baseline` acceptance rate.
    pub relative_improvement: Option<f64>,
}

/// Blinded evaluation screen: items in display order with no source labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationView {
    pub items: Vec<ItemView>,
    pub judged: Vec<String>,
    pub remaining: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvaluationReport>,
}

#[derive(Debug)]
struct Live {
    record: SessionRecord,
    session: Option<ElicitationSession>,
    pool: Option<CandidatePool>,
    /// False when the log was written under another config or diet set.
    replayable: bool,
}

pub struct Service {
    config: ServiceConfig,
    engines: Arc<Engines>,
    store: SessionStore,
    sessions: RwLock<HashMap<String, Arc<Mutex<Live>>>>,
    clock: Clock,
    config_hash: String,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("config_hash", &self.config_hash)
            .field("sessions", &self.sessions.read().len())
            .finish()
    }
}

/// Identity of everything a replay depends on.
pub fn config_hash(config: &ServiceConfig, data_digest: &str) -> String {
    let mut strategy = config.strategy();
    strategy.rng_seed = 0;
    let doc = serde_json::json!({
        "data": data_digest,
        "kernel": config.kernel(),
        "strategy": strategy,
        "iterations": config.iterations,
        "pool_size": config.pool_size,
        "recommendations": config.recommendations,
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

fn item_view(catalog: &Catalog, index: usize) -> ItemView {
    let item = catalog.item(index);
    ItemView {
        id: item.id.clone(),
        name: item.name.clone(),
        image_url: item.image_url.clone(),
    }
}

fn step_view(catalog: &Catalog, p: &Presentation, iteration: u32, iterations: u32) -> StepView {
    StepView {
        iteration,
        iterations,
        phase: p.phase,
        items: p.items.iter().map(|&i| item_view(catalog, i)).collect(),
    }
}

fn ids(catalog: &Catalog, indices: &[usize]) -> Vec<String> {
    indices.iter().map(|&i| catalog.item(i).id.clone()).collect()
}

fn session_seed(global: u64, id: &str) -> u64 {
    derive_seed(global, &[b"session", id.as_bytes()])
}

fn pool_for(engine: &DietEngine, record: &SessionRecord) -> CandidatePool {
    engine.pool(&record.profile, record.pool_size, derive_seed(record.seed, &[b"pool"]))
}

/// Parses a survey payload, distinguishing an unknown diet from other
/// malformed input.
pub fn parse_profile(value: &Value) -> Result<GoalProfile, ServiceError> {
    let mut value = value.clone();
    if let Some(field) = value.get_mut("diet") {
        if let Some(name) = field.as_str() {
            let diet: DietType = name.parse().map_err(|_| ServiceError::UnknownDiet(name.to_string()))?;
            // accept the same spellings as the CLI ("none", "No restrictions")
            *field = Value::String(diet.as_str().to_string());
        }
    }
    serde_json::from_value(value).map_err(|e| ServiceError::InvalidProfile(e.to_string()))
}

/// Rebuilds the live session by re-running every answered step of `record`,
/// checking each regenerated presentation against the log.
fn rebuild(engine: &DietEngine, record: &SessionRecord) -> Result<ElicitationSession, ServiceError> {
    let space = engine.space();
    let catalog = engine.catalog();
    let mut session =
        ElicitationSession::start(space, record.strategy.clone(), record.seed, record.iterations)?;
    for entry in &record.entries {
        let Some(pending) = session.pending() else {
            return Err(ServiceError::ReplayDivergence(format!(
                "log has iteration {} beyond the end",
                entry.t
            )));
        };
        if ids(catalog, &pending.items) != entry.presented {
            return Err(ServiceError::ReplayDivergence(format!(
                "presentation {} differs",
                entry.t
            )));
        }
        let Some(selected) = &entry.selected else {
            break;
        };
        let indices = selected
            .iter()
            .map(|id| {
                catalog
                    .index_of(id)
                    .ok_or_else(|| ServiceError::ReplayDivergence(format!("unknown item {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        session.submit(space, &indices)?;
    }
    Ok(session)
}

impl Service {
    pub fn new(config: ServiceConfig, engines: Arc<Engines>, clock: Clock) -> Result<Self, ServiceError> {
        let store = SessionStore::open(&config.data_dir)?;
        let config_hash = config_hash(&config, engines.data_digest());
        let service = Self {
            config,
            engines,
            store,
            sessions: RwLock::new(HashMap::new()),
            clock,
            config_hash,
        };
        service.recover()?;
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn engines(&self) -> &Engines {
        &self.engines
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn initial_entropy(&self, diet: DietType) -> f64 {
        // computed the same way a fresh session computes it
        self.engines
            .get(diet)
            .and_then(|e| UserState::new(e.catalog().len()).ok())
            .map_or(0.0, |s| s.entropy())
    }

    /// Loads every stored log; open sessions are replayed and any step lost
    /// between two writes is regenerated.
    fn recover(&self) -> Result<(), ServiceError> {
        for id in self.store.list()? {
            let events = match self.store.read(&id) {
                Ok(e) => e,
                Err(e) => {
                    tracing::warn!(session = %id, error = %e, "skipping unreadable session log");
                    continue;
                }
            };
            let diet = match events.first() {
                Some(SessionEvent::Header(h)) => h.profile.diet,
                _ => {
                    tracing::warn!(session = %id, "skipping log without header");
                    continue;
                }
            };
            let record = match SessionRecord::from_events(&events, self.initial_entropy(diet)) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(session = %id, error = %e, "skipping inconsistent session log");
                    continue;
                }
            };
            let live = self.revive(record)?;
            self.sessions.write().insert(id, Arc::new(Mutex::new(live)));
        }
        Ok(())
    }

    fn revive(&self, mut record: SessionRecord) -> Result<Live, ServiceError> {
        let engine = match self.engines.get(record.profile.diet) {
            Some(e) if record.config_hash == self.config_hash => e,
            _ => {
                return Ok(Live {
                    record,
                    session: None,
                    pool: None,
                    replayable: false,
                })
            }
        };
        let pool = pool_for(engine, &record);
        if record.status != SessionStatus::AwaitingChoices {
            return Ok(Live {
                record,
                session: None,
                pool: Some(pool),
                replayable: true,
            });
        }
        let session = rebuild(engine, &record)?;
        let now = (self.clock)();
        let mut events = Vec::new();
        if session.is_finished() {
            events.push(self.completion(engine, &session, &pool, &record, now)?);
        } else if record.pending().is_none() {
            let p = session.pending().expect("open session");
            events.push(SessionEvent::Presented {
                t: session.iteration(),
                phase: p.phase,
                items: ids(engine.catalog(), &p.items),
                at_ms: now,
            });
        }
        if !events.is_empty() {
            self.store.append(&record.session_id, &events)?;
            for e in &events {
                record.apply(e)?;
            }
        }
        let session = (record.status == SessionStatus::AwaitingChoices).then_some(session);
        Ok(Live {
            record,
            session,
            pool: Some(pool),
            replayable: true,
        })
    }

    fn completion(
        &self,
        engine: &DietEngine,
        session: &ElicitationSession,
        pool: &CandidatePool,
        record: &SessionRecord,
        now: u64,
    ) -> Result<SessionEvent, ServiceError> {
        let recommendations = recommend(session.state(), pool, engine.catalog(), record.recommendation_count)?;
        Ok(SessionEvent::Completed {
            at_ms: now,
            recommendations,
            state: session.state().to_json(),
        })
    }

    fn engine_for(&self, diet: DietType) -> Result<&DietEngine, ServiceError> {
        self.engines.get(diet).ok_or(ServiceError::CatalogUnavailable(diet))
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Live>>, ServiceError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Starts a session from a survey payload.
    pub fn create_session(&self, profile: &Value) -> Result<CreateResponse, ServiceError> {
        let profile = parse_profile(profile)?;
        self.create_with_profile(profile)
    }

    pub fn create_with_profile(&self, profile: GoalProfile) -> Result<CreateResponse, ServiceError> {
        let engine = self.engine_for(profile.diet)?;
        let id = uuid::Uuid::new_v4().to_string();
        let seed = session_seed(self.config.seed, &id);
        let mut strategy = self.config.strategy();
        strategy.rng_seed = seed;
        let session = ElicitationSession::start(engine.space(), strategy.clone(), seed, self.config.iterations)?;
        let now = (self.clock)();
        let header = SessionHeader {
            version: LOG_VERSION,
            session_id: id.clone(),
            created_at_ms: now,
            profile,
            strategy,
            iterations: self.config.iterations,
            pool_size: self.config.pool_size,
            recommendations: self.config.recommendations,
            seed,
            config_hash: self.config_hash.clone(),
        };
        let first = session.pending().expect("fresh session has a presentation");
        let presented = SessionEvent::Presented {
            t: 1,
            phase: first.phase,
            items: ids(engine.catalog(), &first.items),
            at_ms: now,
        };
        let mut record = SessionRecord::from_header(&header, session.state().entropy());
        record.apply(&presented)?;
        let step = step_view(engine.catalog(), first, 1, self.config.iterations);
        self.store.create(&id, &[SessionEvent::Header(header), presented])?;
        let pool = pool_for(engine, &record);
        self.sessions.write().insert(
            id.clone(),
            Arc::new(Mutex::new(Live {
                record,
                session: Some(session),
                pool: Some(pool),
                replayable: true,
            })),
        );
        Ok(CreateResponse { session_id: id, step })
    }

    fn expired(&self, record: &SessionRecord, now: u64) -> bool {
        record.status == SessionStatus::AwaitingChoices
            && now.saturating_sub(record.last_activity_ms) > self.config.session_ttl_secs.saturating_mul(1000)
    }

    fn abandon(&self, live: &mut Live, now: u64) -> Result<(), ServiceError> {
        let event = SessionEvent::Abandoned { at_ms: now };
        self.store.append(&live.record.session_id, std::slice::from_ref(&event))?;
        live.record.apply(&event)?;
        live.session = None;
        Ok(())
    }

    fn current_response(&self, live: &Live) -> Result<SubmitResponse, ServiceError> {
        match live.record.status {
            SessionStatus::Completed => Ok(SubmitResponse {
                status: SessionStatus::Completed,
                step: None,
                recommendations: live.record.recommendations.clone(),
            }),
            SessionStatus::Abandoned => Err(ServiceError::SessionAbandoned),
            SessionStatus::AwaitingChoices => {
                let engine = self.engine_for(live.record.profile.diet)?;
                let session = live.session.as_ref().expect("open session is live");
                let p = session.pending().expect("open session has a presentation");
                Ok(SubmitResponse {
                    status: SessionStatus::AwaitingChoices,
                    step: Some(step_view(engine.catalog(), p, session.iteration(), session.iterations())),
                    recommendations: None,
                })
            }
        }
    }

    /// Answers the pending presentation. An empty selection is "none of
    /// these". Repeating the last request's `nonce` returns the current view
    /// without applying anything.
    pub fn submit(
        &self,
        id: &str,
        selected: &[String],
        nonce: Option<&str>,
    ) -> Result<SubmitResponse, ServiceError> {
        let cell = self.lookup(id)?;
        let mut guard = cell.try_lock().ok_or(ServiceError::ConcurrentStep)?;
        let live = &mut *guard;
        if !live.replayable {
            return Err(ServiceError::ConfigHashMismatch {
                stored: live.record.config_hash.clone(),
                current: self.config_hash.clone(),
            });
        }
        let retry = nonce.is_some() && nonce == live.record.last_nonce();
        match live.record.status {
            SessionStatus::Completed if retry => return self.current_response(live),
            SessionStatus::Completed => return Err(ServiceError::SessionCompleted),
            SessionStatus::Abandoned => return Err(ServiceError::SessionAbandoned),
            SessionStatus::AwaitingChoices => {}
        }
        let now = (self.clock)();
        if self.expired(&live.record, now) {
            self.abandon(live, now)?;
            return Err(ServiceError::SessionAbandoned);
        }
        if retry {
            return self.current_response(live);
        }

        let engine = self.engine_for(live.record.profile.diet)?;
        let catalog = engine.catalog();
        let mut session = live.session.clone().expect("open session is live");
        let pending = session.pending().expect("open session has a presentation").clone();
        let mut chosen: Vec<usize> = Vec::with_capacity(selected.len());
        let mut chosen_ids: Vec<String> = Vec::with_capacity(selected.len());
        for sid in selected {
            let index = catalog
                .index_of(sid)
                .filter(|i| pending.items.contains(i))
                .ok_or_else(|| ServiceError::SelectionNotSubset(sid.clone()))?;
            if !chosen.contains(&index) {
                chosen.push(index);
                chosen_ids.push(sid.clone());
            }
        }
        let t = session.iteration();
        let outcome = session.submit(engine.space(), &chosen)?;
        let mut events = vec![SessionEvent::Answered {
            t,
            selected: chosen_ids,
            at_ms: now,
            nonce: nonce.map(str::to_string),
            entropy: session.state().entropy(),
        }];
        match &outcome {
            StepOutcome::Next(p) => events.push(SessionEvent::Presented {
                t: t + 1,
                phase: p.phase,
                items: ids(catalog, &p.items),
                at_ms: now,
            }),
            StepOutcome::Finished => {
                let pool = live.pool.get_or_insert_with(|| pool_for(engine, &live.record));
                events.push(self.completion(engine, &session, pool, &live.record, now)?);
            }
        }
        // durable before anything changes in memory or is returned
        self.store.append(id, &events)?;
        for e in &events {
            live.record.apply(e)?;
        }
        live.session = match outcome {
            StepOutcome::Next(_) => Some(session),
            StepOutcome::Finished => None,
        };
        self.current_response(live)
    }

    /// Full record. Expired sessions are marked abandoned first.
    pub fn get(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        let cell = self.lookup(id)?;
        let mut live = cell.lock();
        let now = (self.clock)();
        if live.replayable && self.expired(&live.record, now) {
            self.abandon(&mut live, now)?;
        }
        Ok(live.record.clone())
    }

    /// Reconstructs the state a record describes, from its answers alone.
    pub fn replay(&self, record: &SessionRecord) -> Result<UserState, ServiceError> {
        if record.config_hash != self.config_hash {
            return Err(ServiceError::ConfigHashMismatch {
                stored: record.config_hash.clone(),
                current: self.config_hash.clone(),
            });
        }
        let engine = self.engine_for(record.profile.diet)?;
        Ok(rebuild(engine, record)?.into_state())
    }

    /// Marks every idle open session abandoned; returns how many.
    pub fn sweep_idle(&self) -> usize {
        let now = (self.clock)();
        let cells: Vec<Arc<Mutex<Live>>> = self.sessions.read().values().cloned().collect();
        let mut count = 0;
        for cell in cells {
            // a session mid-step is active by definition
            let Some(mut live) = cell.try_lock() else {
                continue;
            };
            if live.replayable && self.expired(&live.record, now) {
                match self.abandon(&mut live, now) {
                    Ok(()) => count += 1,
                    Err(e) => tracing::warn!(error = %e, "could not mark session abandoned"),
                }
            }
        }
        count
    }

    fn open_evaluation(&self, live: &mut Live) -> Result<(), ServiceError> {
        if live.record.evaluation.is_some() {
            return Ok(());
        }
        if live.record.status != SessionStatus::Completed {
            return Err(ServiceError::NotCompleted);
        }
        if !live.replayable {
            return Err(ServiceError::ConfigHashMismatch {
                stored: live.record.config_hash.clone(),
                current: self.config_hash.clone(),
            });
        }
        let engine = self.engine_for(live.record.profile.diet)?;
        let catalog = engine.catalog();
        let elicited = live.record.recommendations.clone().unwrap_or(RecommendationList { items: vec![] });
        let pool = live.pool.get_or_insert_with(|| pool_for(engine, &live.record));
        let shown: Vec<&str> = elicited.items.iter().map(|r| r.id.as_str()).collect();
        let rest = CandidatePool::from_entries(
            pool.entries()
                .iter()
                .copied()
                .filter(|e| !shown.contains(&catalog.item(e.index).id.as_str()))
                .collect(),
        );
        let mut items: Vec<EvaluationItem> = shown
            .iter()
            .map(|id| EvaluationItem {
                id: id.to_string(),
                source: Source::Elicited,
            })
            .collect();
        if !rest.is_empty() {
            let baseline = baseline_recommend(
                &rest,
                catalog,
                live.record.recommendation_count,
                derive_seed(live.record.seed, &[b"baseline"]),
            )?;
            items.extend(baseline.items.into_iter().map(|r| EvaluationItem {
                id: r.id,
                source: Source::Baseline,
            }));
        }
        items.shuffle(&mut stream(live.record.seed, &[b"evaluation"]));
        let event = SessionEvent::EvaluationOpened {
            at_ms: (self.clock)(),
            items,
        };
        self.store.append(&live.record.session_id, std::slice::from_ref(&event))?;
        live.record.apply(&event)?;
        Ok(())
    }

    fn evaluation_view(&self, live: &Live) -> Result<EvaluationView, ServiceError> {
        let engine = self.engine_for(live.record.profile.diet)?;
        let catalog = engine.catalog();
        let eval = live.record.evaluation.as_ref().ok_or(ServiceError::NotCompleted)?;
        let items = eval
            .items
            .iter()
            .filter_map(|it| catalog.index_of(&it.id).map(|i| item_view(catalog, i)))
            .collect();
        let judged: Vec<String> = eval
            .items
            .iter()
            .filter(|it| eval.verdicts.contains_key(&it.id))
            .map(|it| it.id.clone())
            .collect();
        let report = eval.is_complete().then(|| {
            let outcomes = |source: Source| -> Vec<bool> {
                eval.items
                    .iter()
                    .filter(|it| it.source == source)
                    .map(|it| eval.verdicts[&it.id] == Verdict::Yummy)
                    .collect()
            };
            let elicited = acceptance_metrics(&outcomes(Source::Elicited)).unwrap_or(AcceptanceMetrics {
                rate: 0.0,
                mae: 1.0,
                rmse: 1.0,
            });
            let baseline = acceptance_metrics(&outcomes(Source::Baseline)).ok();
            let yummy = eval.verdicts.values().filter(|&&v| v == Verdict::Yummy).count();
            EvaluationReport {
                total: eval.verdicts.len(),
                yummy,
                no_way: eval.verdicts.len() - yummy,
                elicited,
                relative_improvement: baseline
                    .filter(|b| b.rate > 0.0)
                    .map(|b| (elicited.rate - b.rate) / b.rate),
                baseline,
            }
        });
        Ok(EvaluationView {
            remaining: eval.items.len() - judged.len(),
            items,
            judged,
            report,
        })
    }

    /// The blinded evaluation screen, opened on first request.
    pub fn evaluation(&self, id: &str) -> Result<EvaluationView, ServiceError> {
        let cell = self.lookup(id)?;
        let mut live = cell.lock();
        self.open_evaluation(&mut live)?;
        self.evaluation_view(&live)
    }

    /// Records verdicts. Re-sending an identical verdict is a no-op.
    pub fn judge(&self, id: &str, verdicts: &[(String, Verdict)]) -> Result<EvaluationView, ServiceError> {
        let cell = self.lookup(id)?;
        let mut guard = cell.try_lock().ok_or(ServiceError::ConcurrentStep)?;
        let live = &mut *guard;
        self.open_evaluation(live)?;
        let eval = live.record.evaluation.as_ref().expect("opened");
        let now = (self.clock)();
        let mut events = Vec::new();
        let mut batch: HashMap<&str, Verdict> = HashMap::new();
        for (item, verdict) in verdicts {
            if !eval.items.iter().any(|i| &i.id == item) {
                return Err(ServiceError::UnknownEvaluationItem(item.clone()));
            }
            let previous = eval.verdicts.get(item).copied().or_else(|| batch.get(item.as_str()).copied());
            match previous {
                Some(v) if v == *verdict => {}
                Some(_) => return Err(ServiceError::AlreadyJudged(item.clone())),
                None => {
                    batch.insert(item, *verdict);
                    events.push(SessionEvent::Judged {
                        at_ms: now,
                        id: item.clone(),
                        verdict: *verdict,
                    });
                }
            }
        }
        if !events.is_empty() {
            self.store.append(id, &events)?;
            for e in &events {
                live.record.apply(e)?;
            }
        }
        self.evaluation_view(live)
    }
}
