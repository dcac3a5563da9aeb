//! HTTP session service, durable session logs and the command-line tools
//! built on `tastebud`.

pub mod config;
pub mod engine;
pub mod http;
pub mod record;
pub mod service;
pub mod store;

pub use config::{ConfigError, ServiceConfig};
pub use engine::{Engines, EngineError};
pub use record::{SessionEvent, SessionRecord, SessionStatus, Verdict};
pub use service::{
    config_hash, parse_profile, system_clock, Clock, CreateResponse, EvaluationReport, EvaluationView,
    ItemView, Service, ServiceError, StepView, SubmitResponse,
};
pub use store::{SessionStore, StoreError};
