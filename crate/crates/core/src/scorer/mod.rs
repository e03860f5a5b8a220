//! Query-likelihood scoring: the average per-token log-probability of a
//! question given a rendered prompt.

mod batch;
mod cache;
mod mock;
mod remote;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{score_batch, BatchOptions};
pub use cache::{cache_key, ScoreCache};
pub use mock::{score_mock, MockScorer};
pub use remote::{
    parse_completion, HttpResponse, RemoteScorer, ReqwestTransport, Transport, TransportFailure,
};

/// Default cap on the number of question tokens that are averaged.
pub const DEFAULT_QUESTION_TOKEN_CAP: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScoreRequest {
    /// Rendered prompt, passage included.
    pub context: String,
    pub question: String,
    pub question_token_cap: usize,
}

impl ScoreRequest {
    pub fn new(context: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            context: context.into(),
            question: question.into(),
            question_token_cap: DEFAULT_QUESTION_TOKEN_CAP,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.question_token_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.context.trim().is_empty() {
            return Err(ScoreError::InvalidRequest("empty context".into()));
        }
        if self.question.trim().is_empty() {
            return Err(ScoreError::InvalidRequest("empty question".into()));
        }
        if self.question_token_cap == 0 {
            return Err(ScoreError::InvalidRequest(
                "question token cap must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub backend: String,
    pub retries: u32,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub avg_logprob: f64,
    pub token_count: usize,
    pub backend_meta: BackendMeta,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    /// Connection failures, timeouts and retriable HTTP statuses, after retries ran out.
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid score request: {0}")]
    InvalidRequest(String),

    #[error("interrupted before scoring")]
    Interrupted,
}

pub trait Scorer: Send + Sync {
    /// Identifies the model in cache keys.
    fn model_name(&self) -> &str;

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, ScoreError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub backend: Backend,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub parallelism: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            endpoint: None,
            model_name: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            parallelism: 16,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.parallelism == 0 {
            return Err(crate::Error::Config(
                "scorer parallelism must be >= 1".into(),
            ));
        }
        if self.backend == Backend::Remote {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(crate::Error::Config(
                    "remote scorer needs an endpoint".into(),
                ));
            }
            if self.model_name.as_deref().is_none_or(str::is_empty) {
                return Err(crate::Error::Config(
                    "remote scorer needs a model name".into(),
                ));
            }
        }
        Ok(())
    }

    /// Builds the configured backend.
    pub fn build(&self) -> crate::Result<Box<dyn Scorer>> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Mock => Box::new(MockScorer),
            Backend::Remote => Box::new(RemoteScorer::new(
                self.endpoint.clone().unwrap_or_default(),
                self.model_name.clone().unwrap_or_default(),
                self.timeout,
                self.max_retries,
            )?),
        })
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
