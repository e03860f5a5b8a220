//! Client for completions servers that echo prompt log-probabilities.
//!
//! The prompt sent is `context + " " + question` with `max_tokens: 0` and
//! `echo: true`. The question span is every returned token whose character
//! offset is at or past the end of the context, so the separator token and
//! any token straddling the separator count toward the question.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendMeta, ScoreError, ScoreRequest, ScoreResult, Scorer};

const COMPLETIONS_PATH: &str = "/v1/completions";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure (refused, reset, timed out).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure(pub String);

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportFailure>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportFailure> {
        (**self).post_json(url, body, timeout)
    }
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> crate::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| crate::Error::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportFailure> {
        let response = self
            .client
            .post(url)
            .timeout(timeout)
            .json(body)
            .send()
            .map_err(|e| TransportFailure(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportFailure(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

pub struct RemoteScorer {
    url: String,
    model_name: String,
    timeout: Duration,
    max_retries: u32,
    backoff: Duration,
    transport: Box<dyn Transport>,
}

impl RemoteScorer {
    pub fn new(
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> crate::Result<Self> {
        Ok(Self::with_transport(
            endpoint,
            model_name,
            timeout,
            max_retries,
            Box::new(ReqwestTransport::new()?),
        ))
    }

    pub fn with_transport(
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
        timeout: Duration,
        max_retries: u32,
        transport: Box<dyn Transport>,
    ) -> Self {
        let endpoint = endpoint.into();
        Self {
            url: format!("{}{COMPLETIONS_PATH}", endpoint.trim_end_matches('/')),
            model_name: model_name.into(),
            timeout,
            max_retries,
            backoff: Duration::from_millis(250),
            transport,
        }
    }

    /// Base delay; attempt `n` waits `base * 2^(n-1)` before retrying.
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_body(&self, request: &ScoreRequest) -> serde_json::Value {
        json!({
            "model": self.model_name,
            "prompt": format!("{} {}", request.context, request.question),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0,
        })
    }
}

fn retriable_status(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

impl Scorer for RemoteScorer {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, ScoreError> {
        request.validate()?;
        let body = self.request_body(request);
        let mut retries = 0u32;
        loop {
            let failure = match self.transport.post_json(&self.url, &body, self.timeout) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let mut result = parse_completion(&resp.body, request)?;
                    result.backend_meta.retries = retries;
                    return Ok(result);
                }
                Ok(resp) if retriable_status(resp.status) => format!("HTTP {}", resp.status),
                Ok(resp) => {
                    return Err(ScoreError::Protocol(format!(
                        "HTTP {}: {}",
                        resp.status,
                        resp.body.chars().take(200).collect::<String>()
                    )))
                }
                Err(TransportFailure(message)) => message,
            };
            if retries >= self.max_retries {
                return Err(ScoreError::Transport {
                    message: failure,
                    attempts: retries + 1,
                });
            }
            log::debug!("scorer request failed ({failure}); retry {}", retries + 1);
            std::thread::sleep(self.backoff.saturating_mul(1u32 << retries.min(16)));
            retries += 1;
        }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    token_logprobs: Option<Vec<Option<f64>>>,
    text_offset: Option<Vec<usize>>,
}

/// Extracts the question-span average from an echo-logprobs response body.
pub fn parse_completion(body: &str, request: &ScoreRequest) -> Result<ScoreResult, ScoreError> {
    let response: CompletionResponse =
        serde_json::from_str(body).map_err(|e| ScoreError::Protocol(format!("bad JSON: {e}")))?;
    let choice = response
        .choices
        .first()
        .ok_or_else(|| ScoreError::Protocol("response has no choices".into()))?;
    let logprobs = choice
        .logprobs
        .as_ref()
        .ok_or_else(|| ScoreError::Protocol("response has no logprobs".into()))?;
    let values = logprobs
        .token_logprobs
        .as_ref()
        .ok_or_else(|| ScoreError::Protocol("response has no token_logprobs".into()))?;
    let offsets = logprobs
        .text_offset
        .as_ref()
        .ok_or_else(|| ScoreError::Protocol("response has no text_offset".into()))?;
    if values.len() != offsets.len() {
        return Err(ScoreError::Protocol(format!(
            "token_logprobs ({}) and text_offset ({}) differ in length",
            values.len(),
            offsets.len()
        )));
    }

    let boundary = request.context.chars().count();
    let start = offsets
        .iter()
        .position(|&o| o >= boundary)
        .ok_or_else(|| ScoreError::Protocol("question span is empty".into()))?;
    let span: Vec<f64> = values[start..]
        .iter()
        .take(request.question_token_cap)
        .enumerate()
        .map(|(i, v)| {
            v.filter(|v| v.is_finite()).ok_or_else(|| {
                ScoreError::Protocol(format!("missing log-probability for token {}", start + i))
            })
        })
        .collect::<Result<_, _>>()?;

    Ok(ScoreResult {
        avg_logprob: span.iter().sum::<f64>() / span.len() as f64,
        token_count: span.len(),
        backend_meta: BackendMeta {
            backend: "remote".into(),
            ..Default::default()
        },
    })
}
