use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::Value;
use thiserror::Error;

use spatial_core::protocol::{
    InjectMode, ToolRequest, ToolResponse, TransportError, ATOMIC_PATH, BACKEND_ENV, HEALTH_PATH, INJECT_HEADER,
};
use spatial_core::tools::{encode_png_b64, AtomicOutput, AtomicRequest, Backend, ToolError};

/// Deadline used when the caller sets no time budget.
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(10);

/// Atomics that read pixels and therefore always receive the raster inline.
const PIXEL_ATOMICS: [&str; 2] = ["render", "compute"];

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("cannot build HTTP client: {0}")]
    Http(#[from] reqwest::Error),
}

/// Retries apply to connection faults only, never to application errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff: Duration::from_millis(25) }
    }
}

/// Tool backend reached over HTTP.
///
/// Request ids combine a per-instance nonce with a counter, so a retried
/// request keeps its id and the server can answer it at most once.
#[derive(Debug)]
pub struct RemoteBackend {
    base: String,
    client: Client,
    retry: RetryPolicy,
    default_deadline: Duration,
    nonce: u64,
    next_id: AtomicU64,
}

impl RemoteBackend {
    pub fn new(endpoint: &str) -> Result<Self, ClientError> {
        let base = endpoint.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClientError::InvalidEndpoint(endpoint.to_string()));
        }
        let nonce = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
            ^ u64::from(std::process::id()).rotate_left(32);
        Ok(Self {
            base,
            client: Client::builder().build()?,
            retry: RetryPolicy::default(),
            default_deadline: DEFAULT_DEADLINE,
            nonce,
            next_id: AtomicU64::new(0),
        })
    }

    /// Backend at the endpoint named by the `SPATIALBOX_BACKEND` variable, if set.
    pub fn from_env() -> Option<Result<Self, ClientError>> {
        std::env::var(BACKEND_ENV).ok().filter(|v| !v.is_empty()).map(|v| Self::new(&v))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_default_deadline(mut self, deadline: Duration) -> Self {
        self.default_deadline = deadline;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn fresh_id(&self) -> String {
        format!("{:016x}-{}", self.nonce, self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn health(&self) -> Result<Value, TransportError> {
        let resp = self
            .client
            .get(format!("{}{HEALTH_PATH}", self.base))
            .timeout(self.default_deadline)
            .send()
            .map_err(|e| classify(&e))?;
        resp.json().map_err(|e| TransportError::MalformedResponse(e.to_string()))
    }

    /// Sends one request, retrying connection faults until the request's
    /// deadline. The whole call never runs past `deadline_ms` plus one backoff.
    pub fn call(&self, request: &ToolRequest, inject: Option<InjectMode>) -> Result<ToolResponse, TransportError> {
        let started = Instant::now();
        let deadline = Duration::from_millis(request.deadline_ms);
        let url = format!("{}{ATOMIC_PATH}", self.base);
        let mut last = TransportError::ConnectFailed("no attempt made".into());
        for attempt in 0..self.retry.max_attempts.max(1) {
            if attempt > 0 {
                let left = deadline.saturating_sub(started.elapsed());
                std::thread::sleep(self.retry.backoff.min(left));
            }
            let remaining = deadline.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                return Err(TransportError::DeadlineExceeded(format!("{} ms elapsed", request.deadline_ms)));
            }
            let mut builder = self.client.post(&url).timeout(remaining).json(request);
            if let Some(mode) = inject {
                builder = builder.header(INJECT_HEADER, mode.header_value());
            }
            match builder.send() {
                Ok(resp) if resp.status() == StatusCode::SERVICE_UNAVAILABLE => {
                    last = TransportError::ConnectFailed("service unavailable".into());
                }
                Ok(resp) if !resp.status().is_success() => {
                    return Err(TransportError::MalformedResponse(format!("HTTP {}", resp.status())));
                }
                Ok(resp) => {
                    return resp.json::<ToolResponse>().map_err(|e| {
                        if e.is_timeout() {
                            TransportError::DeadlineExceeded(e.to_string())
                        } else {
                            TransportError::MalformedResponse(e.to_string())
                        }
                    });
                }
                Err(e) => match classify(&e) {
                    TransportError::ConnectFailed(d) => last = TransportError::ConnectFailed(d),
                    other => return Err(other),
                },
            }
        }
        Err(last)
    }
}

fn classify(e: &reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::DeadlineExceeded(e.to_string())
    } else if e.is_decode() || e.is_body() {
        TransportError::MalformedResponse(e.to_string())
    } else {
        TransportError::ConnectFailed(e.to_string())
    }
}

impl Backend for RemoteBackend {
    fn invoke(&self, request: &AtomicRequest<'_>) -> Result<AtomicOutput, ToolError> {
        let deadline = request.budget.unwrap_or(self.default_deadline);
        let deadline_ms = u64::try_from(deadline.as_millis()).unwrap_or(u64::MAX).max(1);
        let mut wire = ToolRequest::from_atomic(self.fresh_id(), request, deadline_ms);
        if PIXEL_ATOMICS.contains(&request.name) && wire.image.b64.is_none() {
            wire.image.b64 = Some(encode_png_b64(&request.image.raster));
        }
        let response = self.call(&wire, request.inject.map(InjectMode::from))?;
        Ok(response.into_result(&wire.request_id)?)
    }
}
