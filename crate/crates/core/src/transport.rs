//! HTTP JSON transport shared by the remote embedding and chat backends.
//!
//! Backends talk to a [`HttpJson`] implementation rather than to reqwest
//! directly, so retry and parsing logic is testable without a network.

use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

/// A transport-level failure. `retryable` distinguishes connection problems
/// and 5xx responses from terminal client errors.
#[derive(Debug, Clone)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn terminal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

/// Minimal JSON-over-HTTP client surface.
pub trait HttpJson: Send + Sync {
    /// POST `body` to `url`, with `api_key` as a bearer token when present,
    /// and return the parsed JSON response.
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
    ) -> std::result::Result<Value, TransportError>;
}

/// Retry schedule for transport errors: exponential backoff starting at
/// `base_delay`, doubling per attempt, up to `max_attempts` total attempts.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    /// POST with retries for retryable transport errors only. Terminal
    /// transport errors and non-transport failures surface immediately.
    pub fn post_json_with_retry(
        &self,
        transport: &dyn HttpJson,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
    ) -> Result<Value> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            match transport.post_json(url, api_key, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable => {
                    last = Some(e.message);
                    if attempt < attempts {
                        std::thread::sleep(self.base_delay * 2u32.pow(attempt - 1));
                    }
                }
                Err(e) => {
                    return Err(Error::Transport {
                        attempts: attempt,
                        message: e.message,
                    })
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last.unwrap_or_else(|| "unknown transport failure".to_string()),
        })
    }
}

/// reqwest-backed transport used outside of tests.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("failed to build http client: {e}")))?;
        Ok(Self { client })
    }
}

impl HttpJson for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
    ) -> std::result::Result<Value, TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(TransportError::retryable(format!(
                "server error {status}"
            )));
        }
        if !status.is_success() {
            return Err(TransportError::terminal(format!(
                "http status {status}"
            )));
        }
        resp.json::<Value>()
            .map_err(|e| TransportError::terminal(format!("invalid json response: {e}")))
    }
}
