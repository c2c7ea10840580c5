//! JSON-over-HTTP with bearer auth and bounded retries.

use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, thiserror::Error)]
pub enum HttpError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot decode response: {0}")]
    Decode(String),
}

impl HttpError {
    /// Rate limits, server errors, timeouts and connection failures.
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            HttpError::Auth { .. } | HttpError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base, 2x base, 4x base...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1 << (retry - 1).min(16))
    }
}

#[derive(Debug, Clone)]
pub struct JsonPoster {
    client: reqwest::Client,
    token: Option<String>,
    retry: RetryPolicy,
}

impl JsonPoster {
    pub fn new(
        timeout: Duration,
        token: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, HttpError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            token,
            retry,
        })
    }

    async fn post_once<B: Serialize + ?Sized, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
        headers: &[(&str, &str)],
    ) -> Result<R, HttpError> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        for (name, value) in headers {
            req = req.header(*name, *value);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(HttpError::Auth {
                status: status.as_u16(),
            });
        }
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        if !status.is_success() {
            let body = String::from_utf8_lossy(&bytes).chars().take(500).collect();
            return Err(HttpError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| HttpError::Decode(e.to_string()))
    }

    /// POSTs `body` as JSON, retrying transient failures with exponential
    /// backoff.
    pub async fn post<B: Serialize + ?Sized, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
        headers: &[(&str, &str)],
    ) -> Result<R, HttpError> {
        let mut attempt = 1;
        loop {
            match self.post_once(url, body, headers).await {
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    tracing::debug!(url, attempt, error = %e, "retrying");
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(100),
        };
        assert_eq!(r.delay(1), Duration::from_millis(100));
        assert_eq!(r.delay(2), Duration::from_millis(200));
        assert_eq!(r.delay(3), Duration::from_millis(400));
    }

    #[test]
    fn retry_classes() {
        assert!(HttpError::Status {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(HttpError::Status {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(!HttpError::Status {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(!HttpError::Auth { status: 401 }.is_retryable());
        assert!(HttpError::Transport("reset".into()).is_retryable());
    }
}
