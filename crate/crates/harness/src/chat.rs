//! Client for `/chat/completions` style model endpoints.

use std::time::Duration;

use semleak_core::generation::ModelEndpointConfig;
use serde::{Deserialize, Serialize};

use crate::http::{HttpError, JsonPoster, RetryPolicy};

/// Header carrying the cell's cache key. Servers may ignore it; the stub uses
/// it to derive deterministic samples and to inject faults.
pub const CELL_KEY_HEADER: &str = "x-cell-key";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChoiceMessage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiceMessage {
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ChatError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("response has no message text")]
    MissingText,
}

impl ChatError {
    pub fn is_auth(&self) -> bool {
        matches!(self, ChatError::Http(HttpError::Auth { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    poster: JsonPoster,
    url: String,
    model: String,
}

impl ChatClient {
    pub fn new(config: &ModelEndpointConfig, token: Option<String>) -> Result<Self, HttpError> {
        Self::with_retry(config, token, RetryPolicy::default())
    }

    pub fn with_retry(
        config: &ModelEndpointConfig,
        token: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, HttpError> {
        let poster = JsonPoster::new(
            Duration::from_secs(config.request_timeout_secs),
            token,
            retry,
        )?;
        Ok(Self {
            poster,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model_id.clone(),
        })
    }

    /// One completion for `prompt`.
    pub async fn complete(
        &self,
        prompt: &str,
        temperature: f64,
        max_tokens: u32,
        cell_key: Option<&str>,
    ) -> Result<String, ChatError> {
        let body = ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature,
            max_tokens,
            n: 1,
        };
        let headers: Vec<(&str, &str)> =
            cell_key.map(|k| (CELL_KEY_HEADER, k)).into_iter().collect();
        let resp: ChatResponse = self.poster.post(&self.url, &body, &headers).await?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or(ChatError::MissingText)
    }
}
