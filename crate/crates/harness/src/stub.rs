//! Deterministic local servers for offline runs and tests: a chat-completions
//! model backed by the mock bench, and an embedding service backed by
//! [`HashEmbedder`].

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use semleak_core::generation::{parse_cache_key, Variant, COMPLETION_PREFIX};
use semleak_core::mockbench::{mock_generate, HashEmbedder, MockLeakConfig};
use semleak_core::similarity::{SentenceEmbedder, TokenEmbedder};
use semleak_core::suite::{GenerationMode, PromptInstance, PromptSuite};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::task::JoinHandle;

use crate::chat::{ChatRequest, CELL_KEY_HEADER};

/// Request counters shared by both stubs.
#[derive(Debug, Default)]
pub struct StubStats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl StubStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests handled at once.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn enter(self: &Arc<Self>) -> InFlight {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(self.clone())
    }
}

struct InFlight(Arc<StubStats>);

impl Drop for InFlight {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Default)]
pub struct StubModelOptions {
    /// Cache keys that always get HTTP 500.
    pub fail_keys: HashSet<String>,
    /// Cache keys that get HTTP 503 this many times before succeeding.
    pub flaky_keys: HashMap<String, u32>,
    /// Cache keys answered with a null message content.
    pub null_keys: HashSet<String>,
    /// Bearer token to require; other requests get HTTP 401.
    pub required_token: Option<String>,
    /// Per-request latency, to make concurrency observable.
    pub delay: Duration,
    /// Prepend the prompt to the reply, like a model that repeats its input.
    pub echo_prompt: bool,
}

pub struct StubModel {
    prompts: HashMap<String, (PromptInstance, Variant)>,
    config: MockLeakConfig,
    options: StubModelOptions,
    flaky_left: Mutex<HashMap<String, u32>>,
    pub stats: Arc<StubStats>,
}

/// Sample draw for a cell: distinct per (temperature, sample index).
fn draw_for(temperature: f64, sample_index: u32) -> u64 {
    let t = if temperature == 0.0 {
        0.0f64
    } else {
        temperature
    };
    t.to_bits().wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from(sample_index)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get("authorization")?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
}

impl StubModel {
    pub fn new(suite: &PromptSuite, config: MockLeakConfig, options: StubModelOptions) -> Self {
        let mut prompts = HashMap::new();
        for inst in suite.instances() {
            for variant in Variant::BOTH {
                let prompt = match variant {
                    Variant::Test => &inst.test_prompt,
                    Variant::Control => &inst.control_prompt,
                };
                if inst.mode == GenerationMode::Completion {
                    prompts.insert(
                        format!("{COMPLETION_PREFIX} {prompt}"),
                        (inst.clone(), variant),
                    );
                }
                prompts.insert(prompt.clone(), (inst.clone(), variant));
            }
        }
        let flaky_left = Mutex::new(options.flaky_keys.clone());
        Self {
            prompts,
            config,
            options,
            flaky_left,
            stats: Arc::new(StubStats::default()),
        }
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/chat/completions", post(chat))
            .route("/v1/chat/completions", post(chat))
            .with_state(self)
    }

    fn reply(&self, req: &ChatRequest, key: Option<&str>) -> String {
        let prompt = req
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let draw = key.and_then(parse_cache_key).map_or_else(
            || draw_for(req.temperature, 0),
            |c| draw_for(c.temperature, c.sample_index),
        );
        let text = match self.prompts.get(prompt) {
            Some((inst, variant)) => mock_generate(inst, *variant, draw, &self.config),
            None => "I am not sure what you mean.".to_string(),
        };
        if self.options.echo_prompt {
            let shown = prompt
                .strip_prefix(COMPLETION_PREFIX)
                .unwrap_or(prompt)
                .trim_start();
            format!("{shown} {text}")
        } else {
            text
        }
    }
}

async fn chat(
    State(stub): State<Arc<StubModel>>,
    headers: HeaderMap,
    Json(req): Json<ChatRequest>,
) -> Response {
    let _guard = stub.stats.enter();
    if let Some(token) = &stub.options.required_token {
        if bearer(&headers) != Some(token.as_str()) {
            return (
                StatusCode::UNAUTHORIZED,
                Json(json!({"error": "invalid token"})),
            )
                .into_response();
        }
    }
    if !stub.options.delay.is_zero() {
        tokio::time::sleep(stub.options.delay).await;
    }
    let key = headers
        .get(CELL_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    if let Some(k) = &key {
        if stub.options.fail_keys.contains(k) {
            return (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(json!({"error": "injected failure"})),
            )
                .into_response();
        }
        let mut flaky = stub.flaky_left.lock().expect("flaky lock");
        if let Some(left) = flaky.get_mut(k).filter(|n| **n > 0) {
            *left -= 1;
            return (
                StatusCode::SERVICE_UNAVAILABLE,
                Json(json!({"error": "try again"})),
            )
                .into_response();
        }
    }
    let content = if key
        .as_ref()
        .is_some_and(|k| stub.options.null_keys.contains(k))
    {
        Value::Null
    } else {
        Value::String(stub.reply(&req, key.as_deref()))
    };
    Json(json!({
        "object": "chat.completion",
        "model": req.model,
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
    }))
    .into_response()
}

pub struct StubEmbedder {
    pub embedder: HashEmbedder,
    pub stats: Arc<StubStats>,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self {
            embedder: HashEmbedder::default(),
            stats: Arc::new(StubStats::default()),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Input {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct SentenceReq {
    model: String,
    input: Input,
}

#[derive(Deserialize)]
struct TokenReq {
    model: String,
    input: String,
}

fn unprocessable(msg: String) -> Response {
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(json!({"error": msg})),
    )
        .into_response()
}

async fn sentence_embeddings(
    State(stub): State<Arc<StubEmbedder>>,
    Json(req): Json<SentenceReq>,
) -> Response {
    let _guard = stub.stats.enter();
    let texts = match req.input {
        Input::One(t) => vec![t],
        Input::Many(ts) => ts,
    };
    let mut data = Vec::with_capacity(texts.len());
    for (index, text) in texts.iter().enumerate() {
        match stub.embedder.embed(&req.model, text) {
            Ok(v) => {
                data.push(json!({"object": "embedding", "index": index, "embedding": v.values()}))
            }
            Err(e) => return unprocessable(format!("input {index}: {e}")),
        }
    }
    Json(json!({"object": "list", "model": req.model, "data": data})).into_response()
}

async fn token_embeddings(
    State(stub): State<Arc<StubEmbedder>>,
    Json(req): Json<TokenReq>,
) -> Response {
    let _guard = stub.stats.enter();
    match stub.embedder.embed_tokens(&req.model, &req.input) {
        Ok(t) => {
            let vectors: Vec<&[f64]> = t.vectors().iter().map(|v| v.values()).collect();
            Json(json!({"tokens": t.tokens(), "vectors": vectors})).into_response()
        }
        Err(e) => unprocessable(e.to_string()),
    }
}

impl StubEmbedder {
    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/embeddings", post(sentence_embeddings))
            .route("/token_embeddings", post(token_embeddings))
            .with_state(self)
    }
}

/// Serves `router` on an ephemeral localhost port.
pub async fn spawn(router: Router) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "stub server stopped");
        }
    });
    Ok((addr, handle))
}
