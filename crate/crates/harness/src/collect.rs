//! Fills a run store with one generation per grid cell.

use std::time::{SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt};
use semleak_core::generation::{
    build_prompt, cache_key, CellCoords, ConfigError, GenerationRecord, ModelEndpointConfig,
    RunPlan,
};
use semleak_core::suite::PromptSuite;
use serde::Serialize;

use crate::chat::{ChatClient, ChatError};
use crate::store::{RunStore, StoreError};

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub key: String,
    pub coords: CellCoords,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CollectSummary {
    /// Cells in the plan.
    pub requested: usize,
    pub new_records: usize,
    /// Cells already in the store before this call.
    pub cached: usize,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("aborted: {0}")]
    Auth(ChatError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Requests every cell of `plan` not yet in `store`, at most
/// `config.max_parallel_requests` at a time. Failed cells are listed in the
/// summary and left out of the store; an authentication failure aborts.
pub async fn collect_generations(
    suite: &PromptSuite,
    config: &ModelEndpointConfig,
    plan: &RunPlan,
    store: &RunStore,
    client: &ChatClient,
) -> Result<CollectSummary, CollectError> {
    config.validate()?;
    plan.validate()?;
    let cells = plan.cells(suite, &config.model_id);
    let mut summary = CollectSummary {
        requested: cells.len(),
        ..Default::default()
    };
    let pending: Vec<CellCoords> = cells.into_iter().filter(|c| !store.contains(c)).collect();
    summary.cached = summary.requested - pending.len();

    let mut results = stream::iter(pending)
        .map(|coords| async move {
            let instance = suite
                .get(&coords.instance_id)
                .expect("cells come from the suite");
            let prompt = build_prompt(instance, coords.variant, config);
            let key = cache_key(&coords);
            let result = client
                .complete(
                    &prompt,
                    coords.temperature,
                    config.max_tokens_for(instance.mode),
                    Some(&key),
                )
                .await;
            (coords, key, result)
        })
        .buffered(config.max_parallel_requests.max(1));

    while let Some((coords, key, result)) = results.next().await {
        match result {
            Ok(text) => {
                let record = GenerationRecord {
                    coords,
                    raw_text: text,
                    processed_text: None,
                    created_at: now_secs(),
                };
                if store.append(&record)? {
                    summary.new_records += 1;
                }
            }
            Err(e) if e.is_auth() => return Err(CollectError::Auth(e)),
            Err(e) => {
                tracing::warn!(cell = %key, error = %e, "cell failed");
                summary.failures.push(CellFailure {
                    key,
                    coords,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(summary)
}
