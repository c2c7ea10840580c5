//! Turns stored generations into scored test/control pairs.

use std::collections::BTreeMap;
use std::time::Duration;

use semleak_core::generation::{GenerationRecord, Variant};
use semleak_core::mockbench::MockScorer;
use semleak_core::postprocess::{apply_policy, PostprocessPolicy};
use semleak_core::similarity::{
    route_model, score_pair, BackendKind, BertScoreScorer, ConceptSimilarity, CosineScorer,
    PairScore, SimilarityBackendConfig,
};
use semleak_core::suite::PromptSuite;
use serde::{Deserialize, Serialize};

use crate::embed::{prefetch, EmbedFailure, EmbeddingCache, EmbeddingClient, EmbeddingKind};
use crate::http::{HttpError, RetryPolicy};

/// Post-processed test and control generations for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPair {
    pub instance_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub sample_index: u32,
    pub test_text: String,
    pub control_text: String,
}

#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub pairs: Vec<GenerationPair>,
    /// Cache keys of records whose partner is missing (usually a failed cell).
    pub unpaired: Vec<String>,
    /// Records whose instance is not in the suite.
    pub unknown: usize,
}

/// Applies `policy` to every record and joins test with control by
/// coordinates. Output follows suite order, then model, temperature, sample.
pub fn pair_generations(
    suite: &PromptSuite,
    records: &[GenerationRecord],
    policy: &PostprocessPolicy,
) -> Pairing {
    let position: BTreeMap<&str, usize> = suite
        .instances()
        .iter()
        .enumerate()
        .map(|(i, inst)| (inst.id.as_str(), i))
        .collect();
    type Key = (usize, String, u64, u32);
    let mut slots: BTreeMap<Key, (Option<String>, Option<String>)> = BTreeMap::new();
    let mut out = Pairing::default();
    for record in records {
        let Some(&pos) = position.get(record.coords.instance_id.as_str()) else {
            out.unknown += 1;
            continue;
        };
        let instance = &suite.instances()[pos];
        let text = apply_policy(record, instance, policy)
            .scoring_text()
            .to_string();
        let t = if record.coords.temperature == 0.0 {
            0.0f64
        } else {
            record.coords.temperature
        };
        let key = (
            pos,
            record.coords.model_id.clone(),
            t.to_bits(),
            record.coords.sample_index,
        );
        let slot = slots.entry(key).or_default();
        match record.coords.variant {
            Variant::Test => slot.0 = Some(text),
            Variant::Control => slot.1 = Some(text),
        }
    }
    for ((pos, model_id, t, sample_index), slot) in slots {
        let instance_id = suite.instances()[pos].id.clone();
        let temperature = f64::from_bits(t);
        match slot {
            (Some(test_text), Some(control_text)) => out.pairs.push(GenerationPair {
                instance_id,
                model_id,
                temperature,
                sample_index,
                test_text,
                control_text,
            }),
            (test, _) => {
                let present = if test.is_some() {
                    Variant::Test
                } else {
                    Variant::Control
                };
                out.unpaired.push(semleak_core::generation::cache_key(
                    &semleak_core::generation::CellCoords {
                        instance_id,
                        variant: present,
                        model_id,
                        temperature,
                        sample_index,
                    },
                ));
            }
        }
    }
    out
}

/// Scores `pairs` with a synchronous scorer.
pub fn score_with<S: ConceptSimilarity>(
    suite: &PromptSuite,
    pairs: &[GenerationPair],
    backend: &SimilarityBackendConfig,
    scorer: &S,
    tie_epsilon: f64,
) -> Vec<PairScore> {
    pairs
        .iter()
        .map(|p| {
            let inst = suite
                .get(&p.instance_id)
                .expect("pairs come from the suite");
            let sims = score_pair(
                inst.concept_eval(),
                &p.test_text,
                &p.control_text,
                backend,
                &inst.language,
                scorer,
                tie_epsilon,
            );
            PairScore::new(
                &p.instance_id,
                &backend.backend_id,
                &p.model_id,
                p.temperature,
                p.sample_index,
                sims,
            )
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("backend {0}: an endpoint is required for this kind")]
    NoEndpoint(String),
    #[error("backend {0}: {1}")]
    Client(String, HttpError),
}

#[derive(Debug, Default)]
pub struct ScoreOutcome {
    pub scores: Vec<PairScore>,
    pub embed_failures: Vec<EmbedFailure>,
}

/// Every (routed model, text) the scorer will ask for.
fn embedding_requests(
    suite: &PromptSuite,
    pairs: &[GenerationPair],
    backend: &SimilarityBackendConfig,
) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for p in pairs {
        let inst = suite
            .get(&p.instance_id)
            .expect("pairs come from the suite");
        let model = route_model(backend, &inst.language).to_string();
        out.push((model.clone(), inst.concept_eval().to_string()));
        for text in [&p.test_text, &p.control_text] {
            if !text.trim().is_empty() {
                out.push((model.clone(), text.clone()));
            }
        }
    }
    out
}

/// Scores `pairs` with `backend`: mock backends in-process, embedding backends
/// by prefetching every needed embedding first. Embedding failures leave the
/// affected pairs flagged as unscored.
pub async fn score_pairs(
    suite: &PromptSuite,
    pairs: &[GenerationPair],
    backend: &SimilarityBackendConfig,
    tie_epsilon: f64,
    cache: Option<&EmbeddingCache>,
    token: Option<String>,
) -> Result<ScoreOutcome, ScoringError> {
    let kind = match backend.kind {
        BackendKind::Mock => {
            let scores = score_with(
                suite,
                pairs,
                backend,
                &MockScorer(backend.mock),
                tie_epsilon,
            );
            return Ok(ScoreOutcome {
                scores,
                embed_failures: Vec::new(),
            });
        }
        BackendKind::SentenceCosine => EmbeddingKind::Sentence,
        BackendKind::TokenBertscore => EmbeddingKind::Tokens,
    };
    if backend.endpoint.is_empty() {
        return Err(ScoringError::NoEndpoint(backend.backend_id.clone()));
    }
    let client = EmbeddingClient::new(
        &backend.endpoint,
        token,
        Duration::from_secs(60),
        RetryPolicy::default(),
    )
    .map_err(|e| ScoringError::Client(backend.backend_id.clone(), e))?;
    let requests = embedding_requests(suite, pairs, backend);
    let (table, embed_failures) = prefetch(
        &client,
        cache,
        kind,
        requests,
        backend.max_parallel_requests,
    )
    .await;
    let scores = match kind {
        EmbeddingKind::Sentence => {
            score_with(suite, pairs, backend, &CosineScorer(&table), tie_epsilon)
        }
        EmbeddingKind::Tokens => score_with(
            suite,
            pairs,
            backend,
            &BertScoreScorer {
                embedder: &table,
                component: backend.bertscore_component,
            },
            tie_epsilon,
        ),
    };
    Ok(ScoreOutcome {
        scores,
        embed_failures,
    })
}
