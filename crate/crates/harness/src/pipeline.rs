//! Collect, score and aggregate: the `run` and `score` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semleak_core::generation::{GenerationRecord, ModelEndpointConfig, RunPlan};
use semleak_core::metric::{breakdown, Axis, MetricError};
use semleak_core::postprocess::PostprocessPolicy;
use semleak_core::report::{
    BackendMeta, BundleStats, DiffPoint, ModelMeta, NamedTTest, ReportBundle, RunMetadata,
    LABEL_ENCODING, TAU_VARIANT,
};
use semleak_core::similarity::{PairScore, SimilarityBackendConfig};
use semleak_core::stats::t_test_paired_greater;
use semleak_core::suite::PromptSuite;

use crate::chat::ChatClient;
use crate::collect::{collect_generations, CollectError, CollectSummary};
use crate::embed::{EmbedFailure, EmbeddingCache};
use crate::http::{HttpError, RetryPolicy};
use crate::scoring::{pair_generations, score_pairs, ScoringError};
use crate::store::{RunStore, StoreError};

/// Everything a run needs besides credentials.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub suite: PromptSuite,
    pub models: Vec<ModelEndpointConfig>,
    pub backends: Vec<SimilarityBackendConfig>,
    pub plan: RunPlan,
    pub policy: PostprocessPolicy,
    pub tie_epsilon: f64,
    pub epsilon_slack: f64,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl RunSetup {
    pub fn generations_dir(&self) -> PathBuf {
        self.out_dir.join("generations")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.out_dir.join("embeddings")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("model {model}: {source}")]
    Collect { model: String, source: CollectError },
    #[error("model {model}: {source}")]
    Client { model: String, source: HttpError },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Credentials(String),
}

/// Fetches missing generations for every model. `tokens` is aligned with
/// `setup.models`.
pub async fn collect_all(
    setup: &RunSetup,
    tokens: &[Option<String>],
    retry: RetryPolicy,
) -> Result<Vec<(String, CollectSummary)>, PipelineError> {
    let mut out = Vec::new();
    for (config, token) in setup.models.iter().zip(tokens) {
        let store = RunStore::open(
            &setup.generations_dir(),
            setup.suite.name(),
            &config.model_id,
        )?;
        let client = ChatClient::with_retry(config, token.clone(), retry).map_err(|source| {
            PipelineError::Client {
                model: config.model_id.clone(),
                source,
            }
        })?;
        let summary = collect_generations(&setup.suite, config, &setup.plan, &store, &client)
            .await
            .map_err(|source| PipelineError::Collect {
                model: config.model_id.clone(),
                source,
            })?;
        out.push((config.model_id.clone(), summary));
    }
    Ok(out)
}

/// Stored generations of every model that lie on the plan's grid.
pub fn stored_generations(setup: &RunSetup) -> Result<Vec<GenerationRecord>, PipelineError> {
    let mut records = Vec::new();
    for config in &setup.models {
        let store = RunStore::open(
            &setup.generations_dir(),
            setup.suite.name(),
            &config.model_id,
        )?;
        records.extend(
            store
                .records()
                .into_iter()
                .filter(|r| setup.plan.contains(&r.coords)),
        );
    }
    Ok(records)
}

#[derive(Debug)]
pub struct ScoredRun {
    pub bundle: ReportBundle,
    pub pair_scores: Vec<PairScore>,
    /// Generations whose partner variant is missing.
    pub unpaired: Vec<String>,
    pub embed_failures: Vec<(String, EmbedFailure)>,
}

/// Scores stored generations with every backend and aggregates the results.
/// `backend_tokens` is aligned with `setup.backends`.
pub async fn score_stored(
    setup: &RunSetup,
    backend_tokens: &[Option<String>],
) -> Result<ScoredRun, PipelineError> {
    let records = stored_generations(setup)?;
    let pairing = pair_generations(&setup.suite, &records, &setup.policy);
    let cache = EmbeddingCache::new(setup.embeddings_dir());
    let mut pair_scores = Vec::new();
    let mut embed_failures = Vec::new();
    for (backend, token) in setup.backends.iter().zip(backend_tokens) {
        let outcome = score_pairs(
            &setup.suite,
            &pairing.pairs,
            backend,
            setup.tie_epsilon,
            Some(&cache),
            token.clone(),
        )
        .await?;
        pair_scores.extend(outcome.scores);
        embed_failures.extend(
            outcome
                .embed_failures
                .into_iter()
                .map(|f| (backend.backend_id.clone(), f)),
        );
    }
    let bundle = build_bundle(setup, &pair_scores)?;
    Ok(ScoredRun {
        bundle,
        pair_scores,
        unpaired: pairing.unpaired,
        embed_failures,
    })
}

/// Reports on every axis, per-(backend, model) paired t-tests, and the
/// differences of all scored pairs.
pub fn build_bundle(
    setup: &RunSetup,
    pair_scores: &[PairScore],
) -> Result<ReportBundle, MetricError> {
    let mut reports = Vec::new();
    for axis in [Axis::Overall, Axis::Category, Axis::Temperature] {
        reports.extend(breakdown(
            pair_scores,
            &setup.suite,
            axis,
            setup.tie_epsilon,
        )?);
    }
    type Paired = (Vec<f64>, Vec<f64>);
    let mut groups: BTreeMap<(&str, &str), Paired> = BTreeMap::new();
    let mut diffs = Vec::new();
    for p in pair_scores.iter().filter(|p| p.flag.is_none()) {
        let g = groups.entry((&p.backend_id, &p.model_id)).or_default();
        g.0.push(p.sim_test);
        g.1.push(p.sim_control);
        diffs.push(DiffPoint {
            instance_id: p.instance_id.clone(),
            backend_id: p.backend_id.clone(),
            model_id: p.model_id.clone(),
            diff: p.diff,
        });
    }
    let t_tests = groups
        .into_iter()
        .filter_map(|((b, m), (test, control))| {
            t_test_paired_greater(&test, &control)
                .ok()
                .map(|result| NamedTTest {
                    backend_id: b.into(),
                    model_id: m.into(),
                    result,
                })
        })
        .collect();
    Ok(ReportBundle {
        metadata: metadata(setup),
        reports,
        diffs,
        stats: BundleStats {
            t_tests,
            taus: Vec::new(),
        },
    })
}

pub fn metadata(setup: &RunSetup) -> RunMetadata {
    RunMetadata {
        suite_name: setup.suite.name().into(),
        suite_path: setup.suite.source_path().into(),
        models: setup
            .models
            .iter()
            .map(|m| ModelMeta {
                model_id: m.model_id.clone(),
                family: m.family().into(),
            })
            .collect(),
        backends: setup
            .backends
            .iter()
            .map(|b| BackendMeta {
                backend_id: b.backend_id.clone(),
                kind: b.kind,
                embed_model: b.embed_model.clone(),
                language_routing: b.language_routing.clone(),
                bertscore_component: b.bertscore_component,
            })
            .collect(),
        plan: setup.plan.clone(),
        policy: setup.policy.clone(),
        tie_epsilon: setup.tie_epsilon,
        epsilon_slack: setup.epsilon_slack,
        tau_variant: TAU_VARIANT.into(),
        label_encoding: LABEL_ENCODING.into(),
        code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
        seed: setup.seed,
    }
}

/// Writes the bundle, pair scores and rendered reports into `dir`.
pub fn write_run_outputs(
    dir: &Path,
    run: &ScoredRun,
    bins: usize,
) -> Result<Vec<PathBuf>, crate::bundle_io::BundleIoError> {
    std::fs::create_dir_all(dir).map_err(|source| crate::bundle_io::BundleIoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let bundle_path = dir.join("bundle.json");
    crate::bundle_io::write_bundle(&bundle_path, &run.bundle)?;
    let scores_path = dir.join("pair_scores.jsonl");
    crate::bundle_io::write_pair_scores(&scores_path, &run.pair_scores)?;
    let mut files = vec![bundle_path, scores_path];
    files.extend(crate::bundle_io::write_report_files(
        dir,
        &run.bundle,
        bins,
    )?);
    Ok(files)
}
