//! Concept-to-generation similarity.
//!
//! Two scoring routes share one interface: whole-text embeddings compared by
//! cosine, and per-token contextual embeddings aggregated by greedy
//! max-matching (BERT-score: no IDF weighting, no baseline rescaling).
//! Embeddings are supplied by implementors of [`SentenceEmbedder`] and
//! [`TokenEmbedder`]; this module only does the math.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("embedding must be non-empty")]
    EmptyVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("token list must be non-empty")]
    EmptyTokens,
    #[error("{0} tokens but {1} vectors")]
    TokenCountMismatch(usize, usize),
    #[error("no embedding available for {model}: {text:?}")]
    Missing { model: String, text: String },
    #[error("embedding backend failure: {0}")]
    Backend(String),
}

/// A finite, non-empty embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SimilarityError> {
        if values.is_empty() {
            return Err(SimilarityError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = SimilarityError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Per-token contextual embeddings for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddings {
    tokens: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

impl TokenEmbeddings {
    pub fn new(
        tokens: Vec<String>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self, SimilarityError> {
        if tokens.len() != vectors.len() {
            return Err(SimilarityError::TokenCountMismatch(
                tokens.len(),
                vectors.len(),
            ));
        }
        let first = vectors
            .first()
            .ok_or(SimilarityError::EmptyTokens)?
            .dimension();
        if let Some(v) = vectors.iter().find(|v| v.dimension() != first) {
            return Err(SimilarityError::DimensionMismatch(first, v.dimension()));
        }
        Ok(Self { tokens, vectors })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn dimension(&self) -> usize {
        self.vectors[0].dimension()
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if u.dimension() != v.dimension() {
        return Err(SimilarityError::DimensionMismatch(
            u.dimension(),
            v.dimension(),
        ));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy token matching between a candidate and a reference.
///
/// Precision averages, over candidate tokens, the best cosine against any
/// reference token; recall does the same from the reference side.
pub fn bertscore(
    candidate: &TokenEmbeddings,
    reference: &TokenEmbeddings,
) -> Result<BertScore, SimilarityError> {
    if candidate.dimension() != reference.dimension() {
        return Err(SimilarityError::DimensionMismatch(
            candidate.dimension(),
            reference.dimension(),
        ));
    }
    let unit = |t: &TokenEmbeddings| -> Result<Vec<Vec<f64>>, SimilarityError> {
        t.vectors
            .iter()
            .map(|v| {
                let n = v.norm();
                if n == 0.0 {
                    Err(SimilarityError::ZeroNorm)
                } else {
                    Ok(v.0.iter().map(|x| x / n).collect())
                }
            })
            .collect()
    };
    let cand = unit(candidate)?;
    let refs = unit(reference)?;

    let mut row_max = alloc::vec![f64::NEG_INFINITY; cand.len()];
    let mut col_max = alloc::vec![f64::NEG_INFINITY; refs.len()];
    for (i, c) in cand.iter().enumerate() {
        for (j, r) in refs.iter().enumerate() {
            let s = c
                .iter()
                .zip(r)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .clamp(-1.0, 1.0);
            row_max[i] = row_max[i].max(s);
            col_max[j] = col_max[j].max(s);
        }
    }
    let precision = row_max.iter().sum::<f64>() / row_max.len() as f64;
    let recall = col_max.iter().sum::<f64>() / col_max.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BertScore {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    SentenceCosine,
    TokenBertscore,
    /// Scalar similarities from the offline mock bench.
    Mock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BertScoreComponent {
    Precision,
    Recall,
    #[default]
    F1,
}

impl BertScoreComponent {
    pub fn select(self, s: &BertScore) -> f64 {
        match self {
            BertScoreComponent::Precision => s.precision,
            BertScoreComponent::Recall => s.recall,
            BertScoreComponent::F1 => s.f1,
        }
    }
}

/// Parameters for the `mock` backend kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBackendParams {
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_backend_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub embed_model: String,
    #[serde(default)]
    pub language_routing: BTreeMap<String, String>,
    #[serde(default)]
    pub bertscore_component: BertScoreComponent,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_backend_parallel")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub mock: MockBackendParams,
}

impl SimilarityBackendConfig {
    pub fn new(
        backend_id: impl Into<String>,
        kind: BackendKind,
        embed_model: impl Into<String>,
    ) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind,
            endpoint: String::new(),
            embed_model: embed_model.into(),
            language_routing: BTreeMap::new(),
            bertscore_component: BertScoreComponent::default(),
            auth_token_env: None,
            max_parallel_requests: default_backend_parallel(),
            mock: MockBackendParams::default(),
        }
    }
}

/// The embedding model to use for generations in `language`. Only an exact
/// override applies, so crosslingual tags like `zh-en` keep the default model.
pub fn route_model<'a>(backend: &'a SimilarityBackendConfig, language: &str) -> &'a str {
    backend
        .language_routing
        .get(language)
        .map_or(&backend.embed_model, String::as_str)
}

pub trait SentenceEmbedder {
    fn embed(&self, model: &str, text: &str) -> Result<EmbeddingVector, SimilarityError>;
}

pub trait TokenEmbedder {
    fn embed_tokens(&self, model: &str, text: &str) -> Result<TokenEmbeddings, SimilarityError>;
}

impl<T: SentenceEmbedder + ?Sized> SentenceEmbedder for &T {
    fn embed(&self, model: &str, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        (**self).embed(model, text)
    }
}

impl<T: TokenEmbedder + ?Sized> TokenEmbedder for &T {
    fn embed_tokens(&self, model: &str, text: &str) -> Result<TokenEmbeddings, SimilarityError> {
        (**self).embed_tokens(model, text)
    }
}

/// Similarity between a concept and a generated text under one embed model.
pub trait ConceptSimilarity {
    fn similarity(&self, concept: &str, text: &str, model: &str) -> Result<f64, SimilarityError>;
}

impl<T: ConceptSimilarity + ?Sized> ConceptSimilarity for &T {
    fn similarity(&self, concept: &str, text: &str, model: &str) -> Result<f64, SimilarityError> {
        (**self).similarity(concept, text, model)
    }
}

/// Cosine between whole-text embeddings.
pub struct CosineScorer<E>(pub E);

impl<E: SentenceEmbedder> ConceptSimilarity for CosineScorer<E> {
    fn similarity(&self, concept: &str, text: &str, model: &str) -> Result<f64, SimilarityError> {
        cosine(&self.0.embed(model, concept)?, &self.0.embed(model, text)?)
    }
}

/// BERT-score with the generation as candidate and the concept as reference.
pub struct BertScoreScorer<E> {
    pub embedder: E,
    pub component: BertScoreComponent,
}

impl<E: TokenEmbedder> ConceptSimilarity for BertScoreScorer<E> {
    fn similarity(&self, concept: &str, text: &str, model: &str) -> Result<f64, SimilarityError> {
        let reference = self.embedder.embed_tokens(model, concept)?;
        let candidate = self.embedder.embed_tokens(model, text)?;
        Ok(self.component.select(&bertscore(&candidate, &reference)?))
    }
}

/// Why a pair does not count towards Leak-Rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairFlag {
    /// A generation was empty after post-processing; its similarity is 0.
    EmptyText,
    /// The backend failed to score one side.
    Unscored,
}

impl fmt::Display for PairFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairFlag::EmptyText => "empty-text",
            PairFlag::Unscored => "unscored",
        })
    }
}

/// Similarities for one test/control pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSims {
    pub sim_test: f64,
    pub sim_control: f64,
    pub diff: f64,
    pub tie: bool,
    pub flag: Option<PairFlag>,
}

impl PairSims {
    pub fn new(sim_test: f64, sim_control: f64, tie_epsilon: f64) -> Self {
        let diff = sim_test - sim_control;
        Self {
            sim_test,
            sim_control,
            diff,
            tie: libm::fabs(diff) <= tie_epsilon,
            flag: None,
        }
    }
}

/// Scores both generations of a pair with the same scorer and routed model.
/// Empty texts score 0 and flag the pair; a scorer error flags it unscored.
pub fn score_pair<S: ConceptSimilarity>(
    concept_eval: &str,
    test_gen: &str,
    control_gen: &str,
    backend: &SimilarityBackendConfig,
    language: &str,
    scorer: &S,
    tie_epsilon: f64,
) -> PairSims {
    let model = route_model(backend, language);
    let mut flag = None;
    let mut side = |text: &str| -> f64 {
        if text.trim().is_empty() {
            flag.get_or_insert(PairFlag::EmptyText);
            return 0.0;
        }
        match scorer.similarity(concept_eval, text, model) {
            Ok(s) if s.is_finite() => s,
            _ => {
                flag = Some(PairFlag::Unscored);
                0.0
            }
        }
    };
    let sim_test = side(test_gen);
    let sim_control = side(control_gen);
    PairSims {
        flag,
        ..PairSims::new(sim_test, sim_control, tie_epsilon)
    }
}

/// Scored pair with its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub instance_id: String,
    pub backend_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub sample_index: u32,
    pub sim_test: f64,
    pub sim_control: f64,
    pub diff: f64,
    pub tie: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<PairFlag>,
}

impl PairScore {
    pub fn new(
        instance_id: impl Into<String>,
        backend_id: impl Into<String>,
        model_id: impl Into<String>,
        temperature: f64,
        sample_index: u32,
        sims: PairSims,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            backend_id: backend_id.into(),
            model_id: model_id.into(),
            temperature,
            sample_index,
            sim_test: sims.sim_test,
            sim_control: sims.sim_control,
            diff: sims.diff,
            tie: sims.tie,
            flag: sims.flag,
        }
    }

    /// The same pair with test and control exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            sim_test: self.sim_control,
            sim_control: self.sim_test,
            diff: self.sim_control - self.sim_test,
            ..self.clone()
        }
    }
}
