//! Offline mock model and mock embedders with a known leak strength.
//!
//! For each (instance, draw) a uniform `u` picks one of three outcomes that
//! both variants share: with probability `p` the test text carries a marker
//! derived from the concept, with probability `q` both texts are identical,
//! otherwise both are unrelated filler. The scalar scorer adds a fixed bonus
//! when the marker is present, so leaking pairs always score as leaks when
//! noise is off and unrelated pairs split evenly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::generation::{CellCoords, GenerationRecord, Variant};
use crate::hash::{unit_interval, StableHasher};
use crate::metric::{breakdown, Axis, LeakTally, MetricError};
use crate::postprocess::{apply_policy, PostprocessPolicy};
use crate::similarity::{
    score_pair, BackendKind, ConceptSimilarity, EmbeddingVector, MockBackendParams, PairScore,
    SentenceEmbedder, SimilarityBackendConfig, SimilarityError, TokenEmbedder, TokenEmbeddings,
};
use crate::suite::{GenerationMode, PromptInstance, PromptSuite, SuiteError};

/// Score added when the concept marker is present.
pub const MARKER_BONUS: f64 = 1.0;
/// Hash-derived base scores lie in `[0, BASE_SPAN)`.
pub const BASE_SPAN: f64 = 0.5;

const FILLER: &[&str] = &[
    "the", "old", "house", "stood", "near", "a", "quiet", "road", "people", "walked", "slowly",
    "through", "morning", "light", "with", "small", "bags", "and", "paper", "maps", "under",
    "tall", "windows", "of", "stone", "while", "someone", "hummed", "softly", "beside", "wooden",
    "benches",
];

const CONCEPTS: &[(&str, &str)] = &[
    ("color", "yellow"),
    ("color", "green"),
    ("color", "blue"),
    ("animal", "koalas"),
    ("animal", "ants"),
    ("animal", "tiger"),
    ("food", "lemon"),
    ("food", "garlic"),
    ("music", "violin"),
    ("weather", "rain"),
    ("name", "Coral"),
    ("name", "Melody"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockLeakConfig {
    /// Probability `p` that the test text leaks.
    pub leak_strength: f64,
    /// Probability `q` that test and control texts are identical.
    pub tie_fraction: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MockError {
    #[error("leak_strength must be in [0, 1], got {0}")]
    LeakStrength(f64),
    #[error("tie_fraction must be in [0, 1], got {0}")]
    TieFraction(f64),
    #[error("leak_strength + tie_fraction must not exceed 1")]
    MassExceeded,
    #[error("noise_sd must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error("need at least one instance")]
    NoInstances,
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl MockLeakConfig {
    pub fn new(
        leak_strength: f64,
        tie_fraction: f64,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self, MockError> {
        let c = Self {
            leak_strength,
            tie_fraction,
            noise_sd,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    /// Tie mass fills everything that does not leak.
    pub fn calibrated(leak_strength: f64, seed: u64) -> Result<Self, MockError> {
        Self::new(leak_strength, 1.0 - leak_strength, 0.0, seed)
    }

    pub fn validate(&self) -> Result<(), MockError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.leak_strength) {
            return Err(MockError::LeakStrength(self.leak_strength));
        }
        if !unit(self.tie_fraction) {
            return Err(MockError::TieFraction(self.tie_fraction));
        }
        if self.leak_strength + self.tie_fraction > 1.0 + 1e-12 {
            return Err(MockError::MassExceeded);
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(MockError::Noise(self.noise_sd));
        }
        Ok(())
    }

    pub fn backend_params(&self) -> MockBackendParams {
        MockBackendParams {
            noise_sd: self.noise_sd,
            seed: self.seed,
        }
    }
}

/// Marker token for a concept. Never collides with natural words or with
/// removal terms, so it survives post-processing.
pub fn concept_marker(concept: &str) -> String {
    format!(
        "zq{:08x}",
        StableHasher::new().str("marker").str(concept).finish() as u32
    )
}

fn filler(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(6..=10);
    let words: Vec<&str> = (0..len)
        .map(|_| FILLER[rng.random_range(0..FILLER.len())])
        .collect();
    words.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Leak,
    Tie,
    Unrelated,
}

fn outcome(instance: &PromptInstance, draw: u64, config: &MockLeakConfig) -> Outcome {
    let u = unit_interval(
        StableHasher::new()
            .u64(config.seed)
            .str("outcome")
            .str(&instance.id)
            .u64(draw)
            .finish(),
    );
    if u < config.leak_strength {
        Outcome::Leak
    } else if u < config.leak_strength + config.tie_fraction {
        Outcome::Tie
    } else {
        Outcome::Unrelated
    }
}

/// Deterministic mock generation for one variant of `instance`. Both variants
/// of the same `draw` share their outcome.
pub fn mock_generate(
    instance: &PromptInstance,
    variant: Variant,
    draw: u64,
    config: &MockLeakConfig,
) -> String {
    let which = outcome(instance, draw, config);
    let text_seed = |v: Option<Variant>| {
        let h = StableHasher::new()
            .u64(config.seed)
            .str("text")
            .str(&instance.id)
            .u64(draw);
        match v {
            Some(v) => h.str(v.as_str()).finish(),
            None => h.finish(),
        }
    };
    match which {
        Outcome::Tie => format!(
            "{}.",
            filler(&mut ChaCha8Rng::seed_from_u64(text_seed(None)))
        ),
        Outcome::Leak if variant == Variant::Test => {
            let base = filler(&mut ChaCha8Rng::seed_from_u64(text_seed(Some(variant))));
            let concept = instance.concept_eval();
            format!("{base} {concept} {}.", concept_marker(concept))
        }
        _ => format!(
            "{}.",
            filler(&mut ChaCha8Rng::seed_from_u64(text_seed(Some(variant))))
        ),
    }
}

fn has_marker(text: &str, marker: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| w == marker)
}

/// Scalar mock similarity: a hash-derived base in `[0, 0.5)`, plus
/// [`MARKER_BONUS`] if the concept's marker appears, plus Gaussian noise.
/// Every component is a function of (seed, concept, text).
pub fn mock_similarity(concept: &str, text: &str, params: &MockBackendParams) -> f64 {
    let h = StableHasher::new().u64(params.seed).str(concept).str(text);
    let base = BASE_SPAN * unit_interval(h.str("base").finish());
    let bonus = if has_marker(text, &concept_marker(concept)) {
        MARKER_BONUS
    } else {
        0.0
    };
    let noise = if params.noise_sd > 0.0 {
        let z: f64 = ChaCha8Rng::seed_from_u64(h.str("noise").finish()).sample(StandardNormal);
        params.noise_sd * z
    } else {
        0.0
    };
    base + bonus + noise
}

/// [`mock_similarity`] behind the backend interface. The model name is ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockScorer(pub MockBackendParams);

impl ConceptSimilarity for MockScorer {
    fn similarity(&self, concept: &str, text: &str, _model: &str) -> Result<f64, SimilarityError> {
        Ok(mock_similarity(concept, text, &self.0))
    }
}

/// Vector-producing mock embedder: every lowercased alphanumeric token maps
/// to a fixed pseudo-random non-negative unit vector, and a sentence is the sum of its
/// tokens. Texts sharing tokens therefore have higher cosine similarity.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 64 }
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn mock_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

impl HashEmbedder {
    pub fn token_vector(&self, model: &str, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(StableHasher::new().str(model).str(token).finish());
        // Non-negative entries keep every cosine in [0, 1], as with
        // anisotropic contextual embeddings, so BERT-score stays bounded.
        let v: Vec<f64> = (0..self.dimension.max(1))
            .map(|_| libm::fabs(rng.sample::<f64, _>(StandardNormal)) + 1e-9)
            .collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl SentenceEmbedder for HashEmbedder {
    fn embed(&self, model: &str, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        let tokens = mock_tokens(text);
        if tokens.is_empty() {
            return Err(SimilarityError::EmptyTokens);
        }
        let mut sum = alloc::vec![0.0; self.dimension.max(1)];
        for t in &tokens {
            for (s, x) in sum.iter_mut().zip(self.token_vector(model, t)) {
                *s += x;
            }
        }
        EmbeddingVector::new(sum)
    }
}

impl TokenEmbedder for HashEmbedder {
    fn embed_tokens(&self, model: &str, text: &str) -> Result<TokenEmbeddings, SimilarityError> {
        let tokens = mock_tokens(text);
        let vectors = tokens
            .iter()
            .map(|t| EmbeddingVector::new(self.token_vector(model, t)))
            .collect::<Result<Vec<_>, _>>()?;
        TokenEmbeddings::new(tokens, vectors)
    }
}

/// Expected Leak-Rate with its standard error (0 for the closed form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLeakRate {
    pub leak_rate: f64,
    pub std_error: f64,
    pub closed_form: bool,
}

const MONTE_CARLO_DRAWS: u32 = 200_000;

/// Analytic Leak-Rate for `config`.
///
/// Without noise, leaking pairs always count 1, identical texts 0.5, and
/// unrelated pairs have i.i.d. scores so they lean neither way: the rate is
/// `100 p + 50 (1 - p)`. With noise the model is simulated.
pub fn expected_leak_rate(config: &MockLeakConfig) -> ExpectedLeakRate {
    let p = config.leak_strength;
    if config.noise_sd == 0.0 {
        return ExpectedLeakRate {
            leak_rate: 100.0 * p + 50.0 * (1.0 - p),
            std_error: 0.0,
            closed_form: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        StableHasher::new()
            .u64(config.seed)
            .str("expected")
            .finish(),
    );
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..MONTE_CARLO_DRAWS {
        let u: f64 = rng.random();
        let credit = if u >= p && u < p + config.tie_fraction {
            0.5
        } else {
            let bonus = if u < p { MARKER_BONUS } else { 0.0 };
            let mut score = |b: f64| {
                let z: f64 = rng.sample(StandardNormal);
                b + BASE_SPAN * rng.random::<f64>() + config.noise_sd * z
            };
            let st = score(bonus);
            let sc = score(0.0);
            if st > sc {
                1.0
            } else if st < sc {
                0.0
            } else {
                0.5
            }
        };
        sum += credit;
        sum_sq += credit * credit;
    }
    let n = f64::from(MONTE_CARLO_DRAWS);
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    ExpectedLeakRate {
        leak_rate: 100.0 * mean,
        std_error: 100.0 * libm::sqrt(var / n),
        closed_form: false,
    }
}

/// `n` synthetic instances cycling through completion, story and recipe modes.
pub fn synthetic_suite(n: usize) -> Result<PromptSuite, MockError> {
    if n == 0 {
        return Err(MockError::NoInstances);
    }
    let instances = (0..n)
        .map(|i| {
            let (category, concept) = CONCEPTS[i % CONCEPTS.len()];
            let id = format!("mock-{i:05}");
            match i % 3 {
                0 => PromptInstance::completion(
                    id,
                    category,
                    concept,
                    format!("He likes {concept}. His friend is a"),
                    "His friend is a",
                ),
                1 => PromptInstance {
                    mode: GenerationMode::Story,
                    removal_terms: alloc::vec![concept.to_string()],
                    ..PromptInstance::completion(
                        id,
                        category,
                        concept,
                        format!("Write a short story about {concept}."),
                        "Write a short story.",
                    )
                },
                _ => PromptInstance {
                    mode: GenerationMode::Recipe,
                    removal_terms: alloc::vec![concept.to_string()],
                    ..PromptInstance::completion(
                        id,
                        category,
                        concept,
                        format!("Give me a recipe. I like {concept}."),
                        "Give me a recipe.",
                    )
                },
            }
        })
        .collect();
    Ok(PromptSuite::new("mock", instances, "synthetic")?)
}

/// Result of running the whole pipeline on mock data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub config: MockLeakConfig,
    pub n_instances: usize,
    pub observed: f64,
    pub expected: ExpectedLeakRate,
    pub tally: LeakTally,
    pub p_value: Option<f64>,
}

/// Mock generation, post-processing, mock scoring and the metric over
/// `n_instances` synthetic instances (one sample each).
pub fn run_calibration(
    n_instances: usize,
    config: &MockLeakConfig,
    policy: &PostprocessPolicy,
) -> Result<CalibrationOutcome, MockError> {
    config.validate()?;
    let suite = synthetic_suite(n_instances)?;
    let mut backend = SimilarityBackendConfig::new("mock", BackendKind::Mock, "mock");
    backend.mock = config.backend_params();
    let scorer = MockScorer(backend.mock);
    let pairs = mock_pair_scores(
        &suite,
        "mock-model",
        1.0,
        1,
        config,
        policy,
        &backend,
        &scorer,
        0.0,
    );
    let report = breakdown(&pairs, &suite, Axis::Overall, 0.0)?
        .into_iter()
        .next()
        .ok_or(MetricError::Empty)?;
    Ok(CalibrationOutcome {
        config: *config,
        n_instances,
        observed: report.leak_rate.ok_or(MetricError::Empty)?,
        expected: expected_leak_rate(config),
        tally: report.tally,
        p_value: report.p_value,
    })
}

/// Generates, post-processes and scores every (instance, sample) of `suite`
/// with the mock model.
#[allow(clippy::too_many_arguments)]
pub fn mock_pair_scores<S: ConceptSimilarity>(
    suite: &PromptSuite,
    model_id: &str,
    temperature: f64,
    samples: u32,
    config: &MockLeakConfig,
    policy: &PostprocessPolicy,
    backend: &SimilarityBackendConfig,
    scorer: &S,
    tie_epsilon: f64,
) -> Vec<PairScore> {
    let mut out = Vec::with_capacity(suite.len() * samples as usize);
    for instance in suite.instances() {
        for s in 0..samples {
            let text = |variant| {
                let raw = mock_generate(instance, variant, u64::from(s), config);
                let record = GenerationRecord {
                    coords: CellCoords {
                        instance_id: instance.id.clone(),
                        variant,
                        model_id: model_id.into(),
                        temperature,
                        sample_index: s,
                    },
                    raw_text: raw,
                    processed_text: None,
                    created_at: 0,
                };
                apply_policy(&record, instance, policy)
                    .scoring_text()
                    .to_string()
            };
            let (t, c) = (text(Variant::Test), text(Variant::Control));
            let sims = score_pair(
                instance.concept_eval(),
                &t,
                &c,
                backend,
                &instance.language,
                scorer,
                tie_epsilon,
            );
            out.push(PairScore::new(
                &instance.id,
                &backend.backend_id,
                model_id,
                temperature,
                s,
                sims,
            ));
        }
    }
    out
}
