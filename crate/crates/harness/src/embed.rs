//! Embedding endpoints, a content-addressed on-disk cache, and an in-memory
//! table that serves prefetched embeddings to the synchronous scorers.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use semleak_core::similarity::{
    EmbeddingVector, SentenceEmbedder, SimilarityError, TokenEmbedder, TokenEmbeddings,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::http::{HttpError, JsonPoster, RetryPolicy};

/// Texts per `/embeddings` request.
pub const SENTENCE_BATCH: usize = 32;

#[derive(Debug, Serialize)]
struct SentenceRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentenceResponse {
    pub data: Vec<SentenceDatum>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SentenceDatum {
    #[serde(default)]
    pub index: Option<usize>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct TokenRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingClient {
    poster: JsonPoster,
    endpoint: String,
}

impl EmbeddingClient {
    pub fn new(
        endpoint: &str,
        token: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, HttpError> {
        Ok(Self {
            poster: JsonPoster::new(timeout, token, retry)?,
            endpoint: endpoint.trim_end_matches('/').into(),
        })
    }

    /// One vector per input, in input order.
    pub async fn embed_sentences(
        &self,
        model: &str,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, HttpError> {
        let resp: SentenceResponse = self
            .poster
            .post(
                &format!("{}/embeddings", self.endpoint),
                &SentenceRequest {
                    model,
                    input: texts,
                },
                &[],
            )
            .await?;
        if resp.data.len() != texts.len() {
            return Err(HttpError::Decode(format!(
                "{} inputs but {} embeddings",
                texts.len(),
                resp.data.len()
            )));
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (pos, d) in resp.data.into_iter().enumerate() {
            let i = d.index.unwrap_or(pos);
            match out.get_mut(i) {
                Some(slot @ None) => *slot = Some(d.embedding),
                _ => return Err(HttpError::Decode(format!("bad embedding index {i}"))),
            }
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every slot filled"))
            .collect())
    }

    pub async fn embed_tokens(&self, model: &str, text: &str) -> Result<TokenResponse, HttpError> {
        self.poster
            .post(
                &format!("{}/token_embeddings", self.endpoint),
                &TokenRequest { model, input: text },
                &[],
            )
            .await
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmbeddingKind {
    Sentence,
    Tokens,
}

impl EmbeddingKind {
    fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Sentence => "sentence",
            EmbeddingKind::Tokens => "tokens",
        }
    }
}

/// Files under `dir/<kind>/<hh>/<sha256>.json`, keyed by kind, model and text.
/// Writes go through a temporary file and a rename under a lock.
#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, kind: EmbeddingKind, model: &str, text: &str) -> PathBuf {
        let mut h = Sha256::new();
        h.update(kind.as_str().as_bytes());
        h.update([0]);
        h.update(model.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        let hex = hex::encode(h.finalize());
        self.dir
            .join(kind.as_str())
            .join(&hex[..2])
            .join(format!("{hex}.json"))
    }

    fn get<T: for<'de> Deserialize<'de>>(
        &self,
        kind: EmbeddingKind,
        model: &str,
        text: &str,
    ) -> Option<T> {
        let bytes = fs::read(self.path(kind, model, text)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn put<T: Serialize>(
        &self,
        kind: EmbeddingKind,
        model: &str,
        text: &str,
        value: &T,
    ) -> io::Result<()> {
        let path = self.path(kind, model, text);
        let _guard = self.write_lock.lock().expect("cache lock");
        fs::create_dir_all(path.parent().expect("cache paths have parents"))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(
            &tmp,
            serde_json::to_vec(value).expect("embeddings serialize"),
        )?;
        fs::rename(&tmp, &path)
    }

    pub fn get_sentence(&self, model: &str, text: &str) -> Option<Vec<f64>> {
        self.get(EmbeddingKind::Sentence, model, text)
    }

    pub fn put_sentence(&self, model: &str, text: &str, v: &[f64]) -> io::Result<()> {
        self.put(EmbeddingKind::Sentence, model, text, &v)
    }

    pub fn get_tokens(&self, model: &str, text: &str) -> Option<TokenResponse> {
        self.get(EmbeddingKind::Tokens, model, text)
    }

    pub fn put_tokens(&self, model: &str, text: &str, t: &TokenResponse) -> io::Result<()> {
        self.put(EmbeddingKind::Tokens, model, text, t)
    }
}

/// Prefetched embeddings. Lookups that were not fetched fail with
/// [`SimilarityError::Missing`], which marks the pair unscored.
#[derive(Debug, Default)]
pub struct EmbeddingTable {
    sentences: HashMap<(String, String), EmbeddingVector>,
    tokens: HashMap<(String, String), TokenEmbeddings>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.sentences.len() + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn missing(model: &str, text: &str) -> SimilarityError {
    SimilarityError::Missing {
        model: model.into(),
        text: text.into(),
    }
}

impl SentenceEmbedder for EmbeddingTable {
    fn embed(&self, model: &str, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        self.sentences
            .get(&(model.to_string(), text.to_string()))
            .cloned()
            .ok_or_else(|| missing(model, text))
    }
}

impl TokenEmbedder for EmbeddingTable {
    fn embed_tokens(&self, model: &str, text: &str) -> Result<TokenEmbeddings, SimilarityError> {
        self.tokens
            .get(&(model.to_string(), text.to_string()))
            .cloned()
            .ok_or_else(|| missing(model, text))
    }
}

/// A (model, text) pair that could not be embedded.
#[derive(Debug, Clone, Serialize)]
pub struct EmbedFailure {
    pub model: String,
    pub text: String,
    pub error: String,
}

fn token_embeddings(r: TokenResponse) -> Result<TokenEmbeddings, SimilarityError> {
    let vectors = r
        .vectors
        .into_iter()
        .map(EmbeddingVector::new)
        .collect::<Result<Vec<_>, _>>()?;
    TokenEmbeddings::new(r.tokens, vectors)
}

/// Fetches embeddings of `kind` for every distinct (model, text) request,
/// reading and filling `cache` when given.
pub async fn prefetch(
    client: &EmbeddingClient,
    cache: Option<&EmbeddingCache>,
    kind: EmbeddingKind,
    requests: impl IntoIterator<Item = (String, String)>,
    max_parallel: usize,
) -> (EmbeddingTable, Vec<EmbedFailure>) {
    let wanted: BTreeSet<(String, String)> = requests.into_iter().collect();
    let mut table = EmbeddingTable::default();
    let mut failures = Vec::new();
    let mut todo: Vec<(String, String)> = Vec::new();
    for (model, text) in wanted {
        let hit = match (cache, kind) {
            (None, _) => false,
            (Some(c), EmbeddingKind::Sentence) => {
                match c.get_sentence(&model, &text).map(EmbeddingVector::new) {
                    Some(Ok(v)) => {
                        table.sentences.insert((model.clone(), text.clone()), v);
                        true
                    }
                    _ => false,
                }
            }
            (Some(c), EmbeddingKind::Tokens) => {
                match c.get_tokens(&model, &text).map(token_embeddings) {
                    Some(Ok(t)) => {
                        table.tokens.insert((model.clone(), text.clone()), t);
                        true
                    }
                    _ => false,
                }
            }
        };
        if !hit {
            todo.push((model, text));
        }
    }
    let store_failure =
        |failures: &mut Vec<EmbedFailure>, model: &str, text: &str, error: String| {
            tracing::warn!(model, error = %error, "embedding failed");
            failures.push(EmbedFailure {
                model: model.into(),
                text: text.into(),
                error,
            });
        };

    match kind {
        EmbeddingKind::Sentence => {
            let mut by_model: Vec<(String, Vec<String>)> = Vec::new();
            for (model, text) in todo {
                match by_model.last_mut() {
                    Some((m, texts)) if *m == model && texts.len() < SENTENCE_BATCH => {
                        texts.push(text)
                    }
                    _ => by_model.push((model, vec![text])),
                }
            }
            let mut results = stream::iter(by_model)
                .map(|(model, texts)| async move {
                    let results = match client.embed_sentences(&model, &texts).await {
                        // One unacceptable input rejects the whole batch; retry
                        // the texts one by one so the others still get scored.
                        Err(HttpError::Status {
                            status: 400..=499, ..
                        }) if texts.len() > 1 => {
                            let mut each = Vec::with_capacity(texts.len());
                            for t in &texts {
                                each.push(
                                    client
                                        .embed_sentences(&model, std::slice::from_ref(t))
                                        .await
                                        .map(|mut v| v.remove(0)),
                                );
                            }
                            each
                        }
                        Ok(vectors) => vectors.into_iter().map(Ok).collect(),
                        Err(e) => texts.iter().map(|_| Err(e.clone())).collect(),
                    };
                    (model, texts, results)
                })
                .buffered(max_parallel.max(1));
            while let Some((model, texts, results)) = results.next().await {
                for (text, result) in texts.into_iter().zip(results) {
                    match result {
                        Ok(v) => match EmbeddingVector::new(v.clone()) {
                            Ok(ev) => {
                                if let Some(c) = cache {
                                    if let Err(e) = c.put_sentence(&model, &text, &v) {
                                        tracing::warn!(error = %e, "embedding cache write failed");
                                    }
                                }
                                table.sentences.insert((model.clone(), text), ev);
                            }
                            Err(e) => store_failure(&mut failures, &model, &text, e.to_string()),
                        },
                        Err(e) => store_failure(&mut failures, &model, &text, e.to_string()),
                    }
                }
            }
        }
        EmbeddingKind::Tokens => {
            let mut results = stream::iter(todo)
                .map(|(model, text)| async move {
                    let r = client.embed_tokens(&model, &text).await;
                    (model, text, r)
                })
                .buffered(max_parallel.max(1));
            while let Some((model, text, result)) = results.next().await {
                let parsed = result.map_err(|e| e.to_string()).and_then(|r| {
                    token_embeddings(r.clone())
                        .map(|t| (r, t))
                        .map_err(|e| e.to_string())
                });
                match parsed {
                    Ok((raw, t)) => {
                        if let Some(c) = cache {
                            if let Err(e) = c.put_tokens(&model, &text, &raw) {
                                tracing::warn!(error = %e, "embedding cache write failed");
                            }
                        }
                        table.tokens.insert((model, text), t);
                    }
                    Err(e) => store_failure(&mut failures, &model, &text, e),
                }
            }
        }
    }
    (table, failures)
}
