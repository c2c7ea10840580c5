//! Annotation sessions on disk and the HTTP API that serves them.
//!
//! Reads use lock-free snapshots; each session has one writer lock, and every
//! accepted label is checkpointed to the session file before it is published.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use semleak_core::humaneval::{AnnotationSession, HumanEvalError, Label, LabelRecord};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum SessionFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate session id {0:?}")]
    Duplicate(String),
}

/// Deterministic serialization of a session.
pub fn session_bytes(session: &AnnotationSession) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(session).expect("sessions serialize");
    out.push(b'\n');
    out
}

/// Writes `session` atomically: temporary file, sync, rename.
pub fn save_session(path: &Path, session: &AnnotationSession) -> Result<(), SessionFileError> {
    let err = |source| SessionFileError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(err)?;
    f.write_all(&session_bytes(session))
        .and_then(|_| f.sync_all())
        .map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

pub fn load_session(path: &Path) -> Result<AnnotationSession, SessionFileError> {
    let bytes = fs::read(path).map_err(|source| SessionFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| SessionFileError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Path of the file holding session `id` inside `dir`.
pub fn session_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{}.json", crate::store::safe_file_stem(id)))
}

/// Label records as JSON lines.
pub fn write_labels(path: &Path, records: &[LabelRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(
            out,
            "{}",
            serde_json::to_string(r).expect("labels serialize")
        )?;
    }
    out.flush()
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>, SessionFileError> {
    let display = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| SessionFileError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SessionFileError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| SessionFileError::Parse {
                path: format!("{display}:{}", i + 1),
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

struct Slot {
    path: PathBuf,
    snapshot: ArcSwap<AnnotationSession>,
    writer: tokio::sync::Mutex<()>,
}

/// The sessions served by one annotation server.
#[derive(Default)]
pub struct SessionRegistry {
    slots: BTreeMap<String, Slot>,
}

impl SessionRegistry {
    /// Registers `session`, checkpointed to `path`.
    pub fn insert(
        &mut self,
        session: AnnotationSession,
        path: PathBuf,
    ) -> Result<(), SessionFileError> {
        let id = session.session_id.clone();
        if self.slots.contains_key(&id) {
            return Err(SessionFileError::Duplicate(id));
        }
        let slot = Slot {
            path,
            snapshot: ArcSwap::from_pointee(session),
            writer: tokio::sync::Mutex::new(()),
        };
        self.slots.insert(id, slot);
        Ok(())
    }

    /// Loads every `*.json` session in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, SessionFileError> {
        let err = |source| SessionFileError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(err)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        let mut reg = Self::default();
        for p in paths {
            let session = load_session(&p)?;
            reg.insert(session, p)?;
        }
        Ok(reg)
    }

    pub fn session_ids(&self) -> Vec<&str> {
        self.slots.keys().map(String::as_str).collect()
    }

    /// Current snapshot of session `id`.
    pub fn snapshot(&self, id: &str) -> Option<Arc<AnnotationSession>> {
        self.slots.get(id).map(|s| s.snapshot.load_full())
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/sessions", get(list_sessions))
            .route("/sessions/{id}/next", get(next_item))
            .route("/sessions/{id}/labels", post(submit_label))
            .route("/sessions/{id}/progress", get(progress))
            .with_state(self)
    }
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({"error": message.to_string()}))).into_response()
}

fn unknown_session(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown session {id:?}"))
}

async fn list_sessions(State(reg): State<Arc<SessionRegistry>>) -> Response {
    Json(json!({"sessions": reg.session_ids()})).into_response()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_item(
    State(reg): State<Arc<SessionRegistry>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NextQuery>,
) -> Response {
    let Some(session) = reg.snapshot(&id) else {
        return unknown_session(&id);
    };
    let Some(annotator) = q.annotator.filter(|a| !a.is_empty()) else {
        return error(
            StatusCode::BAD_REQUEST,
            "query parameter `annotator` is required",
        );
    };
    match session.next_item(&annotator) {
        Some(item) => Json(item).into_response(),
        None => Json(json!({"done": true, "total": session.items.len()})).into_response(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub item_id: String,
    pub annotator_id: String,
    pub label: Label,
}

async fn submit_label(
    State(reg): State<Arc<SessionRegistry>>,
    UrlPath(id): UrlPath<String>,
    Json(sub): Json<LabelSubmission>,
) -> Response {
    let Some(slot) = reg.slots.get(&id) else {
        return unknown_session(&id);
    };
    let _writer = slot.writer.lock().await;
    let mut next = (*slot.snapshot.load_full()).clone();
    let progress = match next.submit_label(&sub.item_id, &sub.annotator_id, sub.label) {
        Ok(p) => p,
        Err(e @ HumanEvalError::UnknownItem(_)) => return error(StatusCode::NOT_FOUND, e),
        Err(e @ HumanEvalError::DuplicateLabel { .. }) => return error(StatusCode::CONFLICT, e),
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let path = slot.path.clone();
    let to_save = next.clone();
    let saved = tokio::task::spawn_blocking(move || save_session(&path, &to_save)).await;
    match saved {
        Ok(Ok(())) => {
            slot.snapshot.store(Arc::new(next));
            Json(progress).into_response()
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn progress(
    State(reg): State<Arc<SessionRegistry>>,
    UrlPath(id): UrlPath<String>,
) -> Response {
    match reg.snapshot(&id) {
        Some(s) => Json(s.progress()).into_response(),
        None => unknown_session(&id),
    }
}
