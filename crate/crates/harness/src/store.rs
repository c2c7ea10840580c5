//! Append-only run store: one JSONL file of [`GenerationRecord`]s per
//! (suite, model). Writes are serialized behind a mutex and flushed per line.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use semleak_core::generation::{cache_key, CellCoords, GenerationRecord};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("run store {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("run store {path}:{line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

struct Inner {
    file: File,
    keys: HashSet<String>,
    records: Vec<GenerationRecord>,
}

pub struct RunStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

/// File-system-safe name that stays unique for distinct ids.
pub fn safe_file_stem(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    let digest = hex::encode(Sha256::digest(id.as_bytes()));
    format!("{cleaned}-{}", &digest[..8])
}

impl RunStore {
    /// Opens (or creates) the store for `suite_name` and `model_id` in `dir`.
    pub fn open(dir: &Path, suite_name: &str, model_id: &str) -> Result<Self, StoreError> {
        Self::open_path(&dir.join(format!(
            "{}__{}.jsonl",
            safe_file_stem(suite_name),
            safe_file_stem(model_id)
        )))
    }

    pub fn open_path(path: &Path) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut keys = HashSet::new();
        let mut records = Vec::new();
        let mut truncate_to = None;
        let mut needs_newline = false;
        if path.exists() {
            let text = fs::read_to_string(path).map_err(io_err)?;
            let complete = text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<GenerationRecord>(line) {
                    Ok(r) => {
                        if keys.insert(cache_key(&r.coords)) {
                            records.push(r);
                        }
                    }
                    // An interrupted append leaves a partial last line; cut it off.
                    Err(_) if i + 1 == lines.len() && !complete => {
                        tracing::warn!(path = %path.display(), line = i + 1, "dropping truncated record");
                        truncate_to = Some(text.rfind('\n').map_or(0, |p| p + 1) as u64);
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            needs_newline = truncate_to.is_none() && !text.is_empty() && !complete;
        }
        if let Some(len) = truncate_to {
            OpenOptions::new()
                .write(true)
                .open(path)
                .and_then(|f| f.set_len(len))
                .map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        if needs_newline {
            file.write_all(b"\n").map_err(io_err)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new(Inner {
                file,
                keys,
                records,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, coords: &CellCoords) -> bool {
        self.inner
            .lock()
            .expect("store lock")
            .keys
            .contains(&cache_key(coords))
    }

    /// Appends `record` unless its cell is already stored. Returns whether it
    /// was written.
    pub fn append(&self, record: &GenerationRecord) -> Result<bool, StoreError> {
        let key = cache_key(&record.coords);
        let mut inner = self.inner.lock().expect("store lock");
        if inner.keys.contains(&key) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(record).expect("records always serialize");
        line.push('\n');
        inner
            .file
            .write_all(line.as_bytes())
            .and_then(|_| inner.file.flush())
            .map_err(|source| StoreError::Io {
                path: self.path.display().to_string(),
                source,
            })?;
        inner.keys.insert(key);
        inner.records.push(record.clone());
        Ok(true)
    }

    /// Stored records in append order.
    pub fn records(&self) -> Vec<GenerationRecord> {
        self.inner.lock().expect("store lock").records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads every record from a store file without opening it for writing.
pub fn read_records(path: &Path) -> Result<Vec<GenerationRecord>, StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
