//! Line-delimited JSON suite files.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use semleak_core::suite::{PromptInstance, PromptSuite, SuiteError};

#[derive(Debug, thiserror::Error)]
pub enum SuiteIoError {
    #[error("cannot read suite {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid { path: String, source: SuiteError },
    #[error("cannot write suite {path}: {source}")]
    Write { path: String, source: io::Error },
}

/// Suite name derived from the file stem.
fn suite_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "suite".into())
}

/// Parses suite records; blank lines are skipped, line numbers are 1-based.
pub fn parse_suite(text: &str, name: &str, source_path: &str) -> Result<PromptSuite, SuiteIoError> {
    let mut instances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: PromptInstance =
            serde_json::from_str(line).map_err(|e| SuiteIoError::Malformed {
                path: source_path.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        instances.push(inst);
    }
    PromptSuite::new(name, instances, source_path).map_err(|source| SuiteIoError::Invalid {
        path: source_path.into(),
        source,
    })
}

pub fn load_suite(path: &Path) -> Result<PromptSuite, SuiteIoError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| SuiteIoError::Read {
        path: display.clone(),
        source,
    })?;
    parse_suite(&text, &suite_name(path), &display)
}

pub fn write_suite(path: &Path, instances: &[PromptInstance]) -> Result<(), SuiteIoError> {
    let err = |source| SuiteIoError::Write {
        path: path.display().to_string(),
        source,
    };
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(err)?);
    for inst in instances {
        let line = serde_json::to_string(inst).expect("suite records always serialize");
        writeln!(out, "{line}").map_err(err)?;
    }
    out.flush().map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    const YELLOW: &str = r#"{"id":"color-01","category":"color","language":"en","concept":"yellow","test_prompt":"He likes yellow. He works as a","control_prompt":"He works as a","mode":"completion"}"#;

    #[test]
    fn parses_one_record() {
        let suite = parse_suite(YELLOW, "s", "s.jsonl").unwrap();
        assert_eq!(suite.len(), 1);
        assert_eq!(suite.instances()[0].concept, "yellow");
    }

    #[test]
    fn empty_file_is_empty_suite() {
        let err = parse_suite("\n\n", "s", "s.jsonl").unwrap_err();
        assert!(err.to_string().contains("empty suite"), "{err}");
    }

    #[test]
    fn duplicate_id_is_named() {
        let line = YELLOW.replace("color-01", "x");
        let err = parse_suite(&format!("{line}\n{line}\n"), "s", "s.jsonl").unwrap_err();
        assert!(err.to_string().contains("\"x\""), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_suite(&format!("{YELLOW}\n\n{{not json\n"), "s", "s.jsonl").unwrap_err();
        assert!(
            matches!(err, SuiteIoError::Malformed { line: 3, .. }),
            "{err}"
        );
        let extra = YELLOW.replace("\"mode\"", "\"colour\":1,\"mode\"");
        assert!(matches!(
            parse_suite(&extra, "s", "p"),
            Err(SuiteIoError::Malformed { line: 1, .. })
        ));
    }
}
