//! Endpoint configuration files, TOML or JSON by extension.

use std::path::Path;

use semleak_core::generation::ModelEndpointConfig;
use semleak_core::similarity::SimilarityBackendConfig;
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("environment variable {0} is not set")]
    MissingToken(String),
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigFileError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Read {
        path: display.clone(),
        source,
    })?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => toml::from_str(&text).map_err(|e| e.to_string()),
    };
    parsed.map_err(|message| ConfigFileError::Parse {
        path: display,
        message,
    })
}

pub fn load_model_config(path: &Path) -> Result<ModelEndpointConfig, ConfigFileError> {
    let cfg: ModelEndpointConfig = load(path)?;
    cfg.validate().map_err(|e| ConfigFileError::Invalid {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn load_backend_config(path: &Path) -> Result<SimilarityBackendConfig, ConfigFileError> {
    let cfg: SimilarityBackendConfig = load(path)?;
    let invalid = |message: &str| ConfigFileError::Invalid {
        path: path.display().to_string(),
        message: message.into(),
    };
    if cfg.backend_id.is_empty() {
        return Err(invalid("backend_id must be non-empty"));
    }
    if cfg.max_parallel_requests == 0 {
        return Err(invalid("max_parallel_requests must be at least 1"));
    }
    Ok(cfg)
}

/// Reads the bearer token named by `env`, if any.
pub fn token_from_env(env: Option<&str>) -> Result<Option<String>, ConfigFileError> {
    match env {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| ConfigFileError::MissingToken(name.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use semleak_core::similarity::{BackendKind, BertScoreComponent};

    #[test]
    fn model_config_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gpt.toml");
        std::fs::write(
            &path,
            "model_id = \"gpt-4o\"\nbase_url = \"https://api.example.com/v1\"\nauth_token_env = \"OPENAI_API_KEY\"\nuse_completion_prefix = true\nfamily = \"GPT\"\n",
        )
        .unwrap();
        let cfg = load_model_config(&path).unwrap();
        assert_eq!(cfg.model_id, "gpt-4o");
        assert!(cfg.use_completion_prefix);
        assert_eq!(cfg.max_parallel_requests, 4);
        assert_eq!(cfg.family(), "GPT");
    }

    #[test]
    fn backend_config_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bs.json");
        std::fs::write(
            &path,
            r#"{"backend_id":"BS","kind":"token-bertscore","endpoint":"http://localhost:9","embed_model":"bert-base-uncased","language_routing":{"zh":"bert-base-chinese"}}"#,
        )
        .unwrap();
        let cfg = load_backend_config(&path).unwrap();
        assert_eq!(cfg.kind, BackendKind::TokenBertscore);
        assert_eq!(cfg.bertscore_component, BertScoreComponent::F1);
        assert_eq!(cfg.language_routing["zh"], "bert-base-chinese");
    }

    #[test]
    fn bad_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(&path, "model_id = \"\"\nbase_url = \"http://x\"\n").unwrap();
        assert!(matches!(
            load_model_config(&path),
            Err(ConfigFileError::Invalid { .. })
        ));
        std::fs::write(&path, "model_id = ").unwrap();
        assert!(matches!(
            load_model_config(&path),
            Err(ConfigFileError::Parse { .. })
        ));
    }
}
