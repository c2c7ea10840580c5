//! Generation grid: endpoint configuration, the run plan, per-cell records and
//! their cache keys. The HTTP collector lives in the `semleak` crate.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::suite::{GenerationMode, PromptInstance, PromptSuite};

/// Instruction prepended to completion prompts for chat-tuned models.
pub const COMPLETION_PREFIX: &str = "Complete the sentence:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Test,
    Control,
}

impl Variant {
    pub const BOTH: [Variant; 2] = [Variant::Test, Variant::Control];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Test => "test",
            Variant::Control => "control",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_max_tokens_completion() -> u32 {
    100
}
fn default_max_tokens_open() -> u32 {
    300
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_parallel() -> usize {
    4
}

/// A chat-completions style model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpointConfig {
    pub model_id: String,
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. No header is
    /// sent when unset.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default)]
    pub use_completion_prefix: bool,
    #[serde(default = "default_max_tokens_completion")]
    pub max_tokens_completion: u32,
    #[serde(default = "default_max_tokens_open")]
    pub max_tokens_open: u32,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    /// Family label used to group rows when rendering tables.
    #[serde(default)]
    pub family: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("model_id must be non-empty")]
    ModelId,
    #[error("base_url must be non-empty")]
    BaseUrl,
    #[error("max_tokens_open ({open}) must be >= max_tokens_completion ({completion}) >= 1")]
    TokenCaps { completion: u32, open: u32 },
    #[error("max_parallel_requests must be >= 1")]
    Parallelism,
    #[error("request_timeout_secs must be >= 1")]
    Timeout,
    #[error("temperatures must be non-empty, finite and >= 0")]
    Temperatures,
    #[error("samples_per_cell must be >= 1")]
    Samples,
    #[error("variants must be non-empty")]
    Variants,
}

impl ModelEndpointConfig {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            auth_token_env: None,
            use_completion_prefix: false,
            max_tokens_completion: default_max_tokens_completion(),
            max_tokens_open: default_max_tokens_open(),
            request_timeout_secs: default_timeout_secs(),
            max_parallel_requests: default_parallel(),
            family: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_id.trim().is_empty() {
            return Err(ConfigError::ModelId);
        }
        if self.base_url.trim().is_empty() {
            return Err(ConfigError::BaseUrl);
        }
        if self.max_tokens_completion < 1 || self.max_tokens_open < self.max_tokens_completion {
            return Err(ConfigError::TokenCaps {
                completion: self.max_tokens_completion,
                open: self.max_tokens_open,
            });
        }
        if self.max_parallel_requests < 1 {
            return Err(ConfigError::Parallelism);
        }
        if self.request_timeout_secs < 1 {
            return Err(ConfigError::Timeout);
        }
        Ok(())
    }

    pub fn max_tokens_for(&self, mode: GenerationMode) -> u32 {
        if mode.is_open_ended() {
            self.max_tokens_open
        } else {
            self.max_tokens_completion
        }
    }

    pub fn family(&self) -> &str {
        self.family.as_deref().unwrap_or(&self.model_id)
    }
}

fn default_temperatures() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5]
}
fn default_samples() -> u32 {
    10
}
fn default_variants() -> Vec<Variant> {
    Variant::BOTH.to_vec()
}

/// The sampling grid: every instance is generated for each variant, at each
/// temperature, `samples_per_cell` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples_per_cell: u32,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
}

impl Default for RunPlan {
    fn default() -> Self {
        Self {
            temperatures: default_temperatures(),
            samples_per_cell: default_samples(),
            variants: default_variants(),
        }
    }
}

impl RunPlan {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.temperatures.is_empty()
            || self.temperatures.iter().any(|t| !t.is_finite() || *t < 0.0)
        {
            return Err(ConfigError::Temperatures);
        }
        if self.samples_per_cell < 1 {
            return Err(ConfigError::Samples);
        }
        if self.variants.is_empty() {
            return Err(ConfigError::Variants);
        }
        Ok(())
    }

    /// Every cell of the grid for `suite` and `model_id`, in suite order.
    pub fn cells(&self, suite: &PromptSuite, model_id: &str) -> Vec<CellCoords> {
        let mut out = Vec::with_capacity(
            suite.len()
                * self.variants.len()
                * self.temperatures.len()
                * self.samples_per_cell as usize,
        );
        for inst in suite.instances() {
            for &variant in &self.variants {
                for &temperature in &self.temperatures {
                    for sample_index in 0..self.samples_per_cell {
                        out.push(CellCoords {
                            instance_id: inst.id.clone(),
                            variant,
                            model_id: model_id.into(),
                            temperature,
                            sample_index,
                        });
                    }
                }
            }
        }
        out
    }

    /// Whether `coords` lies on this plan's grid.
    pub fn contains(&self, coords: &CellCoords) -> bool {
        coords.sample_index < self.samples_per_cell
            && self.variants.contains(&coords.variant)
            && self
                .temperatures
                .iter()
                .any(|t| t.to_bits() == coords.temperature.to_bits())
    }
}

/// Address of one generation within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCoords {
    pub instance_id: String,
    pub variant: Variant,
    pub model_id: String,
    pub temperature: f64,
    pub sample_index: u32,
}

/// Deterministic key for a cell. Strings are length-prefixed so the map from
/// coordinates to keys is injective; temperatures use the shortest round-trip
/// decimal form.
pub fn cache_key(coords: &CellCoords) -> String {
    // -0.0 and 0.0 are the same temperature.
    let t = if coords.temperature == 0.0 {
        0.0
    } else {
        coords.temperature
    };
    format!(
        "{}:{}/{}/{}:{}/t{}/s{}",
        coords.instance_id.len(),
        coords.instance_id,
        coords.variant,
        coords.model_id.len(),
        coords.model_id,
        t,
        coords.sample_index
    )
}

/// Inverse of [`cache_key`].
pub fn parse_cache_key(key: &str) -> Option<CellCoords> {
    fn prefixed(s: &str) -> Option<(&str, &str)> {
        let (len, rest) = s.split_once(':')?;
        let len: usize = len.parse().ok()?;
        let value = rest.get(..len)?;
        Some((value, &rest[len..]))
    }
    let (instance_id, rest) = prefixed(key)?;
    let rest = rest.strip_prefix('/')?;
    let (variant, rest) = rest.split_once('/')?;
    let variant = match variant {
        "test" => Variant::Test,
        "control" => Variant::Control,
        _ => return None,
    };
    let (model_id, rest) = prefixed(rest)?;
    let (temperature, sample_index) = rest.strip_prefix("/t")?.split_once("/s")?;
    Some(CellCoords {
        instance_id: instance_id.into(),
        variant,
        model_id: model_id.into(),
        temperature: temperature.parse().ok()?,
        sample_index: sample_index.parse().ok()?,
    })
}

/// One model output for a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    #[serde(flatten)]
    pub coords: CellCoords,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processed_text: Option<String>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl GenerationRecord {
    /// Post-processing removed everything; the pair is still scored but flagged.
    pub fn is_empty_after_processing(&self) -> bool {
        self.processed_text
            .as_deref()
            .is_some_and(|t| t.trim().is_empty())
    }

    /// The text to score: processed if available, raw otherwise.
    pub fn scoring_text(&self) -> &str {
        self.processed_text.as_deref().unwrap_or(&self.raw_text)
    }
}

/// The exact text sent to the model for `instance` and `variant`.
pub fn build_prompt(
    instance: &PromptInstance,
    variant: Variant,
    config: &ModelEndpointConfig,
) -> String {
    let prompt = match variant {
        Variant::Test => &instance.test_prompt,
        Variant::Control => &instance.control_prompt,
    };
    if config.use_completion_prefix && instance.mode == GenerationMode::Completion {
        format!("{COMPLETION_PREFIX} {prompt}")
    } else {
        prompt.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn yellow() -> PromptInstance {
        PromptInstance::completion(
            "color-01",
            "color",
            "yellow",
            "He likes yellow. He works as a",
            "He works as a",
        )
    }

    fn coords(t: f64, s: u32) -> CellCoords {
        CellCoords {
            instance_id: "a".into(),
            variant: Variant::Test,
            model_id: "m".into(),
            temperature: t,
            sample_index: s,
        }
    }

    #[test]
    fn prompt_prefix_only_for_completion_mode() {
        let mut cfg = ModelEndpointConfig::new("gpt", "http://x");
        cfg.use_completion_prefix = true;
        assert_eq!(
            build_prompt(&yellow(), Variant::Test, &cfg),
            "Complete the sentence: He likes yellow. He works as a"
        );
        assert_eq!(
            build_prompt(&yellow(), Variant::Control, &cfg),
            "Complete the sentence: He works as a"
        );
        cfg.use_completion_prefix = false;
        assert_eq!(
            build_prompt(&yellow(), Variant::Test, &cfg),
            "He likes yellow. He works as a"
        );

        let mut story = yellow();
        story.mode = GenerationMode::Story;
        story.test_prompt = "Tell me a short story about a child named Coral.".into();
        cfg.use_completion_prefix = true;
        assert_eq!(build_prompt(&story, Variant::Test, &cfg), story.test_prompt);
    }

    #[test]
    fn cache_keys() {
        assert_eq!(cache_key(&coords(0.5, 0)), cache_key(&coords(0.5, 0)));
        assert_ne!(cache_key(&coords(0.5, 0)), cache_key(&coords(0.5, 1)));
        assert_ne!(cache_key(&coords(0.5, 0)), cache_key(&coords(1.5, 0)));
        assert_eq!(cache_key(&coords(-0.0, 0)), cache_key(&coords(0.0, 0)));
        // Separators inside ids cannot forge another key.
        let a = CellCoords {
            instance_id: "a/test/1:m".into(),
            ..coords(1.0, 0)
        };
        let b = CellCoords {
            instance_id: "a".into(),
            model_id: "m/test/1:m".into(),
            ..coords(1.0, 0)
        };
        assert_ne!(cache_key(&a), cache_key(&b));
        assert_eq!(cache_key(&coords(1.0, 3)), "1:a/test/1:m/t1/s3");
        let odd = CellCoords {
            instance_id: "a/t1/s2:x".into(),
            variant: Variant::Control,
            model_id: "org/model:7b".into(),
            temperature: 0.1 + 0.2,
            sample_index: 9,
        };
        assert_eq!(parse_cache_key(&cache_key(&odd)), Some(odd));
        assert_eq!(parse_cache_key("1:a/test/1:m/t1"), None);
    }

    #[test]
    fn grid_size_and_membership() {
        let suite = PromptSuite::new(
            "s",
            alloc::vec![
                yellow(),
                PromptInstance {
                    id: "b".to_string(),
                    ..yellow()
                }
            ],
            "p",
        )
        .unwrap();
        let plan = RunPlan::default();
        let cells = plan.cells(&suite, "m");
        assert_eq!(cells.len(), 2 * 2 * 4 * 10);
        assert!(cells.iter().all(|c| plan.contains(c)));
        assert!(!plan.contains(&coords(0.7, 0)));
        assert!(!plan.contains(&coords(0.5, 10)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelEndpointConfig::new("m", "u");
        assert!(cfg.validate().is_ok());
        cfg.max_tokens_open = 50;
        assert!(matches!(cfg.validate(), Err(ConfigError::TokenCaps { .. })));
        let plan = RunPlan {
            temperatures: alloc::vec![],
            ..RunPlan::default()
        };
        assert_eq!(plan.validate(), Err(ConfigError::Temperatures));
        let plan = RunPlan {
            samples_per_cell: 0,
            ..RunPlan::default()
        };
        assert_eq!(plan.validate(), Err(ConfigError::Samples));
    }
}
