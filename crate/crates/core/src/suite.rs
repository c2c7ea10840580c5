//! Prompt suite: concept/test/control triples and their validation.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// How a prompt is expected to be answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Short sentence completion ("He works as a").
    Completion,
    /// Open-ended story about a named child.
    Story,
    /// Open-ended recipe suggestion.
    Recipe,
}

impl GenerationMode {
    pub fn is_open_ended(self) -> bool {
        !matches!(self, GenerationMode::Completion)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Completion => "completion",
            GenerationMode::Story => "story",
            GenerationMode::Recipe => "recipe",
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One concept/test/control triple.
///
/// `category` and `language` are open tags (`"color"`, `"idiom"`, `"en"`,
/// `"zh-en"`, ...). `concept_eval` is the string similarity is scored against;
/// it is only stored when it differs from `concept` (crosslingual prompts
/// score against the English concept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptInstance {
    pub id: String,
    pub category: String,
    pub language: String,
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_eval: Option<String>,
    pub test_prompt: String,
    pub control_prompt: String,
    pub mode: GenerationMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removal_terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl PromptInstance {
    /// A completion-mode instance with `concept_eval` equal to `concept`.
    pub fn completion(
        id: impl Into<String>,
        category: impl Into<String>,
        concept: impl Into<String>,
        test_prompt: impl Into<String>,
        control_prompt: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            language: "en".into(),
            concept: concept.into(),
            concept_eval: None,
            test_prompt: test_prompt.into(),
            control_prompt: control_prompt.into(),
            mode: GenerationMode::Completion,
            removal_terms: Vec::new(),
            notes: None,
        }
    }

    /// The string the generations are scored against.
    pub fn concept_eval(&self) -> &str {
        self.concept_eval.as_deref().unwrap_or(&self.concept)
    }
}

/// A broken invariant on a single instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.rule)
    }
}

/// Checks the per-instance invariants. An empty result means the instance is valid.
pub fn validate_instance(instance: &PromptInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut non_empty = |field: &'static str, value: &str, rule: &'static str| {
        if value.trim().is_empty() {
            out.push(Violation { field, rule });
        }
    };
    non_empty("id", &instance.id, "id must be non-empty");
    non_empty("concept", &instance.concept, "concept must be non-empty");
    non_empty(
        "test_prompt",
        &instance.test_prompt,
        "test_prompt must be non-empty",
    );
    non_empty(
        "control_prompt",
        &instance.control_prompt,
        "control_prompt must be non-empty",
    );
    if let Some(eval) = &instance.concept_eval {
        non_empty(
            "concept_eval",
            eval,
            "concept_eval must be non-empty when present",
        );
    }
    if instance.mode.is_open_ended() {
        if instance.removal_terms.is_empty() {
            out.push(Violation {
                field: "removal_terms",
                rule: "removal_terms required for open-ended mode",
            });
        } else if instance.removal_terms.iter().any(|t| t.trim().is_empty()) {
            out.push(Violation {
                field: "removal_terms",
                rule: "removal_terms must not contain empty terms",
            });
        }
    } else if !instance.removal_terms.is_empty() {
        out.push(Violation {
            field: "removal_terms",
            rule: "removal_terms must be empty for completion mode",
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SuiteError {
    #[error("empty suite")]
    Empty,
    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),
    #[error("instance {id:?}: {}", join_violations(.violations))]
    Invalid {
        id: String,
        violations: Vec<Violation>,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.rule).collect::<Vec<_>>().join("; ")
}

/// A validated, immutable prompt suite.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSuite {
    name: String,
    instances: Vec<PromptInstance>,
    source_path: String,
}

impl PromptSuite {
    pub fn new(
        name: impl Into<String>,
        instances: Vec<PromptInstance>,
        source_path: impl Into<String>,
    ) -> Result<Self, SuiteError> {
        if instances.is_empty() {
            return Err(SuiteError::Empty);
        }
        let mut seen = BTreeSet::new();
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(SuiteError::DuplicateId(inst.id.clone()));
            }
            let violations = validate_instance(inst);
            if !violations.is_empty() {
                return Err(SuiteError::Invalid {
                    id: inst.id.to_string(),
                    violations,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            instances,
            source_path: source_path.into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn instances(&self) -> &[PromptInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PromptInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn yellow() -> PromptInstance {
        PromptInstance::completion(
            "color-01",
            "color",
            "yellow",
            "He likes yellow. He works as a",
            "He works as a",
        )
    }

    #[test]
    fn valid_completion_instance_has_no_violations() {
        assert!(validate_instance(&yellow()).is_empty());
    }

    #[test]
    fn story_without_removal_terms_is_rejected() {
        let mut inst = yellow();
        inst.mode = GenerationMode::Story;
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(
            v[0].to_string(),
            "removal_terms required for open-ended mode"
        );
    }

    #[test]
    fn empty_concept_is_rejected() {
        let mut inst = yellow();
        inst.concept = String::new();
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "concept must be non-empty");
        assert_eq!(v[0].field, "concept");
    }

    #[test]
    fn completion_with_removal_terms_is_rejected() {
        let mut inst = yellow();
        inst.removal_terms = vec!["yellow".into()];
        assert_eq!(validate_instance(&inst)[0].field, "removal_terms");
    }

    #[test]
    fn validation_is_pure() {
        let mut inst = yellow();
        inst.test_prompt = " ".into();
        assert_eq!(validate_instance(&inst), validate_instance(&inst));
    }

    #[test]
    fn concept_eval_defaults_to_concept() {
        let mut inst = yellow();
        assert_eq!(inst.concept_eval(), "yellow");
        inst.concept_eval = Some("koalas".into());
        assert_eq!(inst.concept_eval(), "koalas");
    }

    #[test]
    fn suite_rejects_empty_and_duplicates() {
        assert_eq!(PromptSuite::new("s", vec![], "p"), Err(SuiteError::Empty));
        let mut other = yellow();
        other.id = "x".into();
        let err = PromptSuite::new("s", vec![other.clone(), other], "p").unwrap_err();
        assert_eq!(err, SuiteError::DuplicateId("x".into()));
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn suite_lookup() {
        let suite = PromptSuite::new("s", vec![yellow()], "p").unwrap();
        assert_eq!(suite.len(), 1);
        assert_eq!(suite.get("color-01").unwrap().concept, "yellow");
        assert!(suite.get("nope").is_none());
    }
}
