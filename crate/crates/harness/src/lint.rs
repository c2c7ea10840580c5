//! Soft checks on suites that load fine but are probably mistakes.

use semleak_core::suite::PromptSuite;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintWarning {
    pub instance_id: String,
    pub message: String,
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

pub fn lint_suite(suite: &PromptSuite) -> Vec<LintWarning> {
    let mut out = Vec::new();
    for inst in suite.instances() {
        let mut warn = |message: String| {
            out.push(LintWarning {
                instance_id: inst.id.clone(),
                message,
            })
        };
        if inst.test_prompt == inst.control_prompt {
            warn("test and control prompts are identical".into());
        }
        if !contains_ci(&inst.test_prompt, &inst.concept) {
            warn(format!(
                "test prompt does not mention the concept {:?}",
                inst.concept
            ));
        }
        if contains_ci(&inst.control_prompt, &inst.concept) {
            warn(format!(
                "control prompt mentions the concept {:?}",
                inst.concept
            ));
        }
        for term in &inst.removal_terms {
            if contains_ci(&inst.control_prompt, term) {
                warn(format!("control prompt contains removal term {term:?}"));
            }
        }
    }
    out
}
