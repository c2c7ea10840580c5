//! Normalization of raw generations before scoring.
//!
//! Three rules, applied in order: drop an echoed prompt, keep only the first
//! sentence (completion mode), and delete concept mentions (open-ended modes).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::generation::{GenerationRecord, Variant, COMPLETION_PREFIX};
use crate::suite::{GenerationMode, PromptInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessPolicy {
    pub strip_echo: bool,
    /// Only ever applied to completion-mode instances.
    pub truncate_first_sentence: bool,
    /// Sentence terminators keyed by language tag. A crosslingual tag such as
    /// `zh-en` falls back to its leading language.
    pub sentence_terminators: BTreeMap<String, Vec<char>>,
    pub removal_case_insensitive: bool,
}

impl Default for PostprocessPolicy {
    fn default() -> Self {
        let mut sentence_terminators = BTreeMap::new();
        sentence_terminators.insert("en".to_string(), vec!['.']);
        sentence_terminators.insert("he".to_string(), vec!['.']);
        sentence_terminators.insert("zh".to_string(), vec!['。', '.']);
        Self {
            strip_echo: true,
            truncate_first_sentence: true,
            sentence_terminators,
            removal_case_insensitive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no sentence terminators configured for language {0:?}")]
pub struct PolicyError(pub String);

impl PostprocessPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.sentence_terminators.iter().find(|(_, t)| t.is_empty()) {
            Some((lang, _)) => Err(PolicyError(lang.clone())),
            None => Ok(()),
        }
    }

    /// Terminators for `language`: exact tag, then the part before the first
    /// `-`, then English.
    pub fn terminators_for(&self, language: &str) -> &[char] {
        let base = language.split('-').next().unwrap_or(language);
        self.sentence_terminators
            .get(language)
            .or_else(|| self.sentence_terminators.get(base))
            .or_else(|| self.sentence_terminators.get("en"))
            .map(Vec::as_slice)
            .unwrap_or(&['.'])
    }
}

/// Letters and digits of scripts written with spaces between words. Han,
/// kana, Hangul and Thai runs have no word boundaries, so they never block a
/// match.
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !is_unspaced_script(c)
}

fn is_unspaced_script(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0EFF        // Thai, Lao
        | 0x1100..=0x11FF      // Hangul Jamo
        | 0x3040..=0x30FF      // Hiragana, Katakana
        | 0x3400..=0x4DBF      // CJK Extension A
        | 0x4E00..=0x9FFF      // CJK Unified Ideographs
        | 0xAC00..=0xD7AF      // Hangul syllables
        | 0xF900..=0xFAFF      // CJK compatibility
        | 0x20000..=0x3134F) // CJK Extensions B..G
}

/// Byte offset in `hay` just past a whitespace-insensitive match of `needle`
/// at the start of `hay`, or `None`. A needle ending in a word character must
/// not stop in the middle of a word.
fn match_prefix_ws(hay: &str, needle: &str) -> Option<usize> {
    let mut pos = 0;
    for (i, word) in needle.split_whitespace().enumerate() {
        if i > 0 {
            let rest = &hay[pos..];
            let trimmed = rest.trim_start();
            if trimmed.len() == rest.len() {
                return None;
            }
            pos += rest.len() - trimmed.len();
        }
        if !hay[pos..].starts_with(word) {
            return None;
        }
        pos += word.len();
    }
    let last = needle.trim_end().chars().next_back()?;
    if is_word_char(last) && hay[pos..].chars().next().is_some_and(is_word_char) {
        return None;
    }
    Some(pos)
}

/// Removes an echoed prompt from the start of `generation`.
///
/// Whitespace runs compare equal regardless of length, and the
/// "Complete the sentence:" instruction is ignored on both sides. Partial
/// echoes are left alone.
pub fn strip_prompt_echo(prompt: &str, generation: &str) -> String {
    let prompt = prompt.trim();
    let needle = prompt
        .strip_prefix(COMPLETION_PREFIX)
        .unwrap_or(prompt)
        .trim();
    if needle.is_empty() {
        return generation.to_string();
    }
    let mut hay = generation.trim_start();
    if let Some(rest) = hay.strip_prefix(COMPLETION_PREFIX) {
        hay = rest.trim_start();
    }
    match match_prefix_ws(hay, needle) {
        Some(end) => hay[end..].trim_start().to_string(),
        None => generation.to_string(),
    }
}

/// Keeps everything up to and including the first sentence terminator for
/// `language`. No abbreviation handling: "Dr." ends the sentence.
pub fn truncate_first_sentence(text: &str, language: &str, policy: &PostprocessPolicy) -> String {
    let terminators = policy.terminators_for(language);
    match text.char_indices().find(|(_, c)| terminators.contains(c)) {
        Some((i, c)) => text[..i + c.len_utf8()].to_string(),
        None => text.to_string(),
    }
}

fn chars_match(a: char, b: char, case_insensitive: bool) -> bool {
    a == b || (case_insensitive && a.to_lowercase().eq(b.to_lowercase()))
}

/// Byte ranges of non-overlapping, boundary-delimited occurrences of `term`.
fn find_occurrences(text: &str, term: &str, case_insensitive: bool) -> Vec<(usize, usize)> {
    let term: Vec<char> = term.chars().collect();
    let (Some(&first), Some(&last)) = (term.first(), term.last()) else {
        return Vec::new();
    };
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + term.len() <= chars.len() {
        let matched = term
            .iter()
            .zip(&chars[i..i + term.len()])
            .all(|(&t, &(_, c))| chars_match(c, t, case_insensitive));
        let before_ok = i == 0 || !is_word_char(first) || !is_word_char(chars[i - 1].1);
        let after_ok = i + term.len() == chars.len()
            || !is_word_char(last)
            || !is_word_char(chars[i + term.len()].1);
        if matched && before_ok && after_ok {
            let start = chars[i].0;
            let end = chars.get(i + term.len()).map_or(text.len(), |(b, _)| *b);
            out.push((start, end));
            i += term.len();
        } else {
            i += 1;
        }
    }
    out
}

/// Whether `text` contains a boundary-delimited occurrence of any term.
pub fn contains_term(text: &str, terms: &[String], case_insensitive: bool) -> bool {
    terms
        .iter()
        .any(|t| !find_occurrences(text, t, case_insensitive).is_empty())
}

/// Deletes every occurrence of every removal term and collapses the
/// whitespace left behind. Repeats until no occurrence remains, since a
/// deletion can join the halves of a multi-word term.
pub fn remove_concept_mentions(
    text: &str,
    removal_terms: &[String],
    policy: &PostprocessPolicy,
) -> String {
    let ci = policy.removal_case_insensitive;
    let mut current = text.to_string();
    let mut changed = false;
    loop {
        let mut removed_any = false;
        for term in removal_terms.iter().filter(|t| !t.trim().is_empty()) {
            let ranges = find_occurrences(&current, term, ci);
            if ranges.is_empty() {
                continue;
            }
            removed_any = true;
            let mut next = String::with_capacity(current.len());
            let mut cursor = 0;
            for (s, e) in ranges {
                next.push_str(&current[cursor..s]);
                next.push(' ');
                cursor = e;
            }
            next.push_str(&current[cursor..]);
            current = next;
        }
        if !removed_any {
            break;
        }
        changed = true;
        current = current.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    if changed {
        current
    } else {
        text.to_string()
    }
}

fn pipeline(
    text: &str,
    prompt: &str,
    instance: &PromptInstance,
    policy: &PostprocessPolicy,
) -> String {
    let mut out = if policy.strip_echo {
        strip_prompt_echo(prompt, text)
    } else {
        text.to_string()
    };
    if instance.mode == GenerationMode::Completion && policy.truncate_first_sentence {
        out = truncate_first_sentence(&out, &instance.language, policy);
    }
    if instance.mode.is_open_ended() {
        out = remove_concept_mentions(&out, &instance.removal_terms, policy);
    }
    out
}

/// Sets `processed_text` from `raw_text`. The pipeline is iterated to a fixed
/// point; each step either leaves its input alone or shortens it, so this
/// terminates and the result is idempotent.
pub fn apply_policy(
    record: &GenerationRecord,
    instance: &PromptInstance,
    policy: &PostprocessPolicy,
) -> GenerationRecord {
    let prompt = match record.coords.variant {
        Variant::Test => &instance.test_prompt,
        Variant::Control => &instance.control_prompt,
    };
    let mut current = record.raw_text.clone();
    loop {
        let next = pipeline(&current, prompt, instance, policy);
        if next == current {
            break;
        }
        current = next;
    }
    GenerationRecord {
        processed_text: Some(current),
        ..record.clone()
    }
}
