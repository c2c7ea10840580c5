//! Blinded A/B/Neither judgment sessions.
//!
//! Each item shows a concept and two generations; which side holds the test
//! generation is drawn from the session seed and never leaves the server.
//! Labels are append-only: an (annotator, item) pair is labeled at most once.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::StableHasher;
use crate::metric::{leak_rate, LeakValue};
use crate::similarity::PairScore;
use crate::stats::{self, diff_to_label, ComparisonLabel, StatsError};

/// The side of an item that shows the test generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

/// An annotator's answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    Neither,
}

/// Where a pair of generations came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSource {
    pub instance_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub sample_index: u32,
}

impl PairSource {
    fn matches(&self, p: &PairScore) -> bool {
        p.instance_id == self.instance_id
            && p.model_id == self.model_id
            && p.temperature.to_bits() == self.temperature.to_bits()
            && p.sample_index == self.sample_index
    }
}

/// Input to [`AnnotationSession::create`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPair {
    pub concept: String,
    pub test_gen: String,
    pub control_gen: String,
    pub source: PairSource,
}

/// Server-side view of an item, including the unblinding key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub concept_display: String,
    pub text_a: String,
    pub text_b: String,
    pub assignment: Side,
    pub source: PairSource,
}

impl AnnotationItem {
    pub fn unblind(&self, label: Label) -> ComparisonLabel {
        match (label, self.assignment) {
            (Label::Neither, _) => ComparisonLabel::Neither,
            (Label::A, Side::A) | (Label::B, Side::B) => ComparisonLabel::Test,
            _ => ComparisonLabel::Control,
        }
    }

    /// Inverse of [`unblind`](Self::unblind), for scripted annotators.
    pub fn blind(&self, label: ComparisonLabel) -> Label {
        match (label, self.assignment) {
            (ComparisonLabel::Neither, _) => Label::Neither,
            (ComparisonLabel::Test, Side::A) | (ComparisonLabel::Control, Side::B) => Label::A,
            _ => Label::B,
        }
    }
}

/// What an annotator is shown. Carries no assignment or variant information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedItem {
    pub item_id: String,
    pub concept_display: String,
    pub text_a: String,
    pub text_b: String,
    /// 1-based position of this task for the annotator.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub item_id: String,
    pub annotator_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator_id: String,
    pub labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub total: usize,
    pub annotators: Vec<AnnotatorProgress>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HumanEvalError {
    #[error("no pairs to annotate")]
    NoPairs,
    #[error("pair {0} has an empty generation")]
    EmptyGeneration(usize),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("annotator {annotator:?} already labeled item {item:?}")]
    DuplicateLabel { item: String, annotator: String },
    #[error("annotator id must be non-empty")]
    EmptyAnnotator,
    #[error("annotator {annotator:?} labeled {labeled} of {total} items")]
    Incomplete {
        annotator: String,
        labeled: usize,
        total: usize,
    },
    #[error("no automatic score for item {0:?}")]
    Misaligned(String),
    #[error("several automatic scores match item {0:?}; filter to one backend")]
    Ambiguous(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Human Leak-Rate with coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanLeakRate {
    pub leak_rate: f64,
    pub labeled: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    pub seed: u64,
    /// Give every annotator their own seed-derived item order instead of the
    /// shared one.
    #[serde(default)]
    pub per_annotator_order: bool,
    pub items: Vec<AnnotationItem>,
    pub annotators: Vec<String>,
    pub labels: Vec<LabelRecord>,
}

impl AnnotationSession {
    /// Shuffles `pairs` and draws each item's A/B placement, both from `seed`.
    pub fn create(
        session_id: impl Into<String>,
        pairs: Vec<AnnotationPair>,
        seed: u64,
        per_annotator_order: bool,
    ) -> Result<Self, HumanEvalError> {
        if pairs.is_empty() {
            return Err(HumanEvalError::NoPairs);
        }
        if let Some(i) = pairs
            .iter()
            .position(|p| p.test_gen.is_empty() || p.control_gen.is_empty())
        {
            return Err(HumanEvalError::EmptyGeneration(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut slots: Vec<Option<AnnotationPair>> = pairs.into_iter().map(Some).collect();
        let items = order
            .into_iter()
            .enumerate()
            .map(|(k, idx)| {
                let pair = slots[idx]
                    .take()
                    .expect("permutation visits each index once");
                let assignment = if rng.random_bool(0.5) {
                    Side::A
                } else {
                    Side::B
                };
                let (text_a, text_b) = match assignment {
                    Side::A => (pair.test_gen, pair.control_gen),
                    Side::B => (pair.control_gen, pair.test_gen),
                };
                AnnotationItem {
                    item_id: format!("item-{:04}", k + 1),
                    concept_display: pair.concept,
                    text_a,
                    text_b,
                    assignment,
                    source: pair.source,
                }
            })
            .collect();
        Ok(Self {
            session_id: session_id.into(),
            seed,
            per_annotator_order,
            items,
            annotators: Vec::new(),
            labels: Vec::new(),
        })
    }

    pub fn item(&self, item_id: &str) -> Option<&AnnotationItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Item indices in the order `annotator` sees them.
    pub fn order_for(&self, annotator: &str) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        if self.per_annotator_order {
            let seed = StableHasher::new().u64(self.seed).str(annotator).finish();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }

    pub fn label_of(&self, annotator: &str, item_id: &str) -> Option<Label> {
        self.labels
            .iter()
            .find(|r| r.annotator_id == annotator && r.item_id == item_id)
            .map(|r| r.label)
    }

    fn labeled_by(&self, annotator: &str) -> BTreeMap<&str, Label> {
        self.labels
            .iter()
            .filter(|r| r.annotator_id == annotator)
            .map(|r| (r.item_id.as_str(), r.label))
            .collect()
    }

    /// The next unlabeled item for `annotator`, or `None` when done.
    pub fn next_item(&self, annotator: &str) -> Option<BlindedItem> {
        let done = self.labeled_by(annotator);
        let item = self
            .order_for(annotator)
            .into_iter()
            .map(|i| &self.items[i])
            .find(|item| !done.contains_key(item.item_id.as_str()))?;
        Some(BlindedItem {
            item_id: item.item_id.clone(),
            concept_display: item.concept_display.clone(),
            text_a: item.text_a.clone(),
            text_b: item.text_b.clone(),
            position: done.len() + 1,
            total: self.items.len(),
        })
    }

    /// Records a label; relabeling the same item is rejected.
    pub fn submit_label(
        &mut self,
        item_id: &str,
        annotator: &str,
        label: Label,
    ) -> Result<AnnotatorProgress, HumanEvalError> {
        if annotator.is_empty() {
            return Err(HumanEvalError::EmptyAnnotator);
        }
        if self.item(item_id).is_none() {
            return Err(HumanEvalError::UnknownItem(item_id.into()));
        }
        if self.label_of(annotator, item_id).is_some() {
            return Err(HumanEvalError::DuplicateLabel {
                item: item_id.into(),
                annotator: annotator.into(),
            });
        }
        if !self.annotators.iter().any(|a| a == annotator) {
            self.annotators.push(annotator.to_string());
        }
        self.labels.push(LabelRecord {
            item_id: item_id.into(),
            annotator_id: annotator.into(),
            label,
        });
        Ok(AnnotatorProgress {
            annotator_id: annotator.into(),
            labeled: self.labeled_by(annotator).len(),
        })
    }

    pub fn progress(&self) -> Progress {
        Progress {
            session_id: self.session_id.clone(),
            total: self.items.len(),
            annotators: self
                .annotators
                .iter()
                .map(|a| AnnotatorProgress {
                    annotator_id: a.clone(),
                    labeled: self.labeled_by(a).len(),
                })
                .collect(),
        }
    }

    /// Unblinded labels in item order; `None` for items the annotator skipped.
    pub fn unblinded_labels(&self, annotator: &str) -> Vec<Option<ComparisonLabel>> {
        let done = self.labeled_by(annotator);
        self.items
            .iter()
            .map(|item| done.get(item.item_id.as_str()).map(|&l| item.unblind(l)))
            .collect()
    }

    fn complete_labels(&self, annotator: &str) -> Result<Vec<ComparisonLabel>, HumanEvalError> {
        let labels = self.unblinded_labels(annotator);
        let labeled = labels.iter().filter(|l| l.is_some()).count();
        if labeled < labels.len() {
            return Err(HumanEvalError::Incomplete {
                annotator: annotator.into(),
                labeled,
                total: labels.len(),
            });
        }
        Ok(labels.into_iter().flatten().collect())
    }

    /// Leak-Rate from one annotator's labels: test = 1, control = 0,
    /// neither = 0.5. Requires a complete labeling unless `allow_partial`.
    pub fn human_leak_rate(
        &self,
        annotator: &str,
        allow_partial: bool,
    ) -> Result<HumanLeakRate, HumanEvalError> {
        let labels = self.unblinded_labels(annotator);
        let total = labels.len();
        let values: Vec<LeakValue> = labels.iter().flatten().map(|l| l.leak_value()).collect();
        if values.len() < total && !allow_partial {
            return Err(HumanEvalError::Incomplete {
                annotator: annotator.into(),
                labeled: values.len(),
                total,
            });
        }
        let rate = leak_rate(&values).map_err(|_| HumanEvalError::Incomplete {
            annotator: annotator.into(),
            labeled: 0,
            total,
        })?;
        Ok(HumanLeakRate {
            leak_rate: rate,
            labeled: values.len(),
            total,
        })
    }

    /// Kendall's tau between two annotators' unblinded labels.
    pub fn agreement(&self, first: &str, second: &str) -> Result<f64, HumanEvalError> {
        let a: Vec<f64> = self
            .complete_labels(first)?
            .iter()
            .map(|l| l.as_real())
            .collect();
        let b: Vec<f64> = self
            .complete_labels(second)?
            .iter()
            .map(|l| l.as_real())
            .collect();
        Ok(stats::kendall_tau(&a, &b)?)
    }

    /// Kendall's tau between an annotator and labels derived from the scored
    /// differences of exactly the generations shown, thresholded at `epsilon`.
    /// `pair_scores` must come from a single backend.
    pub fn human_vs_auto(
        &self,
        annotator: &str,
        pair_scores: &[PairScore],
        epsilon: f64,
    ) -> Result<f64, HumanEvalError> {
        let human: Vec<f64> = self
            .complete_labels(annotator)?
            .iter()
            .map(|l| l.as_real())
            .collect();
        let auto = self.auto_labels(pair_scores, epsilon)?;
        let auto: Vec<f64> = auto.iter().map(|l| l.as_real()).collect();
        Ok(stats::kendall_tau(&human, &auto)?)
    }

    /// Automatic labels for every item, in item order.
    pub fn auto_labels(
        &self,
        pair_scores: &[PairScore],
        epsilon: f64,
    ) -> Result<Vec<ComparisonLabel>, HumanEvalError> {
        self.items
            .iter()
            .map(|item| {
                let mut matches = pair_scores.iter().filter(|p| item.source.matches(p));
                let first = matches
                    .next()
                    .ok_or_else(|| HumanEvalError::Misaligned(item.item_id.clone()))?;
                if matches.next().is_some() {
                    return Err(HumanEvalError::Ambiguous(item.item_id.clone()));
                }
                Ok(diff_to_label(first.diff, epsilon))
            })
            .collect()
    }

    /// Re-applies exported label records. Records identical to stored ones
    /// are skipped; conflicting ones are rejected.
    pub fn import_labels(&mut self, records: &[LabelRecord]) -> Result<usize, HumanEvalError> {
        let mut applied = 0;
        for r in records {
            if self.label_of(&r.annotator_id, &r.item_id) == Some(r.label) {
                continue;
            }
            self.submit_label(&r.item_id, &r.annotator_id, r.label)?;
            applied += 1;
        }
        Ok(applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::PairSims;
    use alloc::vec;

    fn pairs(n: usize) -> Vec<AnnotationPair> {
        (0..n)
            .map(|i| AnnotationPair {
                concept: format!("concept {i}"),
                test_gen: format!("test gen {i}"),
                control_gen: format!("control gen {i}"),
                source: PairSource {
                    instance_id: format!("inst-{i}"),
                    model_id: "m".into(),
                    temperature: 1.0,
                    sample_index: 0,
                },
            })
            .collect()
    }

    fn label_as(session: &mut AnnotationSession, annotator: &str, labels: &[ComparisonLabel]) {
        for (item, &l) in session.items.clone().iter().zip(labels) {
            session
                .submit_label(&item.item_id, annotator, item.blind(l))
                .unwrap();
        }
    }

    #[test]
    fn creation_is_deterministic_and_total() {
        let a = AnnotationSession::create("s", pairs(3), 7, false).unwrap();
        let b = AnnotationSession::create("s", pairs(3), 7, false).unwrap();
        assert_eq!(a, b);
        for item in &a.items {
            let i: usize = item.source.instance_id[5..].parse().unwrap();
            let test = format!("test gen {i}");
            match item.assignment {
                Side::A => assert_eq!(item.text_a, test),
                Side::B => assert_eq!(item.text_b, test),
            }
            assert_eq!(item.concept_display, format!("concept {i}"));
        }
        let mut ids: Vec<_> = a
            .items
            .iter()
            .map(|i| i.source.instance_id.clone())
            .collect();
        ids.sort();
        assert_eq!(ids, vec!["inst-0", "inst-1", "inst-2"]);
    }

    #[test]
    fn creation_errors() {
        assert_eq!(
            AnnotationSession::create("s", vec![], 1, false),
            Err(HumanEvalError::NoPairs)
        );
        let mut p = pairs(2);
        p[1].control_gen.clear();
        assert_eq!(
            AnnotationSession::create("s", p, 1, false),
            Err(HumanEvalError::EmptyGeneration(1))
        );
    }

    #[test]
    fn labels_are_append_only() {
        let mut s = AnnotationSession::create("s", pairs(3), 1, false).unwrap();
        let id = s.items[0].item_id.clone();
        assert_eq!(s.submit_label(&id, "ann1", Label::A).unwrap().labeled, 1);
        assert!(matches!(
            s.submit_label(&id, "ann1", Label::B),
            Err(HumanEvalError::DuplicateLabel { .. })
        ));
        assert!(matches!(
            s.submit_label("item-9999", "ann1", Label::B),
            Err(HumanEvalError::UnknownItem(_))
        ));
        // another annotator may label the same item
        assert!(s.submit_label(&id, "ann2", Label::B).is_ok());
        assert_eq!(s.label_of("ann1", &id), Some(Label::A));
    }

    #[test]
    fn next_item_walks_and_finishes() {
        let mut s = AnnotationSession::create("s", pairs(3), 1, false).unwrap();
        let first = s.next_item("a").unwrap();
        assert_eq!((first.position, first.total), (1, 3));
        for _ in 0..3 {
            let next = s.next_item("a").unwrap();
            s.submit_label(&next.item_id, "a", Label::Neither).unwrap();
        }
        assert!(s.next_item("a").is_none());
        assert_eq!(s.progress().annotators[0].labeled, 3);
    }

    #[test]
    fn per_annotator_orders_differ_but_cover_all_items() {
        let s = AnnotationSession::create("s", pairs(20), 3, true).unwrap();
        let a = s.order_for("alice");
        let b = s.order_for("bob");
        assert_ne!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_eq!(s.order_for("alice"), a);
    }

    #[test]
    fn human_leak_rate_unblinds() {
        use ComparisonLabel::*;
        let mut s = AnnotationSession::create("s", pairs(4), 11, false).unwrap();
        label_as(&mut s, "a", &[Test, Test, Control, Neither]);
        assert_eq!(s.human_leak_rate("a", false).unwrap().leak_rate, 62.5);

        let mut s = AnnotationSession::create("s", pairs(4), 11, false).unwrap();
        for item in s.items.clone() {
            s.submit_label(&item.item_id, "n", Label::Neither).unwrap();
            let test_side = if item.assignment == Side::A {
                Label::A
            } else {
                Label::B
            };
            s.submit_label(&item.item_id, "t", test_side).unwrap();
        }
        assert_eq!(s.human_leak_rate("n", false).unwrap().leak_rate, 50.0);
        assert_eq!(s.human_leak_rate("t", false).unwrap().leak_rate, 100.0);
    }

    #[test]
    fn partial_rate_needs_flag() {
        let mut s = AnnotationSession::create("s", pairs(4), 11, false).unwrap();
        let id = s.items[0].item_id.clone();
        s.submit_label(&id, "a", Label::Neither).unwrap();
        assert!(matches!(
            s.human_leak_rate("a", false),
            Err(HumanEvalError::Incomplete {
                labeled: 1,
                total: 4,
                ..
            })
        ));
        let partial = s.human_leak_rate("a", true).unwrap();
        assert_eq!((partial.leak_rate, partial.labeled), (50.0, 1));
    }

    #[test]
    fn agreement_extremes() {
        use ComparisonLabel::*;
        let labels = [Test, Control, Neither, Test, Control, Test];
        let swapped: Vec<_> = labels.iter().map(|l| l.swapped()).collect();
        let mut s = AnnotationSession::create("s", pairs(6), 5, false).unwrap();
        label_as(&mut s, "a", &labels);
        label_as(&mut s, "b", &swapped);
        assert!((s.agreement("a", "a").unwrap() - 1.0).abs() < 1e-15);
        assert!((s.agreement("a", "b").unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn thresholding_annotator_agrees_with_auto_labels() {
        let mut s = AnnotationSession::create("s", pairs(8), 9, false).unwrap();
        let diffs = [0.2, -0.1, 0.01, 0.05, -0.02, -0.4, 0.03, 0.031];
        let scores: Vec<PairScore> = s
            .items
            .iter()
            .zip(diffs)
            .map(|(item, d)| {
                let src = &item.source;
                PairScore::new(
                    &src.instance_id,
                    "BS",
                    &src.model_id,
                    src.temperature,
                    src.sample_index,
                    PairSims::new(0.5 + d, 0.5, 0.0),
                )
            })
            .collect();
        let synthetic: Vec<ComparisonLabel> =
            scores.iter().map(|p| diff_to_label(p.diff, 0.03)).collect();
        label_as(&mut s, "synthetic", &synthetic);
        assert!((s.human_vs_auto("synthetic", &scores, 0.03).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            s.human_vs_auto("synthetic", &scores[1..], 0.03),
            Err(HumanEvalError::Misaligned(_))
        ));
        let doubled: Vec<_> = scores.iter().chain(&scores).cloned().collect();
        assert!(matches!(
            s.human_vs_auto("synthetic", &doubled, 0.03),
            Err(HumanEvalError::Ambiguous(_))
        ));
    }

    #[test]
    fn import_is_idempotent_and_rejects_conflicts() {
        let mut s = AnnotationSession::create("s", pairs(3), 2, false).unwrap();
        let recs: Vec<LabelRecord> = s
            .items
            .iter()
            .map(|i| LabelRecord {
                item_id: i.item_id.clone(),
                annotator_id: "x".into(),
                label: Label::A,
            })
            .collect();
        assert_eq!(s.import_labels(&recs).unwrap(), 3);
        assert_eq!(s.import_labels(&recs).unwrap(), 0);
        let conflict = LabelRecord {
            label: Label::B,
            ..recs[0].clone()
        };
        assert!(s.import_labels(&[conflict]).is_err());
    }
}
