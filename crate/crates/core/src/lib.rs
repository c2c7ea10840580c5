//! Core of the semantic-leakage harness.
//!
//! Everything here is pure computation over owned data: prompt-suite types,
//! generation coordinates, post-processing of raw generations, similarity
//! math (cosine and greedy token matching), the Leak-Rate metric, significance
//! and agreement statistics, blinded annotation sessions, the offline mock
//! bench, and report rendering. The crate is `no_std` and only needs `alloc`;
//! file formats, HTTP and the command line live in the `semleak` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod generation;
pub mod humaneval;
pub mod metric;
pub mod mockbench;
pub mod postprocess;
pub mod report;
pub mod similarity;
pub mod stats;
pub mod suite;

mod hash;

pub use generation::{
    build_prompt, cache_key, CellCoords, GenerationRecord, ModelEndpointConfig, RunPlan, Variant,
};
pub use humaneval::{AnnotationItem, AnnotationSession, BlindedItem, Label, Side};
pub use metric::{
    breakdown, leak_indicator, leak_rate, Axis, LeakRateReport, LeakTally, LeakValue, Scope,
};
pub use postprocess::{apply_policy, PostprocessPolicy};
pub use similarity::{bertscore, cosine, BertScore, EmbeddingVector, PairScore, TokenEmbeddings};
pub use stats::{
    kendall_tau, t_test_one_sample_greater, t_test_paired_greater, ComparisonLabel, TTestResult,
};
pub use suite::{GenerationMode, PromptInstance, PromptSuite};
