//! Leak-Rate: the share of pairs where the concept is closer to the test
//! generation than to the control generation, with ties earning half credit.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::similarity::PairScore;
use crate::stats;
use crate::suite::PromptSuite;

/// Per-pair credit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakValue {
    /// sim_test > sim_control: 1
    Leak,
    /// sim_test < sim_control: 0
    NoLeak,
    /// equal within the tie tolerance: 0.5
    Tie,
}

impl LeakValue {
    pub fn as_f64(self) -> f64 {
        match self {
            LeakValue::Leak => 1.0,
            LeakValue::NoLeak => 0.0,
            LeakValue::Tie => 0.5,
        }
    }

    fn half_units(self) -> u64 {
        match self {
            LeakValue::Leak => 2,
            LeakValue::NoLeak => 0,
            LeakValue::Tie => 1,
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            LeakValue::Leak => LeakValue::NoLeak,
            LeakValue::NoLeak => LeakValue::Leak,
            LeakValue::Tie => LeakValue::Tie,
        }
    }
}

impl fmt::Display for LeakValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no outcomes to aggregate")]
    Empty,
    #[error("pair refers to unknown instance {0:?}")]
    UnknownInstance(String),
}

/// Credit for one pair. `|sim_test - sim_control| <= tie_epsilon` is a tie.
pub fn leak_indicator(sim_test: f64, sim_control: f64, tie_epsilon: f64) -> LeakValue {
    let diff = sim_test - sim_control;
    if libm::fabs(diff) <= tie_epsilon {
        LeakValue::Tie
    } else if diff > 0.0 {
        LeakValue::Leak
    } else {
        LeakValue::NoLeak
    }
}

/// Credit for a scored pair; a pair already marked as a tie stays one.
pub fn pair_outcome(pair: &PairScore, tie_epsilon: f64) -> LeakValue {
    if pair.tie {
        LeakValue::Tie
    } else {
        leak_indicator(pair.sim_test, pair.sim_control, tie_epsilon)
    }
}

// Rates are snapped to multiples of 2^-44, and rates above 50 are computed
// as 100 minus the snapped complement. Every grid value in [0, 50] has an
// exact complement in f64, so swapping test and control maps a rate L to
// exactly 100 - L.
const RATE_GRID: f64 = 17_592_186_044_416.0; // 2^44

fn snapped_percent(half_units: u64, n: u64) -> f64 {
    let raw = (100 * half_units) as f64 / (2 * n) as f64;
    libm::round(raw * RATE_GRID) / RATE_GRID
}

fn percent(half_units: u64, n: u64) -> f64 {
    if half_units > n {
        100.0 - snapped_percent(2 * n - half_units, n)
    } else {
        snapped_percent(half_units, n)
    }
}

/// Exact outcome counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakTally {
    pub leaks: u64,
    pub ties: u64,
    pub non_leaks: u64,
}

impl LeakTally {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a LeakValue>) -> Self {
        let mut t = Self::default();
        for &v in outcomes {
            t.push(v);
        }
        t
    }

    pub fn push(&mut self, v: LeakValue) {
        match v {
            LeakValue::Leak => self.leaks += 1,
            LeakValue::NoLeak => self.non_leaks += 1,
            LeakValue::Tie => self.ties += 1,
        }
    }

    pub fn n(&self) -> u64 {
        self.leaks + self.ties + self.non_leaks
    }

    pub fn swapped(&self) -> Self {
        Self {
            leaks: self.non_leaks,
            ties: self.ties,
            non_leaks: self.leaks,
        }
    }

    /// Leak-Rate in percent, `None` when empty.
    pub fn rate(&self) -> Option<f64> {
        let n = self.n();
        (n > 0).then(|| percent(2 * self.leaks + self.ties, n))
    }
}

/// 100 times the mean credit.
pub fn leak_rate(outcomes: &[LeakValue]) -> Result<f64, MetricError> {
    let half: u64 = outcomes.iter().map(|v| v.half_units()).sum();
    if outcomes.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(percent(half, outcomes.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Overall,
    Category,
    Temperature,
}

/// Which slice of the pairs a report covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "value", rename_all = "lowercase")]
pub enum Scope {
    Overall,
    Category(String),
    Temperature(f64),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Overall => f.write_str("overall"),
            Scope::Category(c) => write!(f, "category={c}"),
            Scope::Temperature(t) => write!(f, "temperature={t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum ScopeKey {
    Overall,
    Category(String),
    Temperature(TotalF64),
}

#[derive(Debug, Clone, Copy)]
struct TotalF64(f64);

impl PartialEq for TotalF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for TotalF64 {}
impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Aggregated Leak-Rate for one (backend, model, scope).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakRateReport {
    pub backend_id: String,
    pub model_id: String,
    pub scope: Scope,
    /// Scored pairs; flagged pairs are excluded.
    pub n: u64,
    /// Percent in [0, 100]; `None` when every pair was flagged.
    pub leak_rate: Option<f64>,
    /// One-sided t-test of the per-pair credits (x100) against 50.
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub flagged_count: u64,
    pub tally: LeakTally,
    /// Mean of sim_test - sim_control over scored pairs.
    pub mean_diff: Option<f64>,
}

#[derive(Default)]
struct Bucket {
    tally: LeakTally,
    credits: Vec<f64>,
    diff_sum: f64,
    flagged: u64,
}

/// Groups pairs by (backend, model) and the chosen axis and reports each group.
/// Output is sorted by backend, model, then scope value.
pub fn breakdown(
    pairs: &[PairScore],
    suite: &PromptSuite,
    axis: Axis,
    tie_epsilon: f64,
) -> Result<Vec<LeakRateReport>, MetricError> {
    let mut buckets: BTreeMap<(String, String, ScopeKey), Bucket> = BTreeMap::new();
    for pair in pairs {
        let instance = suite
            .get(&pair.instance_id)
            .ok_or_else(|| MetricError::UnknownInstance(pair.instance_id.clone()))?;
        let key = match axis {
            Axis::Overall => ScopeKey::Overall,
            Axis::Category => ScopeKey::Category(instance.category.clone()),
            Axis::Temperature => ScopeKey::Temperature(TotalF64(pair.temperature)),
        };
        let bucket = buckets
            .entry((pair.backend_id.clone(), pair.model_id.clone(), key))
            .or_default();
        if pair.flag.is_some() {
            bucket.flagged += 1;
            continue;
        }
        let v = pair_outcome(pair, tie_epsilon);
        bucket.tally.push(v);
        bucket.credits.push(100.0 * v.as_f64());
        bucket.diff_sum += pair.diff;
    }
    Ok(buckets
        .into_iter()
        .map(|((backend_id, model_id, key), b)| {
            let test = stats::t_test_one_sample_greater(&b.credits, 50.0).ok();
            let n = b.tally.n();
            LeakRateReport {
                backend_id,
                model_id,
                scope: match key {
                    ScopeKey::Overall => Scope::Overall,
                    ScopeKey::Category(c) => Scope::Category(c),
                    ScopeKey::Temperature(t) => Scope::Temperature(t.0),
                },
                n,
                leak_rate: b.tally.rate(),
                t_statistic: test.map(|t| t.t_statistic),
                p_value: test.map(|t| t.p_value),
                flagged_count: b.flagged,
                tally: b.tally,
                mean_diff: (n > 0).then(|| b.diff_sum / n as f64),
            }
        })
        .collect())
}
