//! Result bundles and their renderings: the model-by-backend Leak-Rate table,
//! per-scope exports, and similarity-difference histograms.
//!
//! Rendering never recomputes metrics; every number printed comes from the
//! bundle, so re-rendering a stored bundle is byte-identical.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::generation::RunPlan;
use crate::metric::{LeakRateReport, Scope};
use crate::postprocess::PostprocessPolicy;
use crate::similarity::{BackendKind, BertScoreComponent};
use crate::stats::TTestResult;

/// Placeholder for a model/backend combination with no rate.
pub const MISSING_CELL: &str = "-";
pub const TAU_VARIANT: &str = "tau-b";
pub const LABEL_ENCODING: &str = "control=-1 neither=0 test=+1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    /// Rows of one family compete for the bold maximum.
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub backend_id: String,
    pub kind: BackendKind,
    pub embed_model: String,
    #[serde(default)]
    pub language_routing: BTreeMap<String, String>,
    pub bertscore_component: BertScoreComponent,
}

/// Everything needed to rerun and interpret a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub suite_name: String,
    pub suite_path: String,
    pub models: Vec<ModelMeta>,
    pub backends: Vec<BackendMeta>,
    pub plan: RunPlan,
    pub policy: PostprocessPolicy,
    pub tie_epsilon: f64,
    pub epsilon_slack: f64,
    pub tau_variant: String,
    pub label_encoding: String,
    pub code_version: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// One similarity difference, for distribution plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffPoint {
    pub instance_id: String,
    pub backend_id: String,
    pub model_id: String,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTTest {
    pub backend_id: String,
    pub model_id: String,
    pub result: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTau {
    pub label: String,
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleStats {
    #[serde(default)]
    pub t_tests: Vec<NamedTTest>,
    #[serde(default)]
    pub taus: Vec<NamedTau>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: RunMetadata,
    pub reports: Vec<LeakRateReport>,
    #[serde(default)]
    pub diffs: Vec<DiffPoint>,
    #[serde(default)]
    pub stats: BundleStats,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("bundle has no overall reports")]
    EmptyBundle,
    #[error("no differences to bin")]
    NoDiffs,
    #[error("bin count must be at least 1")]
    Bins,
    #[error("differences must be finite")]
    NonFinite,
}

/// Fixed one-decimal rendering. Exact binary ties round half to even.
pub fn one_decimal(v: f64) -> String {
    format!("{v:.1}")
}

/// The rendered table in two forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakTable {
    /// `Model | backend | ...` rows; per-family maxima wrapped in `**`.
    pub text: String,
    /// Comma-separated, full precision, empty fields for missing cells.
    pub csv: String,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(fields: impl IntoIterator<Item = String>) -> String {
    let mut line = fields
        .into_iter()
        .map(|f| csv_field(&f))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

/// One row per model and one column per backend, from the bundle's overall
/// reports. Rows and columns follow the metadata order; ids that only appear
/// in reports are appended in first-seen order. Within a family of two or
/// more models, the highest displayed value of each column is bolded.
pub fn render_leak_table(bundle: &ReportBundle) -> Result<LeakTable, ReportError> {
    let overall: Vec<&LeakRateReport> = bundle
        .reports
        .iter()
        .filter(|r| r.scope == Scope::Overall)
        .collect();
    if overall.is_empty() {
        return Err(ReportError::EmptyBundle);
    }
    let mut models: Vec<(String, String)> = bundle
        .metadata
        .models
        .iter()
        .map(|m| (m.model_id.clone(), m.family.clone()))
        .collect();
    let mut backends: Vec<String> = bundle
        .metadata
        .backends
        .iter()
        .map(|b| b.backend_id.clone())
        .collect();
    for r in &overall {
        if !models.iter().any(|(m, _)| *m == r.model_id) {
            models.push((r.model_id.clone(), r.model_id.clone()));
        }
        if !backends.contains(&r.backend_id) {
            backends.push(r.backend_id.clone());
        }
    }
    let rate = |model: &str, backend: &str| {
        overall
            .iter()
            .find(|r| r.model_id == model && r.backend_id == backend)
            .and_then(|r| r.leak_rate)
    };
    let cells: Vec<Vec<Option<f64>>> = models
        .iter()
        .map(|(m, _)| backends.iter().map(|b| rate(m, b)).collect())
        .collect();

    let mut family_size: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, fam) in &models {
        *family_size.entry(fam.as_str()).or_default() += 1;
    }
    // Best displayed value per (family, column), compared as shown.
    let mut best: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for ((_, fam), row) in models.iter().zip(&cells) {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                let shown: f64 = one_decimal(*v).parse().unwrap_or(*v);
                let e = best.entry((fam.as_str(), j)).or_insert(shown);
                if shown > *e {
                    *e = shown;
                }
            }
        }
    }

    let mut text = String::new();
    let header: Vec<&str> = core::iter::once("Model")
        .chain(backends.iter().map(String::as_str))
        .collect();
    text.push_str(&header.join(" | "));
    text.push('\n');
    text.push_str(&header.iter().map(|_| "---").collect::<Vec<_>>().join(" | "));
    text.push('\n');
    let mut csv = csv_line(
        ["model".to_string(), "family".to_string()]
            .into_iter()
            .chain(backends.iter().cloned()),
    );
    for ((model, fam), row) in models.iter().zip(&cells) {
        let bold_family = family_size[fam.as_str()] > 1;
        let rendered = row.iter().enumerate().map(|(j, v)| match v {
            None => MISSING_CELL.to_string(),
            Some(v) => {
                let s = one_decimal(*v);
                let shown: f64 = s.parse().unwrap_or(*v);
                if bold_family && best.get(&(fam.as_str(), j)) == Some(&shown) {
                    format!("**{s}**")
                } else {
                    s
                }
            }
        });
        let line: Vec<String> = core::iter::once(model.clone()).chain(rendered).collect();
        text.push_str(&line.join(" | "));
        text.push('\n');
        csv.push_str(&csv_line(
            [model.clone(), fam.clone()].into_iter().chain(
                row.iter()
                    .map(|v| v.map(|v| v.to_string()).unwrap_or_default()),
            ),
        ));
    }
    Ok(LeakTable { text, csv })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Every report of the bundle as CSV, full precision.
pub fn reports_csv(bundle: &ReportBundle) -> String {
    let mut out = csv_line(
        [
            "backend",
            "model",
            "axis",
            "value",
            "n",
            "leak_rate",
            "t_statistic",
            "p_value",
            "flagged",
            "leaks",
            "ties",
            "non_leaks",
            "mean_diff",
        ]
        .map(String::from),
    );
    for r in &bundle.reports {
        let (axis, value) = match &r.scope {
            Scope::Overall => ("overall".to_string(), String::new()),
            Scope::Category(c) => ("category".to_string(), c.clone()),
            Scope::Temperature(t) => ("temperature".to_string(), t.to_string()),
        };
        out.push_str(&csv_line([
            r.backend_id.clone(),
            r.model_id.clone(),
            axis,
            value,
            r.n.to_string(),
            opt(r.leak_rate),
            opt(r.t_statistic),
            opt(r.p_value),
            r.flagged_count.to_string(),
            r.tally.leaks.to_string(),
            r.tally.ties.to_string(),
            r.tally.non_leaks.to_string(),
            opt(r.mean_diff),
        ]));
    }
    out
}

/// Human-readable summary: header metadata, the table, then each breakdown.
pub fn render_summary(bundle: &ReportBundle) -> Result<String, ReportError> {
    let table = render_leak_table(bundle)?;
    let m = &bundle.metadata;
    let mut out = String::new();
    let _ = writeln!(out, "suite: {} ({})", m.suite_name, m.suite_path);
    let _ = writeln!(out, "code version: {}", m.code_version);
    let _ = writeln!(
        out,
        "temperatures: {:?}, samples per cell: {}",
        m.plan.temperatures, m.plan.samples_per_cell
    );
    let _ = writeln!(
        out,
        "tie epsilon: {}, epsilon slack: {}",
        m.tie_epsilon, m.epsilon_slack
    );
    let _ = writeln!(out, "tau: {}, labels: {}", m.tau_variant, m.label_encoding);
    for b in &m.backends {
        let _ = write!(
            out,
            "backend {}: {:?} {} ({:?})",
            b.backend_id, b.kind, b.embed_model, b.bertscore_component
        );
        for (lang, model) in &b.language_routing {
            let _ = write!(out, " {lang}->{model}");
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&table.text);
    for r in bundle.reports.iter().filter(|r| r.scope != Scope::Overall) {
        let _ = writeln!(
            out,
            "{} {} {}: {} (n={}, flagged={})",
            r.backend_id,
            r.model_id,
            r.scope,
            r.leak_rate
                .map(one_decimal)
                .unwrap_or_else(|| MISSING_CELL.to_string()),
            r.n,
            r.flagged_count
        );
    }
    for t in &bundle.stats.t_tests {
        let _ = writeln!(
            out,
            "t-test {} {}: t={} df={} p={:e}",
            t.backend_id,
            t.model_id,
            t.result.t_statistic,
            t.result.degrees_of_freedom,
            t.result.p_value
        );
    }
    for t in &bundle.stats.taus {
        let _ = writeln!(out, "{} {}: {}", m.tau_variant, t.label, t.tau);
    }
    Ok(out)
}

/// Binned similarity differences with sign shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffHistogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub positive_share: f64,
    pub negative_share: f64,
    pub zero_share: f64,
}

/// Equal-width histogram over the range of `diffs`. A degenerate range is
/// widened by 0.5 on each side.
pub fn emit_diff_distribution(diffs: &[f64], bins: usize) -> Result<DiffHistogram, ReportError> {
    if diffs.is_empty() {
        return Err(ReportError::NoDiffs);
    }
    if bins < 1 {
        return Err(ReportError::Bins);
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(ReportError::NonFinite);
    }
    let mut lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = hi - lo;
    let mut edges: Vec<f64> = (0..bins)
        .map(|i| lo + width * i as f64 / bins as f64)
        .collect();
    edges.push(hi);
    let mut counts = alloc::vec![0u64; bins];
    for &d in diffs {
        let idx = libm::floor((d - lo) / width * bins as f64) as usize;
        counts[idx.min(bins - 1)] += 1;
    }
    let n = diffs.len() as f64;
    let share = |f: fn(&f64) -> bool| diffs.iter().filter(|d| f(d)).count() as f64 / n;
    Ok(DiffHistogram {
        edges,
        counts,
        positive_share: share(|d| *d > 0.0),
        negative_share: share(|d| *d < 0.0),
        zero_share: share(|d| *d == 0.0),
    })
}

/// Histogram as CSV: one row per bin.
pub fn histogram_csv(h: &DiffHistogram) -> String {
    let mut out = String::from("lower,upper,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", h.edges[i], h.edges[i + 1], c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::LeakTally;
    use alloc::vec;

    fn report(model: &str, backend: &str, rate: f64) -> LeakRateReport {
        LeakRateReport {
            backend_id: backend.into(),
            model_id: model.into(),
            scope: Scope::Overall,
            n: 10,
            leak_rate: Some(rate),
            t_statistic: None,
            p_value: None,
            flagged_count: 0,
            tally: LeakTally::default(),
            mean_diff: None,
        }
    }

    fn bundle(
        models: &[(&str, &str)],
        backends: &[&str],
        reports: Vec<LeakRateReport>,
    ) -> ReportBundle {
        ReportBundle {
            metadata: RunMetadata {
                suite_name: "s".into(),
                suite_path: "p".into(),
                models: models
                    .iter()
                    .map(|(m, f)| ModelMeta {
                        model_id: (*m).into(),
                        family: (*f).into(),
                    })
                    .collect(),
                backends: backends
                    .iter()
                    .map(|b| BackendMeta {
                        backend_id: (*b).into(),
                        kind: BackendKind::SentenceCosine,
                        embed_model: "e".into(),
                        language_routing: BTreeMap::new(),
                        bertscore_component: BertScoreComponent::F1,
                    })
                    .collect(),
                plan: RunPlan::default(),
                policy: PostprocessPolicy::default(),
                tie_epsilon: 0.0,
                epsilon_slack: 0.03,
                tau_variant: TAU_VARIANT.into(),
                label_encoding: LABEL_ENCODING.into(),
                code_version: "0".into(),
                seed: None,
            },
            reports,
            diffs: vec![],
            stats: BundleStats::default(),
        }
    }

    #[test]
    fn gpt4o_row() {
        let b = bundle(
            &[("GPT4o", "GPT")],
            &["BS", "SB", "OAI"],
            vec![
                report("GPT4o", "BS", 76.9),
                report("GPT4o", "SB", 70.4),
                report("GPT4o", "OAI", 85.0),
            ],
        );
        let t = render_leak_table(&b).unwrap();
        assert!(
            t.text.lines().any(|l| l == "GPT4o | 76.9 | 70.4 | 85.0"),
            "{}",
            t.text
        );
        assert_eq!(t.csv, "model,family,BS,SB,OAI\nGPT4o,GPT,76.9,70.4,85\n");
    }

    #[test]
    fn one_by_one() {
        let b = bundle(&[("m", "m")], &["BS"], vec![report("m", "BS", 50.0)]);
        assert_eq!(
            render_leak_table(&b).unwrap().text,
            "Model | BS\n--- | ---\nm | 50.0\n"
        );
    }

    #[test]
    fn family_max_is_bolded() {
        let b = bundle(
            &[("A", "F"), ("B", "F")],
            &["BS"],
            vec![report("A", "BS", 60.0), report("B", "BS", 70.0)],
        );
        let t = render_leak_table(&b).unwrap().text;
        assert!(t.contains("A | 60.0\n"));
        assert!(t.contains("B | **70.0**\n"));
    }

    #[test]
    fn missing_cells_and_empty_bundle() {
        let b = bundle(&[("A", "F")], &["BS", "SB"], vec![report("A", "BS", 60.0)]);
        assert!(render_leak_table(&b)
            .unwrap()
            .text
            .contains("A | 60.0 | -\n"));
        assert_eq!(
            render_leak_table(&bundle(&[], &[], vec![])),
            Err(ReportError::EmptyBundle)
        );
    }

    #[test]
    fn one_decimal_rounds_half_even_on_exact_ties() {
        assert_eq!(one_decimal(0.25), "0.2");
        assert_eq!(one_decimal(0.75), "0.8");
        assert_eq!(one_decimal(62.5), "62.5");
        assert_eq!(one_decimal(100.0), "100.0");
    }

    #[test]
    fn histogram_examples() {
        let h = emit_diff_distribution(&[-0.1, 0.0, 0.1, 0.2], 2).unwrap();
        assert_eq!(h.edges.len(), 3);
        assert_eq!((h.edges[0], h.edges[2]), (-0.1, 0.2));
        assert!((h.edges[1] - 0.05).abs() < 1e-15);
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(
            (h.positive_share, h.negative_share, h.zero_share),
            (0.5, 0.25, 0.25)
        );

        assert_eq!(
            emit_diff_distribution(&[0.1, 0.2], 3)
                .unwrap()
                .positive_share,
            1.0
        );
        let sym = emit_diff_distribution(&[-0.3, -0.1, 0.1, 0.3], 4).unwrap();
        assert_eq!(sym.positive_share, sym.negative_share);
        let flat = emit_diff_distribution(&[0.0; 3], 2).unwrap();
        assert_eq!(
            (
                flat.edges[0],
                flat.edges[2],
                flat.counts.iter().sum::<u64>()
            ),
            (-0.5, 0.5, 3)
        );
        assert_eq!(emit_diff_distribution(&[], 2), Err(ReportError::NoDiffs));
        assert_eq!(emit_diff_distribution(&[1.0], 0), Err(ReportError::Bins));
    }
}
