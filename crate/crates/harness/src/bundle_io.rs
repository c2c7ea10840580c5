//! Report bundle files and everything rendered from them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use semleak_core::report::{
    emit_diff_distribution, render_leak_table, render_summary, reports_csv, DiffHistogram,
    ReportBundle, ReportError,
};
use semleak_core::similarity::PairScore;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum BundleIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleIoError + '_ {
    move |source| BundleIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_bundle(path: &Path, bundle: &ReportBundle) -> Result<(), BundleIoError> {
    let mut bytes = serde_json::to_vec_pretty(bundle).expect("bundles serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_bundle(path: &Path) -> Result<ReportBundle, BundleIoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| BundleIoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_pair_scores(path: &Path, scores: &[PairScore]) -> Result<(), BundleIoError> {
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for s in scores {
        writeln!(
            out,
            "{}",
            serde_json::to_string(s).expect("scores serialize")
        )
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_pair_scores(path: &Path) -> Result<Vec<PairScore>, BundleIoError> {
    let reader = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| BundleIoError::Parse {
                path: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Difference histogram of one (backend, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    pub backend_id: String,
    pub model_id: String,
    #[serde(flatten)]
    pub histogram: DiffHistogram,
}

/// One histogram per (backend, model) in the bundle's diffs.
pub fn histograms(bundle: &ReportBundle, bins: usize) -> Result<Vec<NamedHistogram>, ReportError> {
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for d in &bundle.diffs {
        groups
            .entry((&d.backend_id, &d.model_id))
            .or_default()
            .push(d.diff);
    }
    groups
        .into_iter()
        .map(|((b, m), diffs)| {
            Ok(NamedHistogram {
                backend_id: b.into(),
                model_id: m.into(),
                histogram: emit_diff_distribution(&diffs, bins)?,
            })
        })
        .collect()
}

fn histograms_csv(hs: &[NamedHistogram]) -> String {
    let mut out = String::from("backend,model,lower,upper,count\n");
    for h in hs {
        for (i, c) in h.histogram.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                h.backend_id,
                h.model_id,
                h.histogram.edges[i],
                h.histogram.edges[i + 1],
                c
            ));
        }
    }
    out
}

/// Renders tables, exports and histogram data from `bundle` into `dir`.
/// Output depends only on the bundle and `bins`.
pub fn write_report_files(
    dir: &Path,
    bundle: &ReportBundle,
    bins: usize,
) -> Result<Vec<PathBuf>, BundleIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let table = render_leak_table(bundle)?;
    let hs = histograms(bundle, bins)?;
    let mut hist_json = serde_json::to_vec_pretty(&hs).expect("histograms serialize");
    hist_json.push(b'\n');
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("table.txt", table.text.into_bytes()),
        ("table.csv", table.csv.into_bytes()),
        ("reports.csv", reports_csv(bundle).into_bytes()),
        ("summary.txt", render_summary(bundle)?.into_bytes()),
        ("histogram.json", hist_json),
        ("histogram.csv", histograms_csv(&hs).into_bytes()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
