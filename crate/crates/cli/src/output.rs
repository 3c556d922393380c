//! Result records and file emission. Records go to `<base>.jsonl` (one JSON
//! object per line, deterministically ordered), summaries to `<base>.csv`.
//! Both are written atomically: the bytes land in a temp file in the target
//! directory and are renamed into place, so a rerun either fully replaces an
//! output or leaves the old one intact.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use poetry_dp_core::evaluation::mean_stderr;

/// One released result: a (seed, query) cell of a run. Field order is the
/// JSONL column order; keep it stable, downstream diffs depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub seed: u64,
    pub query_id: usize,
    /// Inference mode, or "pbs_dp" for subsampled voting.
    pub mode: String,
    pub j: usize,
    pub tokens: Vec<usize>,
    pub surfaces: Vec<String>,
    /// Whether the release matched the known answer; absent when the task
    /// has no ground truth (generation, remote providers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    /// Total provider calls; the deterministic cost measure.
    pub expert_calls: u64,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_spent: Option<f64>,
    /// Per-token utility vectors when auditing was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Vec<Vec<f64>>>,
    /// Provider failure; failed records carry no tokens and are excluded
    /// from summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One `mode,J,mean_acc,stderr` summary row: accuracy is averaged per seed,
/// then mean and standard error are taken across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: String,
    pub j: usize,
    pub mean_acc: f64,
    pub stderr: f64,
}

/// Writes bytes atomically next to the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)?;
    Ok(())
}

/// Renders records as JSONL in their given (already sorted) order.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Renders a CSV document with the given header and rows of stringified
/// fields.
pub fn to_csv(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    Ok(writer.into_inner()?)
}

pub fn jsonl_path(base: &Path) -> PathBuf {
    PathBuf::from(format!("{}.jsonl", base.display()))
}

pub fn csv_path(base: &Path) -> PathBuf {
    PathBuf::from(format!("{}.csv", base.display()))
}

/// Computes the accuracy summary from records: per (mode, J), the per-seed
/// accuracy over scored queries, then mean ± stderr across seeds. Failed
/// records and records without a correctness flag are skipped; cells with no
/// scored record contribute nothing.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    // (mode, j) -> seed -> (hits, total)
    let mut cells: BTreeMap<(String, usize), BTreeMap<u64, (usize, usize)>> = BTreeMap::new();
    for r in records {
        if r.error.is_some() {
            continue;
        }
        let Some(correct) = r.correct else { continue };
        let seeds = cells.entry((r.mode.clone(), r.j)).or_default();
        let (hits, total) = seeds.entry(r.seed).or_insert((0, 0));
        *total += 1;
        if correct {
            *hits += 1;
        }
    }
    cells
        .into_iter()
        .map(|((mode, j), seeds)| {
            let accs: Vec<f64> =
                seeds.values().map(|&(h, t)| h as f64 / t as f64).collect();
            let (mean_acc, stderr) = if accs.len() >= 2 {
                mean_stderr(&accs).expect("n >= 2 checked")
            } else {
                (accs[0], 0.0)
            };
            SummaryRow { mode, j, mean_acc, stderr }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> anyhow::Result<Vec<u8>> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![r.mode.clone(), r.j.to_string(), format!("{}", r.mean_acc), format!("{}", r.stderr)]
        })
        .collect();
    to_csv(&["mode", "J", "mean_acc", "stderr"], &body)
}
