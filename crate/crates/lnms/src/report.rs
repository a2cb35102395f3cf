//! Result files (PR-curve CSV, summary JSON) and their collation into an
//! AR table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lnms_core::eval::{Evaluation, PrPoint, PRECISION_GRID_POINTS};
use serde::{Deserialize, Serialize};

use crate::error::{LnmsError, Result};

pub const PR_SUFFIX: &str = ".pr.csv";
pub const SUMMARY_SUFFIX: &str = ".summary.json";
pub const PR_HEADER: &str = "method,tau_or_checkpoint,score_threshold,tp,fp,fn,precision,recall,config_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub ar: f64,
    pub config_hash: String,
    /// `greedy` rows carry `tau`; `tnet` rows carry variant, seed and checkpoint name.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
    pub total_annotations: usize,
    pub precision_grid_points: usize,
    pub recall_at_precision: Vec<f64>,
}

impl Summary {
    pub fn greedy(tau: f64, eval: &Evaluation, config_hash: &str) -> Self {
        Summary {
            method: "greedy".into(),
            tau: Some(tau),
            ..Summary::base(eval, config_hash)
        }
    }

    pub fn tnet(variant: &str, train_seed: u64, checkpoint: &str, eval: &Evaluation, config_hash: &str) -> Self {
        Summary {
            method: "tnet".into(),
            variant: Some(variant.into()),
            train_seed: Some(train_seed),
            checkpoint: Some(checkpoint.into()),
            ..Summary::base(eval, config_hash)
        }
    }

    fn base(eval: &Evaluation, config_hash: &str) -> Self {
        Summary {
            method: String::new(),
            ar: eval.summary.ar,
            config_hash: config_hash.into(),
            tau: None,
            variant: None,
            train_seed: None,
            checkpoint: None,
            total_annotations: eval.curve.total_annotations,
            precision_grid_points: PRECISION_GRID_POINTS,
            recall_at_precision: eval.summary.recall_at_precision.clone(),
        }
    }

    /// The `tau_or_checkpoint` column.
    pub fn setting(&self) -> String {
        match (self.tau, &self.checkpoint) {
            (Some(t), _) => format!("{t:.2}"),
            (None, Some(c)) => c.clone(),
            (None, None) => String::new(),
        }
    }

    /// Row label in the collated table.
    pub fn label(&self) -> String {
        match (self.tau, &self.variant) {
            (Some(t), _) => format!("GreedyNMS tau={t:.2}"),
            (None, Some(v)) => format!("Tnet {v}"),
            _ => self.method.clone(),
        }
    }

    /// Default file stem for this result.
    pub fn stem(&self) -> String {
        match (self.tau, &self.variant) {
            (Some(t), _) => format!("greedy_tau{t:.2}"),
            (None, Some(v)) => format!(
                "tnet_{}_seed{}",
                v.parse::<crate::config::Variant>().map(|v| v.slug()).unwrap_or(v),
                self.train_seed.unwrap_or(0)
            ),
            _ => self.method.clone(),
        }
    }
}

/// At most `max_points` points, evenly spaced by index, always keeping both ends.
pub fn thin(points: &[PrPoint], max_points: usize) -> Vec<PrPoint> {
    let n = points.len();
    if n <= max_points || max_points < 2 {
        return points.to_vec();
    }
    let mut out: Vec<PrPoint> = Vec::with_capacity(max_points);
    let mut last = usize::MAX;
    for i in 0..max_points {
        let idx = (i * (n - 1) + (max_points - 1) / 2) / (max_points - 1);
        if idx != last {
            out.push(points[idx]);
            last = idx;
        }
    }
    out
}

pub fn pr_csv(summary: &Summary, points: &[PrPoint]) -> String {
    let mut s = String::from(PR_HEADER);
    s.push('\n');
    let setting = summary.setting();
    for p in points {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            summary.method, setting, p.score_threshold, p.tp, p.fp, p.fn_, p.precision, p.recall, summary.config_hash
        )
        .expect("writing to a String");
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| LnmsError::io(path, e))
}

/// Writes `<stem>.pr.csv` and `<stem>.summary.json` into `dir`, returning the JSON path.
pub fn write_result(dir: &Path, summary: &Summary, eval: &Evaluation, max_points: usize) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| LnmsError::io(dir, e))?;
    let stem = summary.stem();
    write_file(&dir.join(format!("{stem}{PR_SUFFIX}")), &pr_csv(summary, &thin(&eval.curve.points, max_points)))?;
    let json_path = dir.join(format!("{stem}{SUMMARY_SUFFIX}"));
    let mut json = serde_json::to_string_pretty(summary).expect("summary serializes");
    json.push('\n');
    write_file(&json_path, &json)?;
    Ok(json_path)
}

/// Files under `dir` (recursively) whose name ends in `suffix`, as sorted relative paths.
fn find_files(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, suffix: &str, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| LnmsError::io(dir, e))? {
            let path = entry.map_err(|e| LnmsError::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, suffix, out)?;
            } else if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
                out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, suffix, &mut out)?;
    out.sort();
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summaries: Vec<Summary>,
    /// Collated AR rows, one per result.
    pub ar_csv: String,
    /// Grouped table: median over training seeds for learned variants.
    pub table_md: String,
    /// Every PR curve under the results directory with a single header.
    pub pr_csv: String,
}

fn sort_key(s: &Summary) -> (u8, String, u64, String) {
    let variant_rank = s
        .variant
        .as_deref()
        .and_then(|v| v.parse::<crate::config::Variant>().ok())
        .map_or(0, |v| v as u8);
    (
        u8::from(s.method != "greedy"),
        format!("{variant_rank}{:>8.4}", s.tau.unwrap_or(0.0)),
        s.train_seed.unwrap_or(0),
        s.checkpoint.clone().unwrap_or_default(),
    )
}

pub fn collate(results: &Path, force: bool) -> Result<Report> {
    let json_files = find_files(results, SUMMARY_SUFFIX)?;
    if json_files.is_empty() {
        return Err(LnmsError::NoResults(results.to_path_buf()));
    }
    let mut summaries = Vec::new();
    for rel in &json_files {
        let path = results.join(rel);
        let text = fs::read_to_string(&path).map_err(|e| LnmsError::io(&path, e))?;
        let s: Summary = serde_json::from_str(&text).map_err(|e| LnmsError::Parse {
            path: rel.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        summaries.push(s);
    }
    let hashes: BTreeSet<String> = summaries.iter().map(|s| s.config_hash.clone()).collect();
    if hashes.len() > 1 && !force {
        return Err(LnmsError::MixedHashes(hashes.into_iter().collect()));
    }
    summaries.sort_by_key(sort_key);

    let mut ar_csv = String::from("label,method,tau_or_checkpoint,train_seed,ar,config_hash\n");
    for s in &summaries {
        let seed = s.train_seed.map(|v| v.to_string()).unwrap_or_default();
        writeln!(ar_csv, "{},{},{},{seed},{:.6},{}", s.label(), s.method, s.setting(), s.ar, s.config_hash).unwrap();
    }

    // one row per method and setting; seeds are pooled
    let mut groups: BTreeMap<(u8, String), (String, Vec<f64>)> = BTreeMap::new();
    for s in &summaries {
        let (m, k, _, _) = sort_key(s);
        groups.entry((m, k)).or_insert_with(|| (s.label(), Vec::new())).1.push(s.ar);
    }
    let mut table_md = String::from("| method | AR (%) | runs | min | max |\n|---|---|---|---|---|\n");
    for (label, ars) in groups.values_mut() {
        let (lo, hi) = (ars.iter().cloned().fold(f64::INFINITY, f64::min), ars.iter().cloned().fold(0.0, f64::max));
        let n = ars.len();
        writeln!(table_md, "| {label} | {:.1} | {n} | {:.1} | {:.1} |", 100.0 * median(ars), 100.0 * lo, 100.0 * hi).unwrap();
    }
    writeln!(table_md, "\nconfig hash: {}", hashes_line(&summaries)).unwrap();

    let mut pr_csv = String::from(PR_HEADER);
    pr_csv.push('\n');
    for rel in find_files(results, PR_SUFFIX)? {
        let path = results.join(&rel);
        let text = fs::read_to_string(&path).map_err(|e| LnmsError::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(PR_HEADER) {
            return Err(LnmsError::Format {
                path: rel,
                reason: "unexpected PR curve header".into(),
            });
        }
        for line in lines {
            pr_csv.push_str(line);
            pr_csv.push('\n');
        }
    }
    Ok(Report {
        summaries,
        ar_csv,
        table_md,
        pr_csv,
    })
}

fn hashes_line(summaries: &[Summary]) -> String {
    let set: BTreeSet<&str> = summaries.iter().map(|s| s.config_hash.as_str()).collect();
    set.into_iter().collect::<Vec<_>>().join(", ")
}

impl Report {
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(|e| LnmsError::io(out, e))?;
        write_file(&out.join("ar_table.csv"), &self.ar_csv)?;
        write_file(&out.join("ar_table.md"), &self.table_md)?;
        write_file(&out.join("pr_curves.csv"), &self.pr_csv)
    }
}
