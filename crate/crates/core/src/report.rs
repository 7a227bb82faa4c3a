//! Report rendering: CSV tables, JSON result files and SVG charts.
//!
//! A [`ReportBundle`] holds everything a report needs. [`emit_report`]
//! writes it out; [`load_bundle`] reads back what the `records` target wrote
//! so a report can be re-rendered later without querying anything.
//!
//! Rendering is deterministic: rows keep bundle order, percentages have two
//! decimals, and SVG coordinates are printed with fixed precision.
//!
//! File layout inside the output directory:
//!
//! | target    | files                                                                 |
//! |-----------|-----------------------------------------------------------------------|
//! | `records` | `summary.json`, `results.jsonl`, `transcript.jsonl` (dialogues only)  |
//! | `csv`     | `detection.csv`, `localization.csv`, `consistency.csv`, `transport.csv` |
//! | `svg`     | `recall_distribution.svg`, `iou_shares.svg` (when there is data)      |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SceneSet;
use crate::experiments::{
    analyze_run_consistency, lowlight_failure_share, BinaryOutcome, ConsistencyEntry,
    ExperimentError, LocalizationOutcome, ResultRecord, RunMatrix,
};
use crate::perception::{FailureKind, PromptId};
use crate::stats::{LocalizationSummary, Statistic};
use crate::v2v::{DialogueTranscript, TransportComparison};

/// Version tag in the first header cell of every CSV file.
pub const CSV_SCHEMA: &str = "schema_v1";
const CSV_SCHEMA_VALUE: &str = "v1";
const UNDEFINED: &str = "undefined";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },
    #[error("unknown render target `{0}` (expected csv, records or svg)")]
    UnknownTarget(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RenderTarget {
    Csv,
    Records,
    Svg,
}

impl RenderTarget {
    pub const ALL: [RenderTarget; 3] =
        [RenderTarget::Csv, RenderTarget::Records, RenderTarget::Svg];
}

impl FromStr for RenderTarget {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(RenderTarget::Csv),
            "records" => Ok(RenderTarget::Records),
            "svg" => Ok(RenderTarget::Svg),
            other => Err(ReportError::UnknownTarget(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub prompt_id: PromptId,
    #[serde(flatten)]
    pub run: RunMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRow {
    pub prompt_id: PromptId,
    pub summary: LocalizationSummary,
    /// Taxonomy failures by kind.
    pub failures: BTreeMap<FailureKind, usize>,
    pub n_faults: usize,
    /// Share of failing scenes shot in low light; `None` without failures.
    pub lowlight_failure_share: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    /// `exp1`, `exp2`, `exp3` or `v2v`.
    pub experiment: String,
    #[serde(default)]
    pub detection: Vec<DetectionRow>,
    #[serde(default)]
    pub localization: Vec<LocalizationRow>,
    #[serde(default)]
    pub consistency: Vec<ConsistencyEntry>,
    #[serde(default)]
    pub transport: Option<TransportComparison>,
    /// Per-run result lines, kept in `results.jsonl`.
    #[serde(skip)]
    pub records: Vec<ResultRecord>,
    /// Canonically encoded dialogue messages, kept in `transcript.jsonl`.
    #[serde(skip)]
    pub transcript: Vec<String>,
}

fn consistency_or_empty(
    results: &[crate::experiments::RunResult],
    threshold: f64,
) -> Result<Vec<ConsistencyEntry>, ExperimentError> {
    match analyze_run_consistency(results, threshold) {
        Err(ExperimentError::InsufficientRuns) => Ok(Vec::new()),
        other => other,
    }
}

impl ReportBundle {
    pub fn is_empty(&self) -> bool {
        self.detection.is_empty()
            && self.localization.is_empty()
            && self.consistency.is_empty()
            && self.transport.is_none()
            && self.records.is_empty()
            && self.transcript.is_empty()
    }

    pub fn from_binary(
        experiment: &str,
        outcome: &BinaryOutcome,
        consistency_threshold: f64,
    ) -> Result<Self, ExperimentError> {
        Ok(Self {
            experiment: experiment.to_string(),
            detection: outcome
                .per_run
                .iter()
                .map(|run| DetectionRow {
                    prompt_id: outcome.prompt_id,
                    run: run.clone(),
                })
                .collect(),
            consistency: consistency_or_empty(&outcome.results, consistency_threshold)?,
            records: outcome.records(),
            ..Default::default()
        })
    }

    pub fn from_localization(
        experiment: &str,
        outcomes: &[LocalizationOutcome],
        scenes: &SceneSet,
        consistency_threshold: f64,
    ) -> Result<Self, ExperimentError> {
        let mut bundle = Self {
            experiment: experiment.to_string(),
            ..Default::default()
        };
        for o in outcomes {
            let mut failures = BTreeMap::new();
            for r in &o.results {
                if let Some(k) = r.detection().and_then(|d| d.failure_kind()) {
                    *failures.entry(k).or_insert(0) += 1;
                }
            }
            let lowlight = match lowlight_failure_share(&o.results, scenes) {
                Ok(v) => Some(v),
                Err(ExperimentError::EmptyFailureSet) => None,
                Err(e) => return Err(e),
            };
            bundle.localization.push(LocalizationRow {
                prompt_id: o.prompt_id,
                summary: o.summary.clone(),
                failures,
                n_faults: o.n_faults,
                lowlight_failure_share: lowlight,
            });
            bundle
                .consistency
                .extend(consistency_or_empty(&o.results, consistency_threshold)?);
            bundle.records.extend(o.records());
        }
        Ok(bundle)
    }

    pub fn from_dialogue(transcript: &DialogueTranscript, comparison: TransportComparison) -> Self {
        Self {
            experiment: "v2v".into(),
            transport: Some(comparison),
            transcript: transcript
                .entries
                .iter()
                .map(|e| String::from_utf8_lossy(&e.encoded).into_owned())
                .collect(),
            ..Default::default()
        }
    }
}

/// Fraction in, percentage with two decimals out.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => UNDEFINED.to_string(),
    }
}

fn format_fixed(value: Option<f64>, decimals: usize) -> String {
    match value {
        Some(v) => format!("{v:.decimals$}"),
        None => UNDEFINED.to_string(),
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut head = vec![CSV_SCHEMA];
    head.extend_from_slice(header);
    w.write_record(&head).expect("in-memory write");
    for row in rows {
        w.write_record(std::iter::once(CSV_SCHEMA_VALUE).chain(row.iter().map(String::as_str)))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn detection_csv(bundle: &ReportBundle) -> Vec<u8> {
    let mut header = vec!["prompt_id", "run_idx", "tp", "fn", "fp", "tn"];
    header.extend(Statistic::ALL.iter().map(|s| s.key()));
    header.extend(["flagged", "faults"]);
    let rows: Vec<Vec<String>> = bundle
        .detection
        .iter()
        .map(|d| {
            let m = &d.run.matrix;
            let mut row = vec![
                d.prompt_id.to_string(),
                d.run.run_idx.to_string(),
                m.tp.to_string(),
                m.fn_.to_string(),
                m.fp.to_string(),
                m.tn.to_string(),
            ];
            row.extend(
                Statistic::ALL
                    .iter()
                    .map(|&s| format_percent(d.run.stats.as_ref().and_then(|st| st.value(s)))),
            );
            row.push(d.run.n_flagged.to_string());
            row.push(d.run.n_faults.to_string());
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

pub fn localization_csv(bundle: &ReportBundle) -> Vec<u8> {
    let header = [
        "prompt_id",
        "n_tests",
        "n_overlapping",
        "union_rate",
        "recall_mean_overlapping",
        "recall_std_overlapping",
        "iou_mean_overlapping",
        "recall_mean_all",
        "recall_std_all",
        "iou_mean_all",
        "failures_a",
        "failures_b",
        "failures_c",
        "faults",
        "lowlight_failure_share",
    ];
    let rows: Vec<Vec<String>> = bundle
        .localization
        .iter()
        .map(|l| {
            let s = &l.summary;
            let count = |k| l.failures.get(&k).copied().unwrap_or(0).to_string();
            vec![
                l.prompt_id.to_string(),
                s.n_tests.to_string(),
                s.n_overlapping.to_string(),
                format_percent(Some(s.union_rate)),
                format_percent(s.recall_mean_overlapping),
                format_percent(s.recall_std_overlapping),
                format_percent(s.iou_mean_overlapping),
                format_percent(Some(s.recall_mean_all)),
                format_percent(Some(s.recall_std_all)),
                format_percent(Some(s.iou_mean_all)),
                count(FailureKind::NoPedestrianDetected),
                count(FailureKind::PartialCoordinates),
                count(FailureKind::AmbiguousDescription),
                l.n_faults.to_string(),
                format_percent(l.lowlight_failure_share),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

pub fn consistency_csv(bundle: &ReportBundle) -> Vec<u8> {
    let header = [
        "scene_id",
        "prompt_id",
        "n_runs",
        "outcomes",
        "verdict_agreement",
        "min_pairwise_iou",
        "flagged",
    ];
    let rows: Vec<Vec<String>> = bundle
        .consistency
        .iter()
        .map(|c| {
            vec![
                c.scene_id.clone(),
                c.prompt_id.to_string(),
                c.n_runs.to_string(),
                c.outcomes.join(";"),
                format_percent(c.verdict_agreement),
                format_percent(c.min_pairwise_iou()),
                c.flagged.to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

pub fn transport_csv(bundle: &ReportBundle) -> Vec<u8> {
    let header = [
        "stream_bytes",
        "stream_time_s",
        "dialogue_bytes",
        "dialogue_time_s",
        "ratio",
    ];
    let rows: Vec<Vec<String>> = bundle
        .transport
        .iter()
        .map(|t| {
            vec![
                t.stream_bytes.to_string(),
                format_fixed(Some(t.stream_time), 4),
                t.dialogue_bytes.to_string(),
                format_fixed(Some(t.dialogue_time), 4),
                format_fixed(t.ratio, 6),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

// ---------------------------------------------------------------------------
// SVG

const PALETTE: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
pub const IOU_BUCKETS: usize = 10;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn plot_y(fraction: f64) -> f64 {
    TOP + (1.0 - fraction) * (SVG_H - TOP - BOTTOM)
}

fn svg_frame(title: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        SVG_W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0,
        escape(y_label)
    );
    for tick in 0..=4 {
        let f = tick as f64 / 4.0;
        let y = plot_y(f);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            SVG_W - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}%</text>"#,
            LEFT - 6.0,
            y + 4.0,
            tick * 25
        );
    }
    s
}

/// Quantile with linear interpolation between closest ranks; `sorted` must
/// be non-empty and ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Scored recall values per prompt, misses counting as 0.
fn recall_series(records: &[ResultRecord]) -> Vec<(PromptId, Vec<f64>)> {
    let mut by_prompt: BTreeMap<PromptId, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let (Some(overlap), Some(recall)) = (r.overlap, r.recall) {
            by_prompt
                .entry(r.prompt_id)
                .or_default()
                .push(if overlap { recall } else { 0.0 });
        }
    }
    by_prompt
        .into_iter()
        .map(|(p, mut v)| {
            v.sort_by(f64::total_cmp);
            (p, v)
        })
        .collect()
}

/// Box plot of per-image recall, one box per prompt.
pub fn recall_boxplot_svg(records: &[ResultRecord]) -> Option<String> {
    let series = recall_series(records);
    if series.is_empty() {
        return None;
    }
    let mut s = svg_frame("Distribution of recall values", "recall");
    let slot = (SVG_W - LEFT - RIGHT) / series.len() as f64;
    for (i, (prompt, values)) in series.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = (slot * 0.25).min(40.0);
        let color = PALETTE[i % PALETTE.len()];
        let [min, q1, med, q3, max] = [0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile(values, q));
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            plot_y(max),
            plot_y(min)
        );
        for v in [min, max] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                plot_y(v),
                cx + half / 2.0,
                plot_y(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.6" stroke="black"/>"#,
            cx - half,
            plot_y(q3),
            2.0 * half,
            plot_y(q1) - plot_y(q3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            plot_y(med),
            cx + half,
            plot_y(med)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{prompt} (n={})</text>"#,
            SVG_H - BOTTOM + 20.0,
            values.len()
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Shares of overlapping samples per IoU decile, per prompt.
pub fn iou_bucket_shares(records: &[ResultRecord]) -> Vec<(PromptId, [f64; IOU_BUCKETS])> {
    let mut counts: BTreeMap<PromptId, [usize; IOU_BUCKETS]> = BTreeMap::new();
    for r in records {
        if let (Some(true), Some(iou)) = (r.overlap, r.iou) {
            let bucket = ((iou * IOU_BUCKETS as f64) as usize).min(IOU_BUCKETS - 1);
            counts.entry(r.prompt_id).or_default()[bucket] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(p, c)| {
            let total: usize = c.iter().sum();
            (p, c.map(|n| n as f64 / total as f64))
        })
        .collect()
}

/// Grouped bar chart of IoU decile shares among overlapping samples.
pub fn iou_shares_svg(records: &[ResultRecord]) -> Option<String> {
    let shares = iou_bucket_shares(records);
    if shares.is_empty() {
        return None;
    }
    let mut s = svg_frame("IoU of overlapping boxes", "share of overlapping tests");
    let group = (SVG_W - LEFT - RIGHT) / IOU_BUCKETS as f64;
    let bar = group * 0.8 / shares.len() as f64;
    for b in 0..IOU_BUCKETS {
        let gx = LEFT + group * b as f64 + group * 0.1;
        for (i, (_, share)) in shares.iter().enumerate() {
            let y = plot_y(share[b]);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                gx + bar * i as f64,
                plot_y(0.0) - y,
                PALETTE[i % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}-{}%</text>"#,
            gx + group * 0.4,
            SVG_H - BOTTOM + 16.0,
            b * 10,
            (b + 1) * 10
        );
    }
    for (i, (prompt, _)) in shares.iter().enumerate() {
        let x = LEFT + 90.0 * i as f64;
        let y = SVG_H - 14.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}">{prompt}</text>"#, x + 14.0);
    }
    s.push_str("</svg>\n");
    Some(s)
}

// ---------------------------------------------------------------------------
// Emission

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitSummary {
    pub written: Vec<PathBuf>,
    /// The bundle had no results; only headers were written.
    pub empty: bool,
}

fn write_file(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    written: &mut Vec<PathBuf>,
) -> Result<(), ReportError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn emit_report(
    bundle: &ReportBundle,
    targets: &[RenderTarget],
    out_dir: &Path,
) -> Result<EmitSummary, ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut targets = targets.to_vec();
    targets.sort();
    targets.dedup();
    let mut written = Vec::new();
    for target in targets {
        match target {
            RenderTarget::Csv => {
                write_file(
                    out_dir,
                    "detection.csv",
                    &detection_csv(bundle),
                    &mut written,
                )?;
                write_file(
                    out_dir,
                    "localization.csv",
                    &localization_csv(bundle),
                    &mut written,
                )?;
                write_file(
                    out_dir,
                    "consistency.csv",
                    &consistency_csv(bundle),
                    &mut written,
                )?;
                write_file(
                    out_dir,
                    "transport.csv",
                    &transport_csv(bundle),
                    &mut written,
                )?;
            }
            RenderTarget::Records => {
                let mut summary = serde_json::to_vec_pretty(bundle).expect("bundle serializes");
                summary.push(b'\n');
                write_file(out_dir, "summary.json", &summary, &mut written)?;
                write_file(
                    out_dir,
                    "results.jsonl",
                    &jsonl(&bundle.records),
                    &mut written,
                )?;
                if !bundle.transcript.is_empty() {
                    let mut t = bundle.transcript.join("\n").into_bytes();
                    t.push(b'\n');
                    write_file(out_dir, "transcript.jsonl", &t, &mut written)?;
                }
            }
            RenderTarget::Svg => {
                if let Some(svg) = recall_boxplot_svg(&bundle.records) {
                    write_file(
                        out_dir,
                        "recall_distribution.svg",
                        svg.as_bytes(),
                        &mut written,
                    )?;
                }
                if let Some(svg) = iou_shares_svg(&bundle.records) {
                    write_file(out_dir, "iou_shares.svg", svg.as_bytes(), &mut written)?;
                }
            }
        }
    }
    Ok(EmitSummary {
        written,
        empty: bundle.is_empty(),
    })
}

/// Reads back a bundle written by the `records` target.
pub fn load_bundle(dir: &Path) -> Result<ReportBundle, ReportError> {
    let read = |name: &str| -> Result<Option<String>, ReportError> {
        let path = dir.join(name);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound && name != "summary.json" => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    };
    let parse_err = |name: &str, message: String| ReportError::Parse {
        path: dir.join(name),
        message,
    };
    let summary = read("summary.json")?.unwrap_or_default();
    let mut bundle: ReportBundle =
        serde_json::from_str(&summary).map_err(|e| parse_err("summary.json", e.to_string()))?;
    if let Some(text) = read("results.jsonl")? {
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec = serde_json::from_str(line)
                .map_err(|e| parse_err("results.jsonl", format!("line {}: {e}", i + 1)))?;
            bundle.records.push(rec);
        }
    }
    if let Some(text) = read("transcript.jsonl")? {
        bundle.transcript = text.lines().map(str::to_string).collect();
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{derive_detection_stats, ConfusionMatrix};

    fn table_two_bundle() -> ReportBundle {
        let matrix = ConfusionMatrix::new(120, 6, 5, 129);
        ReportBundle {
            experiment: "exp1".into(),
            detection: vec![DetectionRow {
                prompt_id: PromptId::Bin,
                run: RunMatrix {
                    run_idx: 0,
                    matrix,
                    stats: derive_detection_stats(&matrix).ok(),
                    n_flagged: 0,
                    n_faults: 0,
                },
            }],
            ..Default::default()
        }
    }

    #[test]
    fn detection_row_has_two_decimal_percentages() {
        let csv = String::from_utf8(detection_csv(&table_two_bundle())).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "schema_v1,prompt_id,run_idx,tp,fn,fp,tn,recall,specificity,precision,npv,fpr,fdr,fnr,accuracy,f1,mcc,flagged,faults"
        );
        assert_eq!(
            lines.next().unwrap(),
            "v1,BIN,0,120,6,5,129,95.24,96.27,96.00,95.56,3.73,4.00,4.76,95.77,95.62,91.53,0,0"
        );
    }

    #[test]
    fn undefined_statistics_are_spelled_out() {
        let matrix = ConfusionMatrix::new(0, 0, 3, 2);
        let mut b = table_two_bundle();
        b.detection[0].run.matrix = matrix;
        b.detection[0].run.stats = derive_detection_stats(&matrix).ok();
        let csv = String::from_utf8(detection_csv(&b)).unwrap();
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("v1,BIN,0,0,0,3,2,undefined,40.00,0.00,"));
    }

    #[test]
    fn empty_bundle_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let out = emit_report(&ReportBundle::default(), &RenderTarget::ALL, dir.path()).unwrap();
        assert!(out.empty);
        assert!(out.written.iter().all(|p| p.extension().unwrap() != "svg"));
        let csv = fs::read_to_string(dir.path().join("detection.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.25), 1.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.5), 0.5);
    }

    #[test]
    fn targets_parse() {
        assert_eq!("svg".parse::<RenderTarget>().unwrap(), RenderTarget::Svg);
        assert!("pdf".parse::<RenderTarget>().is_err());
    }
}
