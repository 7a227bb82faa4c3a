//! Experiment orchestration: binary detection, single-prompt localization,
//! prompt comparison, run-to-run consistency and the low-light breakdown of
//! localization failures.
//!
//! Every experiment issues `runs_per_prompt` queries per scene through a
//! [`Gateway`] on a bounded thread pool and then scores the replies in a
//! single pass. Results are sorted by `(scene_id, prompt_id, run_idx)` before
//! anything is derived from them, so outputs never depend on the order in
//! which queries complete.
//!
//! A query that exhausts its retries is kept in the results as a fault and
//! left out of all scoring; the number of faults is reported next to every
//! aggregate. Setup errors (missing images, unscripted mock keys, bad
//! configuration) abort the experiment.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ImageSource, SceneRecord, SceneSet};
use crate::gateway::{Gateway, GatewayError, QueryKey, QueryParams};
use crate::geometry::{self, normalize_bbox, GeometryError, NormalizedBBox};
use crate::perception::{
    parse_response, DetectionOutcome, ExpectedFormat, FailureKind, ParsedDetection, PromptId,
};
use crate::stats::{
    build_confusion_matrix, derive_detection_stats, summarize_localization, ConfusionMatrix,
    DetectionStats, LocalizationSample, LocalizationSummary, StatsError,
};

pub const DEFAULT_RUNS: u32 = 3;
pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("prompt {prompt_id} does not produce {expected:?} replies")]
    WrongPromptFormat {
        prompt_id: PromptId,
        expected: ExpectedFormat,
    },
    #[error("no prompts to compare")]
    EmptyPromptList,
    #[error("no scenes to query")]
    NoScenes,
    #[error("scene `{scene_id}`: {reason}")]
    InvalidScene { scene_id: String, reason: String },
    #[error("all {0} queries failed")]
    AllQueriesFailed(usize),
    #[error("no (scene, prompt) group has two or more answered runs")]
    InsufficientRuns,
    #[error("no failures to analyse")]
    EmptyFailureSet,
    #[error("failure on scene `{0}` which is not in the scene set")]
    UnknownScene(String),
    #[error("query setup: {0}")]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub runs_per_prompt: u32,
    /// Upper bound on concurrent gateway calls.
    pub parallelism: usize,
    pub params: QueryParams,
    /// Pairwise IoU below which two runs on the same scene count as
    /// disagreeing.
    pub consistency_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs_per_prompt: DEFAULT_RUNS,
            parallelism: 1,
            params: QueryParams::default(),
            consistency_threshold: DEFAULT_CONSISTENCY_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if self.runs_per_prompt == 0 {
            return bad("runs_per_prompt must be at least 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.consistency_threshold) {
            return bad("consistency_threshold must be in [0, 1]");
        }
        self.params.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Detection(ParsedDetection),
    /// The query exhausted its retries; `fault` is the gateway fault name.
    Fault {
        fault: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scene_id: String,
    pub prompt_id: PromptId,
    pub run_idx: u32,
    pub outcome: RunOutcome,
    /// Seconds; zero on scripted backends.
    pub latency: f64,
    pub attempts: u32,
    pub raw_text: String,
    /// Set when a yes/no reply could not be read and was scored as "yes".
    pub flagged: bool,
}

impl RunResult {
    pub fn detection(&self) -> Option<&ParsedDetection> {
        match &self.outcome {
            RunOutcome::Detection(d) => Some(d),
            RunOutcome::Fault { .. } => None,
        }
    }

    pub fn is_fault(&self) -> bool {
        matches!(self.outcome, RunOutcome::Fault { .. })
    }

    fn sort_key(&self) -> (&str, PromptId, u32) {
        (&self.scene_id, self.prompt_id, self.run_idx)
    }
}

fn with_pool<T: Send>(
    threads: usize,
    job: impl FnOnce() -> T + Send,
) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// Queries every scene `runs_per_prompt` times and returns sorted results.
fn dispatch(
    scenes: &[&SceneRecord],
    prompt_id: PromptId,
    gateway: &Gateway,
    images: &dyn ImageSource,
    config: &ExperimentConfig,
) -> Result<Vec<RunResult>, ExperimentError> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(ExperimentError::NoScenes);
    }
    let spec = prompt_id.spec();
    let mut scenes = scenes.to_vec();
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let mut payloads = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let bytes = images.load(s).map_err(|e| ExperimentError::InvalidScene {
            scene_id: s.scene_id.clone(),
            reason: format!("image {}: {e}", s.image_path.display()),
        })?;
        payloads.push(bytes);
    }
    let jobs: Vec<(usize, u32)> = (0..scenes.len())
        .flat_map(|i| (0..config.runs_per_prompt).map(move |r| (i, r)))
        .collect();

    let run = |&(i, run_idx): &(usize, u32)| -> Result<RunResult, GatewayError> {
        let scene_id = scenes[i].scene_id.clone();
        let key = QueryKey::new(scene_id.clone(), prompt_id, run_idx);
        match gateway.send_vision_query(&key, &payloads[i], spec.text, &config.params) {
            Ok(raw) => {
                let parsed = parse_response(spec.expected_format, &raw.text);
                let flagged =
                    spec.expected_format == ExpectedFormat::YesNo && parsed.verdict().is_none();
                Ok(RunResult {
                    scene_id,
                    prompt_id,
                    run_idx,
                    outcome: RunOutcome::Detection(parsed),
                    latency: raw.latency,
                    attempts: raw.attempt_count,
                    raw_text: raw.text,
                    flagged,
                })
            }
            Err(e) if e.is_query_fault() => Ok(RunResult {
                scene_id,
                prompt_id,
                run_idx,
                outcome: RunOutcome::Fault {
                    fault: e.fault_name().to_string(),
                },
                latency: 0.0,
                attempts: e.transcript().len() as u32,
                raw_text: String::new(),
                flagged: false,
            }),
            Err(e) => Err(e),
        }
    };
    let collected: Vec<Result<RunResult, GatewayError>> =
        with_pool(config.parallelism, || jobs.par_iter().map(run).collect())?;
    let mut results = collected.into_iter().collect::<Result<Vec<_>, _>>()?;
    results.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    if results.iter().all(RunResult::is_fault) {
        return Err(ExperimentError::AllQueriesFailed(results.len()));
    }
    Ok(results)
}

fn require_format(prompt_id: PromptId, expected: ExpectedFormat) -> Result<(), ExperimentError> {
    if prompt_id.spec().expected_format != expected {
        return Err(ExperimentError::WrongPromptFormat {
            prompt_id,
            expected,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Binary detection

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMatrix {
    pub run_idx: u32,
    pub matrix: ConfusionMatrix,
    /// `None` when every query of the run faulted.
    pub stats: Option<DetectionStats>,
    pub n_flagged: usize,
    pub n_faults: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOutcome {
    pub prompt_id: PromptId,
    pub results: Vec<RunResult>,
    /// Headline matrix, from run 0.
    pub matrix: ConfusionMatrix,
    pub stats: DetectionStats,
    pub per_run: Vec<RunMatrix>,
}

/// The prediction a binary result contributes: its verdict, or "yes" for an
/// unreadable reply. `None` for faults.
pub fn binary_prediction(result: &RunResult) -> Option<bool> {
    result.detection().map(|d| d.verdict().unwrap_or(true))
}

pub fn run_binary_experiment(
    scenes: &SceneSet,
    prompt_id: PromptId,
    gateway: &Gateway,
    images: &dyn ImageSource,
    config: &ExperimentConfig,
) -> Result<BinaryOutcome, ExperimentError> {
    require_format(prompt_id, ExpectedFormat::YesNo)?;
    let all: Vec<&SceneRecord> = scenes.iter().collect();
    let results = dispatch(&all, prompt_id, gateway, images, config)?;
    let labels: BTreeMap<&str, bool> = scenes
        .iter()
        .map(|s| (s.scene_id.as_str(), s.has_pedestrian))
        .collect();

    let mut per_run = Vec::with_capacity(config.runs_per_prompt as usize);
    for run_idx in 0..config.runs_per_prompt {
        let in_run: Vec<&RunResult> = results.iter().filter(|r| r.run_idx == run_idx).collect();
        let mut predictions = Vec::new();
        let mut run_labels = Vec::new();
        for r in &in_run {
            if let Some(p) = binary_prediction(r) {
                predictions.push((r.scene_id.clone(), p));
                run_labels.push((r.scene_id.clone(), labels[r.scene_id.as_str()]));
            }
        }
        let matrix = build_confusion_matrix(&predictions, &run_labels)?;
        per_run.push(RunMatrix {
            run_idx,
            matrix,
            stats: derive_detection_stats(&matrix).ok(),
            n_flagged: in_run.iter().filter(|r| r.flagged).count(),
            n_faults: in_run.iter().filter(|r| r.is_fault()).count(),
        });
    }
    let matrix = per_run[0].matrix;
    let stats = derive_detection_stats(&matrix)?;
    Ok(BinaryOutcome {
        prompt_id,
        results,
        matrix,
        stats,
        per_run,
    })
}

// ---------------------------------------------------------------------------
// Localization

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationOutcome {
    pub prompt_id: PromptId,
    pub results: Vec<RunResult>,
    /// One per non-fault result, in result order.
    pub samples: Vec<LocalizationSample>,
    pub summary: LocalizationSummary,
    pub n_faults: usize,
}

/// The single ground-truth box of a localization scene, in the unit frame.
pub fn ground_truth_box(scene: &SceneRecord) -> Result<NormalizedBBox, ExperimentError> {
    let invalid = |reason: String| ExperimentError::InvalidScene {
        scene_id: scene.scene_id.clone(),
        reason,
    };
    match scene.gt_boxes.as_slice() {
        [only] => {
            let b = normalize_bbox(only, scene.width, scene.height)
                .map_err(|e| invalid(e.to_string()))?;
            if b.is_degenerate() {
                return Err(invalid("ground-truth box has zero area".into()));
            }
            Ok(b)
        }
        boxes => Err(invalid(format!(
            "expected exactly one ground-truth box, found {}",
            boxes.len()
        ))),
    }
}

/// Scores one parsed reply against the ground truth. Taxonomy failures score
/// as a miss.
pub fn score_detection(
    scene_id: &str,
    run_idx: u32,
    gt: &NormalizedBBox,
    detection: &ParsedDetection,
) -> Result<LocalizationSample, GeometryError> {
    let (overlap, recall, iou) = match detection.bbox() {
        Some(b) if geometry::overlaps(gt, &b.bbox) => (
            true,
            geometry::overlap_recall(gt, &b.bbox)?,
            geometry::iou(gt, &b.bbox)?,
        ),
        _ => (false, 0.0, 0.0),
    };
    Ok(LocalizationSample {
        scene_id: scene_id.to_string(),
        run_idx,
        overlap,
        recall,
        iou,
    })
}

pub fn run_localization_experiment(
    scenes: &SceneSet,
    prompt_id: PromptId,
    gateway: &Gateway,
    images: &dyn ImageSource,
    config: &ExperimentConfig,
) -> Result<LocalizationOutcome, ExperimentError> {
    require_format(prompt_id, ExpectedFormat::CoordinateTemplate)?;
    if !scenes.negatives.is_empty() {
        return Err(ExperimentError::InvalidScene {
            scene_id: scenes.negatives[0].scene_id.clone(),
            reason: "localization takes pedestrian scenes only".into(),
        });
    }
    let gts: BTreeMap<&str, NormalizedBBox> = scenes
        .positives
        .iter()
        .map(|s| Ok((s.scene_id.as_str(), ground_truth_box(s)?)))
        .collect::<Result<_, ExperimentError>>()?;
    let all: Vec<&SceneRecord> = scenes.positives.iter().collect();
    let results = dispatch(&all, prompt_id, gateway, images, config)?;

    let mut samples = Vec::with_capacity(results.len());
    for r in &results {
        if let Some(d) = r.detection() {
            samples.push(score_detection(
                &r.scene_id,
                r.run_idx,
                &gts[r.scene_id.as_str()],
                d,
            )?);
        }
    }
    let summary = summarize_localization(&samples)?;
    let n_faults = results.len() - samples.len();
    Ok(LocalizationOutcome {
        prompt_id,
        results,
        samples,
        summary,
        n_faults,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecalls {
    pub scene_id: String,
    /// Recall per answered run, in run order; misses contribute 0.
    pub recalls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptComparison {
    pub outcomes: Vec<LocalizationOutcome>,
    /// Per prompt, per image recall values across runs.
    pub distributions: Vec<(PromptId, Vec<ImageRecalls>)>,
}

impl PromptComparison {
    pub fn table(&self) -> Vec<(PromptId, &LocalizationSummary)> {
        self.outcomes
            .iter()
            .map(|o| (o.prompt_id, &o.summary))
            .collect()
    }
}

pub fn recall_distribution(samples: &[LocalizationSample]) -> Vec<ImageRecalls> {
    let mut by_scene: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for s in samples {
        by_scene
            .entry(&s.scene_id)
            .or_default()
            .push((s.run_idx, if s.overlap { s.recall } else { 0.0 }));
    }
    by_scene
        .into_iter()
        .map(|(scene_id, mut runs)| {
            runs.sort_by_key(|&(r, _)| r);
            ImageRecalls {
                scene_id: scene_id.to_string(),
                recalls: runs.into_iter().map(|(_, v)| v).collect(),
            }
        })
        .collect()
}

pub fn run_prompt_comparison(
    scenes: &SceneSet,
    prompt_ids: &[PromptId],
    gateway: &Gateway,
    images: &dyn ImageSource,
    config: &ExperimentConfig,
) -> Result<PromptComparison, ExperimentError> {
    if prompt_ids.is_empty() {
        return Err(ExperimentError::EmptyPromptList);
    }
    for &p in prompt_ids {
        require_format(p, ExpectedFormat::CoordinateTemplate)?;
    }
    let mut outcomes = Vec::with_capacity(prompt_ids.len());
    for &p in prompt_ids {
        outcomes.push(run_localization_experiment(
            scenes, p, gateway, images, config,
        )?);
    }
    let distributions = outcomes
        .iter()
        .map(|o| (o.prompt_id, recall_distribution(&o.samples)))
        .collect();
    Ok(PromptComparison {
        outcomes,
        distributions,
    })
}

// ---------------------------------------------------------------------------
// Consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub scene_id: String,
    pub prompt_id: PromptId,
    /// Answered runs; faults are skipped.
    pub n_runs: usize,
    /// Outcome label per answered run: `yes`, `no`, `box`, or a failure
    /// kind name.
    pub outcomes: Vec<String>,
    /// Share of runs agreeing with the most common verdict (yes/no prompts).
    pub verdict_agreement: Option<f64>,
    /// IoU for every pair of boxed runs, in `(0,1), (0,2), (1,2)…` order.
    pub pairwise_iou: Vec<f64>,
    pub flagged: bool,
}

impl ConsistencyEntry {
    pub fn min_pairwise_iou(&self) -> Option<f64> {
        self.pairwise_iou.iter().copied().reduce(f64::min)
    }
}

fn outcome_label(d: &ParsedDetection) -> String {
    match d.outcome {
        DetectionOutcome::Verdict(true) => "yes".into(),
        DetectionOutcome::Verdict(false) => "no".into(),
        DetectionOutcome::Located(_) => "box".into(),
        DetectionOutcome::Failure(k) => k.as_str().into(),
    }
}

fn pair_iou(a: &NormalizedBBox, b: &NormalizedBBox) -> f64 {
    match geometry::iou(a, b) {
        Ok(v) => v,
        // Two zero-area boxes agree only if they are the same box.
        Err(_) => {
            if a == b {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Groups results by `(scene_id, prompt_id)` and flags groups whose runs
/// disagree: differing outcome kinds, or any pair of boxes with IoU below
/// `threshold`.
pub fn analyze_run_consistency(
    results: &[RunResult],
    threshold: f64,
) -> Result<Vec<ConsistencyEntry>, ExperimentError> {
    let mut groups: BTreeMap<(&str, PromptId), Vec<&RunResult>> = BTreeMap::new();
    for r in results.iter().filter(|r| !r.is_fault()) {
        groups
            .entry((&r.scene_id, r.prompt_id))
            .or_default()
            .push(r);
    }
    let mut entries = Vec::new();
    for ((scene_id, prompt_id), mut runs) in groups {
        if runs.len() < 2 {
            continue;
        }
        runs.sort_by_key(|r| r.run_idx);
        let detections: Vec<&ParsedDetection> = runs.iter().filter_map(|r| r.detection()).collect();
        let outcomes: Vec<String> = detections.iter().map(|d| outcome_label(d)).collect();
        let distinct: BTreeSet<&str> = outcomes.iter().map(String::as_str).collect();

        let verdicts: Vec<bool> = runs.iter().filter_map(|r| binary_prediction(r)).collect();
        let verdict_agreement =
            (prompt_id.spec().expected_format == ExpectedFormat::YesNo).then(|| {
                let yes = verdicts.iter().filter(|&&v| v).count();
                yes.max(verdicts.len() - yes) as f64 / verdicts.len() as f64
            });

        let boxes: Vec<NormalizedBBox> = detections
            .iter()
            .filter_map(|d| d.bbox())
            .map(|b| b.bbox)
            .collect();
        let mut pairwise_iou = Vec::new();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                pairwise_iou.push(pair_iou(&boxes[i], &boxes[j]));
            }
        }
        let flagged = distinct.len() > 1 || pairwise_iou.iter().any(|&v| v < threshold);
        entries.push(ConsistencyEntry {
            scene_id: scene_id.to_string(),
            prompt_id,
            n_runs: runs.len(),
            outcomes,
            verdict_agreement,
            pairwise_iou,
            flagged,
        });
    }
    if entries.is_empty() {
        return Err(ExperimentError::InsufficientRuns);
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Low-light breakdown

/// Distinct scenes with at least one taxonomy failure, sorted.
pub fn failure_scenes(results: &[RunResult]) -> Vec<&str> {
    let ids: BTreeSet<&str> = results
        .iter()
        .filter(|r| {
            r.detection()
                .and_then(ParsedDetection::failure_kind)
                .is_some()
        })
        .map(|r| r.scene_id.as_str())
        .collect();
    ids.into_iter().collect()
}

/// Fraction of failing scenes shot in low light (dusk, sunset, shade or
/// solar glare).
pub fn lowlight_failure_share(
    results: &[RunResult],
    scenes: &SceneSet,
) -> Result<f64, ExperimentError> {
    let failing = failure_scenes(results);
    if failing.is_empty() {
        return Err(ExperimentError::EmptyFailureSet);
    }
    let mut low = 0usize;
    for id in &failing {
        let scene = scenes
            .get(id)
            .ok_or_else(|| ExperimentError::UnknownScene(id.to_string()))?;
        if scene.is_low_light() {
            low += 1;
        }
    }
    Ok(low as f64 / failing.len() as f64)
}

// ---------------------------------------------------------------------------
// Flat records

/// One line of a results file: a run result with its score, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scene_id: String,
    pub prompt_id: PromptId,
    pub run_idx: u32,
    /// `verdict`, `located`, `failure` or `fault`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamped: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_kind: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    pub attempts: u32,
    pub latency: f64,
    pub raw_text: String,
}

impl ResultRecord {
    pub fn new(result: &RunResult, sample: Option<&LocalizationSample>) -> Self {
        let mut rec = ResultRecord {
            scene_id: result.scene_id.clone(),
            prompt_id: result.prompt_id,
            run_idx: result.run_idx,
            status: String::new(),
            verdict: None,
            bbox: None,
            clamped: None,
            degenerate: None,
            failure_kind: None,
            fault: None,
            flagged: result.flagged,
            overlap: sample.map(|s| s.overlap),
            recall: sample.map(|s| s.recall),
            iou: sample.map(|s| s.iou),
            attempts: result.attempts,
            latency: result.latency,
            raw_text: result.raw_text.clone(),
        };
        match &result.outcome {
            RunOutcome::Fault { fault } => {
                rec.status = "fault".into();
                rec.fault = Some(fault.clone());
            }
            RunOutcome::Detection(d) => {
                rec.status = d.kind().into();
                rec.verdict = d.verdict();
                if let Some(b) = d.bbox() {
                    rec.bbox = Some(b.bbox.as_array());
                    rec.clamped = Some(b.clamped);
                    rec.degenerate = Some(b.degenerate);
                }
                rec.failure_kind = d.failure_kind();
            }
        }
        rec
    }
}

impl BinaryOutcome {
    pub fn records(&self) -> Vec<ResultRecord> {
        self.results
            .iter()
            .map(|r| ResultRecord::new(r, None))
            .collect()
    }
}

impl LocalizationOutcome {
    pub fn records(&self) -> Vec<ResultRecord> {
        let mut samples = self.samples.iter();
        self.results
            .iter()
            .map(|r| {
                let s = if r.is_fault() { None } else { samples.next() };
                ResultRecord::new(r, s)
            })
            .collect()
    }
}
