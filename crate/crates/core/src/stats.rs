//! Confusion matrices, the ten binary-classification statistics, and
//! aggregation of per-sample localization scores.
//!
//! All rates are fractions in `[0, 1]` (MCC in `[-1, 1]`); percentages are
//! only produced when a report is rendered.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("prediction for unknown scene `{0}`")]
    UnknownSceneId(String),
    #[error("more than one prediction for scene `{0}`")]
    DuplicatePrediction(String),
    #[error("duplicate label for scene `{0}`")]
    DuplicateLabel(String),
    #[error("no prediction for labelled scene `{0}`")]
    MissingPrediction(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("{0} is undefined (zero denominator)")]
    UndefinedStatistic(Statistic),
    #[error("no localization samples")]
    EmptySampleSet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Joins predictions to labels by scene id and counts outcomes.
///
/// Every label must receive exactly one prediction, so `tp + fn` equals the
/// number of positive labels and `fp + tn` the number of negative ones.
pub fn build_confusion_matrix(
    predictions: &[(String, bool)],
    labels: &[(String, bool)],
) -> Result<ConfusionMatrix, StatsError> {
    let mut truth = HashMap::with_capacity(labels.len());
    for (id, label) in labels {
        if truth.insert(id.as_str(), *label).is_some() {
            return Err(StatsError::DuplicateLabel(id.clone()));
        }
    }
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut cm = ConfusionMatrix::default();
    for (id, predicted) in predictions {
        let actual = *truth
            .get(id.as_str())
            .ok_or_else(|| StatsError::UnknownSceneId(id.clone()))?;
        if !seen.insert(id.as_str()) {
            return Err(StatsError::DuplicatePrediction(id.clone()));
        }
        cm.record(*predicted, actual);
    }
    if let Some((id, _)) = labels.iter().find(|(id, _)| !seen.contains(id.as_str())) {
        return Err(StatsError::MissingPrediction(id.clone()));
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Recall,
    Specificity,
    Precision,
    Npv,
    Fpr,
    Fdr,
    Fnr,
    Accuracy,
    F1,
    Mcc,
}

impl Statistic {
    pub const ALL: [Statistic; 10] = [
        Statistic::Recall,
        Statistic::Specificity,
        Statistic::Precision,
        Statistic::Npv,
        Statistic::Fpr,
        Statistic::Fdr,
        Statistic::Fnr,
        Statistic::Accuracy,
        Statistic::F1,
        Statistic::Mcc,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            Statistic::Recall => "recall",
            Statistic::Specificity => "specificity",
            Statistic::Precision => "precision",
            Statistic::Npv => "npv",
            Statistic::Fpr => "fpr",
            Statistic::Fdr => "fdr",
            Statistic::Fnr => "fnr",
            Statistic::Accuracy => "accuracy",
            Statistic::F1 => "f1",
            Statistic::Mcc => "mcc",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Statistic::Recall => "Recall",
            Statistic::Specificity => "Specificity",
            Statistic::Precision => "Precision",
            Statistic::Npv => "Negative Predictive Value",
            Statistic::Fpr => "False Positive Rate",
            Statistic::Fdr => "False Discovery Rate",
            Statistic::Fnr => "False Negative Rate",
            Statistic::Accuracy => "Accuracy",
            Statistic::F1 => "F1 Score",
            Statistic::Mcc => "Matthews Correlation Coefficient",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// The ten statistics of a confusion matrix. A `None` field means the
/// statistic's denominator was zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub npv: Option<f64>,
    pub fpr: Option<f64>,
    pub fdr: Option<f64>,
    pub fnr: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
}

impl DetectionStats {
    pub fn value(&self, stat: Statistic) -> Option<f64> {
        match stat {
            Statistic::Recall => self.recall,
            Statistic::Specificity => self.specificity,
            Statistic::Precision => self.precision,
            Statistic::Npv => self.npv,
            Statistic::Fpr => self.fpr,
            Statistic::Fdr => self.fdr,
            Statistic::Fnr => self.fnr,
            Statistic::Accuracy => self.accuracy,
            Statistic::F1 => self.f1,
            Statistic::Mcc => self.mcc,
        }
    }

    pub fn get(&self, stat: Statistic) -> Result<f64, StatsError> {
        self.value(stat).ok_or(StatsError::UndefinedStatistic(stat))
    }

    pub fn undefined(&self) -> Vec<Statistic> {
        Statistic::ALL
            .into_iter()
            .filter(|s| self.value(*s).is_none())
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

/// Derives all ten statistics. Only an all-zero matrix is an error; any
/// individual statistic with a zero denominator comes back as `None`.
pub fn derive_detection_stats(cm: &ConfusionMatrix) -> Result<DetectionStats, StatsError> {
    if cm.total() == 0 {
        return Err(StatsError::EmptyMatrix);
    }
    let ConfusionMatrix { tp, fn_, fp, tn } = *cm;
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    let mcc = {
        let (tp, fn_, fp, tn) = (tp as f64, fn_ as f64, fp as f64, tn as f64);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        (den > 0.0).then(|| ((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0))
    };
    Ok(DetectionStats {
        recall,
        specificity: ratio(tn, tn + fp),
        precision,
        npv: ratio(tn, tn + fn_),
        fpr: ratio(fp, fp + tn),
        fdr: ratio(fp, fp + tp),
        fnr: ratio(fn_, fn_ + tp),
        accuracy: ratio(tp + tn, cm.total()),
        f1,
        mcc,
    })
}

/// One scored localization attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSample {
    pub scene_id: String,
    pub run_idx: u32,
    pub overlap: bool,
    pub recall: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub n_tests: usize,
    pub n_overlapping: usize,
    /// Share of tests whose generated box overlaps the ground truth.
    pub union_rate: f64,
    /// Aggregates over overlapping tests only; `None` when no test overlaps.
    pub recall_mean_overlapping: Option<f64>,
    pub recall_std_overlapping: Option<f64>,
    pub iou_mean_overlapping: Option<f64>,
    /// Aggregates over all tests, non-overlapping ones contributing 0.
    pub recall_mean_all: f64,
    pub recall_std_all: f64,
    pub iou_mean_all: f64,
}

/// Population mean and standard deviation. Values are sorted before
/// summation so the result does not depend on input order.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = sorted.iter().map(|v| (v - mean).powi(2)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn summarize_localization(
    samples: &[LocalizationSample],
) -> Result<LocalizationSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySampleSet);
    }
    let all_recall: Vec<f64> = samples
        .iter()
        .map(|s| if s.overlap { s.recall } else { 0.0 })
        .collect();
    let all_iou: Vec<f64> = samples
        .iter()
        .map(|s| if s.overlap { s.iou } else { 0.0 })
        .collect();
    let hits: Vec<&LocalizationSample> = samples.iter().filter(|s| s.overlap).collect();
    let hit_recall: Vec<f64> = hits.iter().map(|s| s.recall).collect();
    let hit_iou: Vec<f64> = hits.iter().map(|s| s.iou).collect();

    let (recall_mean_all, recall_std_all) = mean_std(&all_recall).expect("non-empty");
    let (iou_mean_all, _) = mean_std(&all_iou).expect("non-empty");
    let overlapping = mean_std(&hit_recall);
    Ok(LocalizationSummary {
        n_tests: samples.len(),
        n_overlapping: hits.len(),
        union_rate: hits.len() as f64 / samples.len() as f64,
        recall_mean_overlapping: overlapping.map(|(m, _)| m),
        recall_std_overlapping: overlapping.map(|(_, s)| s),
        iou_mean_overlapping: mean_std(&hit_iou).map(|(m, _)| m),
        recall_mean_all,
        recall_std_all,
        iou_mean_all,
    })
}
