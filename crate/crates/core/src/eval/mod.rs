//! Splitting, metrics, ROC analysis, PCA, barcode data, plots and
//! misclassification export.

mod barcode;
mod pca;
mod plots;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::rng::{stream, SPLIT};
use crate::models::{ClassifierKind, ModelError, TrainedModel};
use crate::{Label, Matrix};

pub use barcode::{barcode_data, BarcodeRow};
pub use pca::{pca_project, Pca, PCA_MAX_ITER, PCA_TOL};
pub use plots::{emit_plots, PcaScatter, PlotSeries};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClassData,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("data has zero total variance")]
    DegenerateData,
    #[error("non-finite score or feature")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class stratified split: `round(n_c * ratio)` samples of each class go
/// to training. With `groups`, whole groups are assigned to one side and the
/// ratio is met as closely as a greedy pass allows.
pub fn stratified_split(labels: &[Label], ratio: f64, seed: u64, groups: Option<&[String]>) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(EvalError::SingleClassData);
    }
    let mut rng = stream(seed, SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    match groups {
        None => {
            for class in [Label::Positive, Label::Negative] {
                let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
                idx.shuffle(&mut rng);
                let k = (idx.len() as f64 * ratio).round() as usize;
                train.extend_from_slice(&idx[..k]);
                test.extend_from_slice(&idx[k..]);
            }
        }
        Some(g) => {
            if g.len() != labels.len() {
                return Err(EvalError::LengthMismatch(labels.len(), g.len()));
            }
            let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, id) in g.iter().enumerate() {
                by_group.entry(id).or_default().push(i);
            }
            let mut members: Vec<Vec<usize>> = by_group.into_values().collect();
            members.shuffle(&mut rng);
            let target = [(n_pos as f64 * ratio), ((labels.len() - n_pos) as f64 * ratio)];
            let mut have = [0.0f64; 2];
            for m in members {
                let pos = m.iter().filter(|&&i| labels[i].is_positive()).count() as f64;
                let add = [pos, m.len() as f64 - pos];
                let now: f64 = (0..2).map(|c| (have[c] - target[c]).abs()).sum();
                let then: f64 = (0..2).map(|c| (have[c] + add[c] - target[c]).abs()).sum();
                if then < now {
                    have[0] += add[0];
                    have[1] += add[1];
                    train.extend(m);
                } else {
                    test.extend(m);
                }
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(y_true: &[Label], y_pred: &[Label]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(EvalError::InvalidArgument("empty label vectors".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        match (t.is_positive(), p.is_positive()) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f1_neg: f64,
    /// Names of metrics whose denominator was zero and were set to 0.
    pub zero_division: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if p + r == 0.0 {
        flags.push(name.to_string());
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Standard formulas; a 0/0 yields 0 and is recorded in `zero_division`.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let mut flags = Vec::new();
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), "accuracy", &mut flags);
    let precision_pos = ratio(cm.tp, cm.tp + cm.fp, "precision_pos", &mut flags);
    let recall_pos = ratio(cm.tp, cm.tp + cm.fn_, "recall_pos", &mut flags);
    let precision_neg = ratio(cm.tn, cm.tn + cm.fn_, "precision_neg", &mut flags);
    let recall_neg = ratio(cm.tn, cm.tn + cm.fp, "recall_neg", &mut flags);
    let f1_pos = f1(precision_pos, recall_pos, "f1_pos", &mut flags);
    let f1_neg = f1(precision_neg, recall_neg, "f1_neg", &mut flags);
    Metrics {
        accuracy,
        precision_pos,
        recall_pos,
        f1_pos,
        precision_neg,
        recall_neg,
        f1_neg,
        zero_division: flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Score at which each point after the origin is reached.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.fpr.iter().copied().zip(self.tpr.iter().copied())
    }
}

/// Sweeps thresholds over the distinct scores, highest first; tied scores
/// form one step. The area is integrated with the trapezoid rule.
pub fn roc_auc(y_true: &[Label], scores: &[f64]) -> Result<RocCurve> {
    if y_true.len() != scores.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n_pos = y_true.iter().filter(|l| l.is_positive()).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassData);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut fpr, mut tpr, mut thresholds) = (vec![0.0], vec![0.0], Vec::new());
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        let (px, py) = (*fpr.last().unwrap(), *tpr.last().unwrap());
        auc += (x - px) * (y + py) / 2.0;
        fpr.push(x);
        tpr.push(y);
        thresholds.push(s);
    }
    Ok(RocCurve {
        fpr,
        tpr,
        thresholds,
        auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub clip_id: String,
    pub true_label: Label,
    pub predicted: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: ClassifierKind,
    pub threshold: f64,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub roc: RocCurve,
    pub misclassified: Vec<Misclassified>,
}

/// The fixed-key JSON document written as `metrics_<model>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub accuracy: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f1_neg: f64,
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalReport {
    pub fn metrics_file(&self) -> MetricsFile {
        let m = &self.metrics;
        MetricsFile {
            accuracy: m.accuracy,
            precision_pos: m.precision_pos,
            recall_pos: m.recall_pos,
            f1_pos: m.f1_pos,
            precision_neg: m.precision_neg,
            recall_neg: m.recall_neg,
            f1_neg: m.f1_neg,
            auc: self.roc.auc,
            tp: self.confusion.tp,
            fp: self.confusion.fp,
            tn: self.confusion.tn,
            fn_: self.confusion.fn_,
        }
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.metrics_file())?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }
}

/// Builds a report from precomputed scores. Predictions are
/// `score >= threshold`.
pub fn report_from_scores(
    kind: ClassifierKind,
    threshold: f64,
    scores: &[f64],
    y_true: &[Label],
    clip_ids: &[String],
) -> Result<EvalReport> {
    if clip_ids.len() != y_true.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), clip_ids.len()));
    }
    let roc = roc_auc(y_true, scores)?;
    let y_pred: Vec<Label> = scores.iter().map(|&s| Label::from_bool(s >= threshold)).collect();
    let cm = confusion(y_true, &y_pred)?;
    let misclassified = (0..y_true.len())
        .filter(|&i| y_true[i] != y_pred[i])
        .map(|i| Misclassified {
            clip_id: clip_ids[i].clone(),
            true_label: y_true[i],
            predicted: y_pred[i],
            score: scores[i],
        })
        .collect();
    Ok(EvalReport {
        model_kind: kind,
        threshold,
        metrics: metrics(&cm),
        confusion: cm,
        roc,
        misclassified,
    })
}

/// Scores `x` with `model` at its default operating point.
pub fn evaluate(model: &TrainedModel, x: &Matrix, y_true: &[Label], clip_ids: &[String]) -> Result<EvalReport> {
    let scores = model.score_all(x)?;
    report_from_scores(model.kind, model.threshold(), &scores, y_true, clip_ids)
}

/// Writes `clip_id,true_label,predicted,score,audio_path`, most confident
/// mistakes first.
pub fn export_misclassified(report: &EvalReport, clips_dir: &Path, out_csv: &Path) -> Result<()> {
    if !clips_dir.is_dir() {
        return Err(EvalError::Io {
            path: clips_dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "clips directory not found"),
        });
    }
    let mut rows: Vec<&Misclassified> = report.misclassified.iter().collect();
    rows.sort_by(|a, b| {
        let da = (a.score - report.threshold).abs();
        let db = (b.score - report.threshold).abs();
        db.total_cmp(&da).then_with(|| a.clip_id.cmp(&b.clip_id))
    });
    let file = std::fs::File::create(out_csv).map_err(io_err(out_csv))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["clip_id", "true_label", "predicted", "score", "audio_path"])?;
    for m in rows {
        let audio = clips_dir.join(format!("{}.wav", m.clip_id));
        w.write_record([
            m.clip_id.as_str(),
            m.true_label.as_str(),
            m.predicted.as_str(),
            &m.score.to_string(),
            &audio.to_string_lossy(),
        ])?;
    }
    w.flush().map_err(io_err(out_csv))
}

/// Row of a `misclassified_<model>.csv` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassifiedRow {
    pub clip_id: String,
    pub true_label: Label,
    pub predicted: Label,
    pub score: f64,
    pub audio_path: String,
}

pub fn read_misclassified(path: &Path) -> Result<Vec<MisclassifiedRow>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Into::into)
}
