//! Clinician review of misclassified clips.
//!
//! Verdicts are appended to a JSONL log, one object per line with an RFC 3339
//! timestamp. [`ReviewService`] answers the review API independently of any
//! HTTP server; [`apply_verdicts`] folds a verdict log into `labels.npy`.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{read_labels, write_labels, EmbedError};
use crate::eval::{read_misclassified, EvalError};
use crate::Label;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown clip id {0:?}")]
    UnknownClipId(String),
    #[error("{path}:{line}: {source}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, ReviewError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReviewError + '_ {
    move |source| ReviewError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    RelabelPositive,
    RelabelNegative,
}

impl Verdict {
    /// Label a relabel verdict assigns; `None` for `confirm`.
    pub fn target(self) -> Option<Label> {
        match self {
            Verdict::Confirm => None,
            Verdict::RelabelPositive => Some(Label::Positive),
            Verdict::RelabelNegative => Some(Label::Negative),
        }
    }
}

/// Body of `POST /api/verdict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub clip_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
}

/// One line of the verdict log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub timestamp: String,
    pub clip_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
}

/// Append-only verdict log. Appends are serialised and flushed to disk
/// before returning.
pub struct VerdictLog {
    path: PathBuf,
    lock: Mutex<()>,
}

impl VerdictLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, req: &VerdictRequest) -> Result<VerdictRecord> {
        let record = VerdictRecord {
            timestamp: now(),
            clip_id: req.clip_id.clone(),
            verdict: req.verdict,
            note: req.note.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("verdict record serialises");
        line.push('\n');
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        f.sync_data().map_err(io_err(&self.path))?;
        Ok(record)
    }
}

/// Reads a verdict log; a missing file is an empty log. Blank lines are skipped.
pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| ReviewError::CorruptLog {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

/// Element of `GET /api/misclassified`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub clip_id: String,
    pub true_label: Label,
    pub predicted: Label,
    pub score: f64,
    pub audio_url: String,
}

/// Body of `GET /api/progress`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub reviewed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn json<T: Serialize>(value: &T) -> Self {
        Self {
            status: 200,
            content_type: "application/json".into(),
            body: serde_json::to_vec(value).expect("response serialises"),
        }
    }

    fn error(status: u16, message: &str) -> Self {
        Self {
            status,
            content_type: "application/json".into(),
            body: serde_json::to_vec(&serde_json::json!({ "error": message })).expect("error serialises"),
        }
    }

    fn empty(status: u16) -> Self {
        Self {
            status,
            content_type: "text/plain".into(),
            body: Vec::new(),
        }
    }
}

const FALLBACK_PAGE: &str = "<!doctype html><title>respire review</title>\
<p>Review API: <code>GET /api/misclassified</code>, <code>GET /api/clip/{id}/audio</code>, \
<code>POST /api/verdict</code>, <code>GET /api/progress</code>.</p>\n";

/// State behind the review API.
pub struct ReviewService {
    items: Vec<ReviewItem>,
    clips_dir: PathBuf,
    ui_dir: Option<PathBuf>,
    log: VerdictLog,
    reviewed: Mutex<HashSet<String>>,
}

/// Clip ids are used as file names; anything outside this set is refused.
fn safe_name(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("wav") => "audio/wav",
        _ => "application/octet-stream",
    }
}

impl ReviewService {
    /// Items come from a `misclassified_<model>.csv`, in file order.
    pub fn new(misclassified_csv: &Path, clips_dir: &Path, log_path: &Path, ui_dir: Option<&Path>) -> Result<Self> {
        let items: Vec<ReviewItem> = read_misclassified(misclassified_csv)?
            .into_iter()
            .map(|r| ReviewItem {
                audio_url: format!("/api/clip/{}/audio", r.clip_id),
                clip_id: r.clip_id,
                true_label: r.true_label,
                predicted: r.predicted,
                score: r.score,
            })
            .collect();
        let known: HashSet<&str> = items.iter().map(|i| i.clip_id.as_str()).collect();
        let reviewed = read_verdicts(log_path)?
            .into_iter()
            .map(|r| r.clip_id)
            .filter(|id| known.contains(id.as_str()))
            .collect();
        Ok(Self {
            items,
            clips_dir: clips_dir.to_path_buf(),
            ui_dir: ui_dir.map(Path::to_path_buf),
            log: VerdictLog::new(log_path),
            reviewed: Mutex::new(reviewed),
        })
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn progress(&self) -> Progress {
        Progress {
            reviewed: self.reviewed.lock().unwrap_or_else(|e| e.into_inner()).len(),
            total: self.items.len(),
        }
    }

    /// Validates and durably records a verdict.
    pub fn submit(&self, req: &VerdictRequest) -> Result<VerdictRecord> {
        if !self.items.iter().any(|i| i.clip_id == req.clip_id) {
            return Err(ReviewError::UnknownClipId(req.clip_id.clone()));
        }
        let record = self.log.append(req)?;
        self.reviewed
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(req.clip_id.clone());
        Ok(record)
    }

    fn audio(&self, id: &str) -> ApiResponse {
        if !safe_name(id) {
            return ApiResponse::error(404, "unknown clip");
        }
        match std::fs::read(self.clips_dir.join(format!("{id}.wav"))) {
            Ok(body) => ApiResponse {
                status: 200,
                content_type: "audio/wav".into(),
                body,
            },
            Err(_) => ApiResponse::error(404, "clip audio not found"),
        }
    }

    fn static_file(&self, path: &str) -> ApiResponse {
        let rel = if path == "/" { "index.html" } else { path.trim_start_matches('/') };
        let Some(root) = &self.ui_dir else {
            return if rel == "index.html" {
                ApiResponse {
                    status: 200,
                    content_type: "text/html; charset=utf-8".into(),
                    body: FALLBACK_PAGE.as_bytes().to_vec(),
                }
            } else {
                ApiResponse::error(404, "not found")
            };
        };
        if rel.split('/').any(|seg| seg.is_empty() || seg == ".." || seg.starts_with('.')) {
            return ApiResponse::error(404, "not found");
        }
        let file = root.join(rel);
        match std::fs::read(&file) {
            Ok(body) => ApiResponse {
                status: 200,
                content_type: content_type(&file).into(),
                body,
            },
            Err(_) => ApiResponse::error(404, "not found"),
        }
    }

    /// Answers one request. `url` may carry a query string, which is ignored.
    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> ApiResponse {
        let path = url.split('?').next().unwrap_or("");
        let segments: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        match (method, segments.as_slice()) {
            ("GET", ["api", "misclassified"]) => ApiResponse::json(&self.items),
            ("GET", ["api", "progress"]) => ApiResponse::json(&self.progress()),
            ("GET", ["api", "clip", id, "audio"]) => self.audio(id),
            ("POST", ["api", "verdict"]) => match serde_json::from_slice::<VerdictRequest>(body) {
                Err(e) => ApiResponse::error(400, &format!("malformed verdict: {e}")),
                Ok(req) => match self.submit(&req) {
                    Ok(_) => ApiResponse::empty(204),
                    Err(ReviewError::UnknownClipId(id)) => ApiResponse::error(404, &format!("unknown clip id {id}")),
                    Err(e) => ApiResponse::error(500, &e.to_string()),
                },
            },
            (_, ["api", "misclassified" | "progress" | "verdict"]) | (_, ["api", "clip", _, "audio"]) => {
                ApiResponse::error(405, "method not allowed")
            }
            (_, ["api", ..]) => ApiResponse::error(404, "not found"),
            ("GET", _) => self.static_file(path),
            _ => ApiResponse::error(405, "method not allowed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelChange {
    pub clip_id: String,
    pub old: Label,
    pub new: Label,
}

/// One line of `labels_audit.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub applied_at: String,
    pub verdict_timestamp: String,
    pub clip_id: String,
    pub verdict: Verdict,
    pub old: Label,
    pub new: Label,
    pub note: String,
    pub backup: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApplySummary {
    pub changes: Vec<LabelChange>,
    pub confirmed: usize,
    pub backup: PathBuf,
    pub audit: PathBuf,
}

pub const AUDIT_FILE: &str = "labels_audit.jsonl";

/// First `labels.vN.npy` (N >= 1) that does not exist yet in `dir`.
pub fn next_backup_path(dir: &Path) -> PathBuf {
    (1..)
        .map(|n| dir.join(format!("labels.v{n}.npy")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

/// Applies every verdict in log order to `dataset_dir/labels.npy`, matched to
/// rows through `dataset_dir/filenames.txt`.
///
/// The original labels are copied to the next free `labels.vN.npy` before
/// anything else is written; the updated labels then replace `labels.npy`
/// atomically (skipped when nothing changed), and one audit entry per verdict
/// is appended to `labels_audit.jsonl`. Unknown clip ids abort before any write.
pub fn apply_verdicts(verdicts: &Path, dataset_dir: &Path) -> Result<ApplySummary> {
    let labels_path = dataset_dir.join("labels.npy");
    let names_path = dataset_dir.join("filenames.txt");
    let records = read_verdicts(verdicts)?;
    let mut labels = read_labels(&labels_path)?;
    let names = std::fs::read_to_string(&names_path).map_err(io_err(&names_path))?;
    let ids: Vec<&str> = names.lines().filter(|l| !l.is_empty()).collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    if ids.len() != labels.len() || index.len() != ids.len() {
        return Err(ReviewError::Embed(EmbedError::InvalidDataset(format!(
            "{} clip ids ({} distinct) for {} labels",
            ids.len(),
            index.len(),
            labels.len()
        ))));
    }
    if let Some(r) = records.iter().find(|r| !index.contains_key(r.clip_id.as_str())) {
        return Err(ReviewError::UnknownClipId(r.clip_id.clone()));
    }

    let backup = next_backup_path(dataset_dir);
    std::fs::copy(&labels_path, &backup).map_err(io_err(&backup))?;

    let applied_at = now();
    let backup_name = backup.file_name().unwrap().to_string_lossy().into_owned();
    let original = labels.clone();
    let mut entries = Vec::with_capacity(records.len());
    let mut confirmed = 0;
    for r in &records {
        let i = index[r.clip_id.as_str()];
        let old = labels[i];
        let new = r.verdict.target().unwrap_or(old);
        if r.verdict == Verdict::Confirm {
            confirmed += 1;
        }
        labels[i] = new;
        entries.push(AuditEntry {
            applied_at: applied_at.clone(),
            verdict_timestamp: r.timestamp.clone(),
            clip_id: r.clip_id.clone(),
            verdict: r.verdict,
            old,
            new,
            note: r.note.clone(),
            backup: backup_name.clone(),
        });
    }

    let changes: Vec<LabelChange> = (0..labels.len())
        .filter(|&i| labels[i] != original[i])
        .map(|i| LabelChange {
            clip_id: ids[i].to_string(),
            old: original[i],
            new: labels[i],
        })
        .collect();

    if !changes.is_empty() {
        let tmp = dataset_dir.join("labels.npy.tmp");
        write_labels(&tmp, &labels)?;
        std::fs::rename(&tmp, &labels_path).map_err(io_err(&labels_path))?;
    }

    let audit = dataset_dir.join(AUDIT_FILE);
    let mut text = String::new();
    for e in &entries {
        text.push_str(&serde_json::to_string(e).expect("audit entry serialises"));
        text.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&audit)
        .map_err(io_err(&audit))?;
    f.write_all(text.as_bytes()).map_err(io_err(&audit))?;
    f.sync_data().map_err(io_err(&audit))?;

    Ok(ApplySummary {
        changes,
        confirmed,
        backup,
        audit,
    })
}
