//! Corpus ingestion: filename metadata, annotation documents and quality filtering.
//!
//! A corpus is a directory tree of `.wav` recordings, each paired with a `.json`
//! annotation sharing its base name. Key names, the filename delimiter and the
//! gender encoding are all taken from a [`Schema`], so a differently serialised
//! corpus only needs a config change.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use walkdir::WalkDir;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed filename {name:?}: expected {expected} fields, found {found}")]
    MalformedFilename {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("non-numeric age {0:?}")]
    NonNumericAge(String),
    #[error("annotation schema error: {0}")]
    SchemaError(String),
    #[error("annotation range error: {0}")]
    RangeError(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no wav files found under {0}")]
    EmptyCorpus(PathBuf),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    Unknown,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::Unknown => "Unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub patient_id: String,
    pub age_years: f64,
    pub gender: Gender,
    pub location: String,
    pub recording_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordLabel {
    Normal,
    CAS,
    DAS,
    CasAndDas,
    PoorQuality,
}

impl RecordLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match squash(s).as_str() {
            "normal" => Some(RecordLabel::Normal),
            "cas" => Some(RecordLabel::CAS),
            "das" => Some(RecordLabel::DAS),
            "cas&das" | "cas+das" | "casanddas" | "casdas" => Some(RecordLabel::CasAndDas),
            "poorquality" => Some(RecordLabel::PoorQuality),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RecordLabel::Normal => "Normal",
            RecordLabel::CAS => "CAS",
            RecordLabel::DAS => "DAS",
            RecordLabel::CasAndDas => "CAS & DAS",
            RecordLabel::PoorQuality => "Poor Quality",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventLabel {
    Normal,
    Wheeze,
    WheezePlusCrackle,
    Stridor,
    Rhonchi,
    FineCrackle,
    CoarseCrackle,
}

impl EventLabel {
    pub const ALL: [EventLabel; 7] = [
        EventLabel::Normal,
        EventLabel::Wheeze,
        EventLabel::WheezePlusCrackle,
        EventLabel::Stridor,
        EventLabel::Rhonchi,
        EventLabel::FineCrackle,
        EventLabel::CoarseCrackle,
    ];

    /// Accepts the SPRSound spellings ("Wheeze+Crackle", "Fine Crackle", ...)
    /// case-insensitively, ignoring spaces and underscores.
    pub fn parse(s: &str) -> Option<Self> {
        match squash(s).as_str() {
            "normal" => Some(EventLabel::Normal),
            "wheeze" => Some(EventLabel::Wheeze),
            "wheeze+crackle" | "wheeze&crackle" | "wheezepluscrackle" => {
                Some(EventLabel::WheezePlusCrackle)
            }
            "stridor" => Some(EventLabel::Stridor),
            "rhonchi" => Some(EventLabel::Rhonchi),
            "finecrackle" => Some(EventLabel::FineCrackle),
            "coarsecrackle" => Some(EventLabel::CoarseCrackle),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventLabel::Normal => "Normal",
            EventLabel::Wheeze => "Wheeze",
            EventLabel::WheezePlusCrackle => "Wheeze+Crackle",
            EventLabel::Stridor => "Stridor",
            EventLabel::Rhonchi => "Rhonchi",
            EventLabel::FineCrackle => "Fine Crackle",
            EventLabel::CoarseCrackle => "Coarse Crackle",
        }
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoundEvent {
    pub start_ms: u32,
    pub end_ms: u32,
    pub label: EventLabel,
}

impl SoundEvent {
    pub fn duration_ms(&self) -> u32 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecording {
    pub base_name: String,
    pub meta: RecordingMeta,
    pub record_label: RecordLabel,
    pub events: Vec<SoundEvent>,
    pub audio_path: PathBuf,
}

/// Serialisation details of a corpus that the data itself does not pin down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub delimiter: char,
    pub record_label_key: String,
    pub events_key: String,
    pub start_key: String,
    pub end_key: String,
    pub type_key: String,
    pub gender_male: String,
    pub gender_female: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            delimiter: '_',
            record_label_key: "record_annotation".into(),
            events_key: "event_annotation".into(),
            start_key: "start".into(),
            end_key: "end".into(),
            type_key: "type".into(),
            gender_male: "1".into(),
            gender_female: "0".into(),
        }
    }
}

/// Where annotation files live relative to the audio.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    /// `foo.json` sits next to `foo.wav`.
    #[default]
    Sibling,
    /// Audio under `<root>/<wav_dir>`, annotations under `<root>/<json_dir>`,
    /// paired by base name.
    Parallel { wav_dir: String, json_dir: String },
}

pub fn parse_filename(name: &str, schema: &Schema) -> Result<RecordingMeta> {
    let fields: Vec<&str> = name.split(schema.delimiter).collect();
    if fields.len() != 5 || fields.iter().any(|f| f.is_empty()) {
        return Err(DatasetError::MalformedFilename {
            name: name.to_string(),
            expected: 5,
            found: fields.len(),
        });
    }
    let age_years: f64 = fields[1]
        .parse()
        .ok()
        .filter(|a: &f64| a.is_finite() && *a >= 0.0)
        .ok_or_else(|| DatasetError::NonNumericAge(fields[1].to_string()))?;
    let gender = if fields[2] == schema.gender_male {
        Gender::M
    } else if fields[2] == schema.gender_female {
        Gender::F
    } else {
        Gender::Unknown
    };
    Ok(RecordingMeta {
        patient_id: fields[0].to_string(),
        age_years,
        gender,
        location: fields[3].to_string(),
        recording_id: fields[4].to_string(),
    })
}

/// Inverse of [`parse_filename`]. `Unknown` gender is written as `x`.
pub fn format_filename(meta: &RecordingMeta, schema: &Schema) -> String {
    let gender = match meta.gender {
        Gender::M => schema.gender_male.as_str(),
        Gender::F => schema.gender_female.as_str(),
        Gender::Unknown => "x",
    };
    let d = schema.delimiter.to_string();
    [
        meta.patient_id.as_str(),
        &meta.age_years.to_string(),
        gender,
        meta.location.as_str(),
        meta.recording_id.as_str(),
    ]
    .join(&d)
}

fn millis(v: &Value, key: &str) -> Result<u32> {
    let out = match v {
        Value::Number(n) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64)),
        Value::String(s) => s.trim().parse::<u64>().ok(),
        _ => None,
    };
    out.and_then(|ms| u32::try_from(ms).ok())
        .ok_or_else(|| DatasetError::SchemaError(format!("{key:?} is not an integer millisecond value: {v}")))
}

/// Parses one annotation document. Millisecond fields may be JSON integers or
/// integer strings.
pub fn parse_annotation(doc: &Value, schema: &Schema) -> Result<(RecordLabel, Vec<SoundEvent>)> {
    let obj = doc
        .as_object()
        .ok_or_else(|| DatasetError::SchemaError("document is not an object".into()))?;
    let label_str = obj
        .get(&schema.record_label_key)
        .and_then(Value::as_str)
        .ok_or_else(|| DatasetError::SchemaError(format!("missing {:?}", schema.record_label_key)))?;
    let record_label = RecordLabel::parse(label_str)
        .ok_or_else(|| DatasetError::SchemaError(format!("unknown record label {label_str:?}")))?;
    let raw_events = obj
        .get(&schema.events_key)
        .and_then(Value::as_array)
        .ok_or_else(|| DatasetError::SchemaError(format!("missing {:?} array", schema.events_key)))?;

    let mut events = Vec::with_capacity(raw_events.len());
    for ev in raw_events {
        let field = |k: &str| {
            ev.get(k)
                .ok_or_else(|| DatasetError::SchemaError(format!("event missing {k:?}")))
        };
        let start_ms = millis(field(&schema.start_key)?, &schema.start_key)?;
        let end_ms = millis(field(&schema.end_key)?, &schema.end_key)?;
        let ty = field(&schema.type_key)?
            .as_str()
            .ok_or_else(|| DatasetError::SchemaError("event type is not a string".into()))?;
        let label = EventLabel::parse(ty)
            .ok_or_else(|| DatasetError::SchemaError(format!("unknown event type {ty:?}")))?;
        if start_ms >= end_ms {
            return Err(DatasetError::RangeError(format!(
                "event start {start_ms} ms is not before end {end_ms} ms"
            )));
        }
        events.push(SoundEvent {
            start_ms,
            end_ms,
            label,
        });
    }
    events.sort_by_key(|e| (e.start_ms, e.end_ms));
    if let Some(w) = events.windows(2).find(|w| w[0].start_ms == w[1].start_ms) {
        return Err(DatasetError::RangeError(format!(
            "two events start at {} ms",
            w[0].start_ms
        )));
    }
    if events.is_empty() && record_label != RecordLabel::PoorQuality {
        return Err(DatasetError::SchemaError(format!(
            "{} record has no events",
            record_label.as_str()
        )));
    }
    Ok((record_label, events))
}

/// Recordings found by [`scan_corpus`] plus everything that was skipped.
#[derive(Debug, Default)]
pub struct ScanOutcome {
    pub recordings: Vec<AnnotatedRecording>,
    pub warnings: Vec<String>,
}

fn stem_of(p: &Path) -> Option<String> {
    p.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn collect_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            DatasetError::io(path, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")))
        })?;
        if entry.file_type().is_file() && has_ext(entry.path(), ext) {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn load_pair(base: &str, wav: &Path, json: &Path, schema: &Schema) -> std::result::Result<AnnotatedRecording, String> {
    let meta = parse_filename(base, schema).map_err(|e| format!("{base}: {e}"))?;
    let text = std::fs::read_to_string(json).map_err(|e| format!("{}: {e}", json.display()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| format!("{}: invalid json: {e}", json.display()))?;
    let (record_label, events) = parse_annotation(&doc, schema).map_err(|e| format!("{base}: {e}"))?;
    Ok(AnnotatedRecording {
        base_name: base.to_string(),
        meta,
        record_label,
        events,
        audio_path: wav.to_path_buf(),
    })
}

/// Finds every wav/annotation pair under `root`.
///
/// Unpaired or unparsable files are reported in [`ScanOutcome::warnings`];
/// only an unreadable root or a tree without a single wav file is an error.
/// Recordings come back sorted by base name.
pub fn scan_corpus(root: &Path, layout: &Layout, schema: &Schema) -> Result<ScanOutcome> {
    std::fs::metadata(root).map_err(|e| DatasetError::io(root, e))?;
    let (wav_root, json_root) = match layout {
        Layout::Sibling => (root.to_path_buf(), root.to_path_buf()),
        Layout::Parallel { wav_dir, json_dir } => (root.join(wav_dir), root.join(json_dir)),
    };
    let wavs = collect_files(&wav_root, "wav")?;
    if wavs.is_empty() {
        return Err(DatasetError::EmptyCorpus(root.to_path_buf()));
    }
    let jsons = collect_files(&json_root, "json")?;

    let mut warnings = Vec::new();
    let mut json_by_stem: BTreeMap<String, PathBuf> = BTreeMap::new();
    for j in &jsons {
        if let Some(stem) = stem_of(j) {
            if let Some(prev) = json_by_stem.insert(stem.clone(), j.clone()) {
                if matches!(layout, Layout::Parallel { .. }) {
                    warnings.push(format!(
                        "duplicate annotation base name {stem}: {} and {}",
                        prev.display(),
                        j.display()
                    ));
                }
            }
        }
    }

    let mut pairs: BTreeMap<String, (PathBuf, PathBuf)> = BTreeMap::new();
    let mut used_json = std::collections::BTreeSet::new();
    for wav in &wavs {
        let Some(stem) = stem_of(wav) else {
            warnings.push(format!("{}: unreadable file name", wav.display()));
            continue;
        };
        let json = match layout {
            Layout::Sibling => Some(wav.with_extension("json")).filter(|p| p.is_file()),
            Layout::Parallel { .. } => json_by_stem.get(&stem).cloned(),
        };
        match json {
            Some(j) => {
                used_json.insert(j.clone());
                if pairs.insert(stem.clone(), (wav.clone(), j)).is_some() {
                    warnings.push(format!("duplicate recording base name {stem}; keeping {}", wav.display()));
                }
            }
            None => warnings.push(format!("{}: no annotation file", wav.display())),
        }
    }
    for j in &jsons {
        if !used_json.contains(j) {
            warnings.push(format!("{}: no matching wav file", j.display()));
        }
    }

    let loaded: Vec<_> = pairs
        .par_iter()
        .map(|(base, (wav, json))| load_pair(base, wav, json, schema))
        .collect();
    let mut recordings = Vec::with_capacity(loaded.len());
    for r in loaded {
        match r {
            Ok(rec) => recordings.push(rec),
            Err(w) => warnings.push(w),
        }
    }
    warnings.sort();
    Ok(ScanOutcome {
        recordings,
        warnings,
    })
}

/// Drops recordings flagged as poor quality, keeping order.
pub fn filter_quality(recordings: Vec<AnnotatedRecording>) -> Vec<AnnotatedRecording> {
    recordings
        .into_iter()
        .filter(|r| r.record_label != RecordLabel::PoorQuality)
        .collect()
}

#[derive(Debug, Serialize)]
struct ManifestRow<'a> {
    base_name: &'a str,
    patient_id: &'a str,
    age_years: f64,
    gender: String,
    location: &'a str,
    recording_id: &'a str,
    record_label: &'static str,
    n_events: usize,
    audio_path: String,
}

pub fn write_manifest(path: &Path, recordings: &[AnnotatedRecording]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    // explicit header so an empty manifest still carries it
    w.write_record([
        "base_name",
        "patient_id",
        "age_years",
        "gender",
        "location",
        "recording_id",
        "record_label",
        "n_events",
        "audio_path",
    ])?;
    for r in recordings {
        let row = ManifestRow {
            base_name: &r.base_name,
            patient_id: &r.meta.patient_id,
            age_years: r.meta.age_years,
            gender: r.meta.gender.to_string(),
            location: &r.meta.location,
            recording_id: &r.meta.recording_id,
            record_label: r.record_label.as_str(),
            n_events: r.events.len(),
            audio_path: r.audio_path.display().to_string(),
        };
        w.serialize(&row)?;
    }
    w.flush().map_err(|e| DatasetError::io(path, e))?;
    Ok(())
}
