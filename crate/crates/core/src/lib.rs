//! Respiratory sound classification toolkit.
//!
//! The crate is organised along the stages of the pipeline:
//!
//! * [`dataset`]: corpus scanning, filename metadata and annotation parsing.
//! * [`audio`]: WAV decoding, mono/resampling and fixed-length clip segmentation.
//! * [`embed`]: embedding providers (remote HTTP service, local surrogate) and NPY persistence.
//! * [`models`]: five binary classifiers trained from scratch.
//! * [`eval`]: splitting, metrics, ROC/AUC, PCA, barcode data, plots and error export.
//! * [`review`]: clinician verdict log and label correction.
//! * [`synth`]: a synthetic corpus generator for offline end-to-end runs.

pub mod audio;
pub mod dataset;
pub mod embed;
pub mod eval;
pub mod matrix;
pub mod models;
pub mod review;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use matrix::Matrix;

/// Sample rate every clip is brought to before embedding.
pub const TARGET_RATE: u32 = 16_000;
/// Clip length in milliseconds.
pub const CLIP_MS: u32 = 2_000;
/// Clip length in samples at [`TARGET_RATE`].
pub const CLIP_SAMPLES: usize = 32_000;
/// Dimensionality of every embedding vector.
pub const EMBEDDING_DIM: usize = 512;

/// Binary class of a clip. `Positive` is asthma-indicative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// 0 for Normal, 1 for Abnormal.
    pub fn as_int(self) -> i64 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "1" | "abnormal" => Ok(Label::Positive),
            "negative" | "0" | "normal" => Ok(Label::Negative),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
