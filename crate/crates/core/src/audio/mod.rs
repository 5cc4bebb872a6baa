//! Audio decoding, channel/rate conversion and clip segmentation.

mod resample;
mod segment;
mod wav;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EventLabel;
use crate::Label;

pub use resample::{resample, Resampler, KAISER_BETA, RESAMPLER_CUTOFF, RESAMPLER_TAPS};
pub use segment::{
    build_clip_set, clip_id, load_recording_16k, read_clip_metadata, segment_event, window_offsets,
    write_clip_set, Clip, ClipMeta, ClipSet, PadMode, SegmentParams,
};
pub use wav::{decode_wav, encode_wav_pcm16, read_wav_file, write_wav_pcm16};

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated wav file: {0}")]
    TruncatedFile(String),
    #[error("event {start_ms}..{end_ms} ms extends past the {len_ms} ms waveform")]
    EventOutOfBounds { start_ms: u32, end_ms: u32, len_ms: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Decoded audio. Multi-channel data is stored interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl Waveform {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            channels: 1,
        }
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / usize::from(self.channels.max(1))
    }

    pub fn duration_ms(&self) -> u64 {
        (self.frames() as u64 * 1000) / u64::from(self.sample_rate.max(1))
    }
}

/// Averages stereo frames; mono passes through untouched.
pub fn to_mono(w: Waveform) -> Waveform {
    match w.channels {
        2 => Waveform {
            samples: w
                .samples
                .chunks_exact(2)
                .map(|f| (f[0] + f[1]) * 0.5)
                .collect(),
            sample_rate: w.sample_rate,
            channels: 1,
        },
        _ => w,
    }
}

/// What to do with crackle-only events, which belong to neither class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CracklePolicy {
    #[default]
    Exclude,
    Positive,
    Negative,
}

impl std::str::FromStr for CracklePolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exclude" => Ok(CracklePolicy::Exclude),
            "positive" => Ok(CracklePolicy::Positive),
            "negative" => Ok(CracklePolicy::Negative),
            other => Err(format!("unknown crackle policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryLabel {
    Positive,
    Negative,
    Excluded,
}

impl BinaryLabel {
    pub fn label(self) -> Option<Label> {
        match self {
            BinaryLabel::Positive => Some(Label::Positive),
            BinaryLabel::Negative => Some(Label::Negative),
            BinaryLabel::Excluded => None,
        }
    }
}

/// Maps an event annotation onto the binary task.
pub fn binary_label(label: EventLabel, crackles: CracklePolicy) -> BinaryLabel {
    match label {
        EventLabel::Wheeze | EventLabel::WheezePlusCrackle | EventLabel::Rhonchi | EventLabel::Stridor => {
            BinaryLabel::Positive
        }
        EventLabel::Normal => BinaryLabel::Negative,
        EventLabel::FineCrackle | EventLabel::CoarseCrackle => match crackles {
            CracklePolicy::Exclude => BinaryLabel::Excluded,
            CracklePolicy::Positive => BinaryLabel::Positive,
            CracklePolicy::Negative => BinaryLabel::Negative,
        },
    }
}
