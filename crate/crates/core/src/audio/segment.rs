//! Cutting annotated events into fixed 2-second clips.
//!
//! An event of `d` ms becomes:
//! * `d <= 2000`: one clip holding the event followed by `(2000 - d) * 16` zeros;
//! * `d > 2000`: windows starting every `hop_ms` from the event onset while they
//!   fit, plus one window aligned to the event end when the last hop stops short.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binary_label, read_wav_file, resample, to_mono, write_wav_pcm16, AudioError, CracklePolicy, Result, Waveform};
use crate::dataset::{AnnotatedRecording, EventLabel, SoundEvent};
use crate::{Label, CLIP_MS, CLIP_SAMPLES, TARGET_RATE};

const SAMPLES_PER_MS: usize = (TARGET_RATE / 1000) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Event at the start of the clip, zeros after it.
    #[default]
    Tail,
    /// Event centred, zeros split evenly (extra zero goes after).
    Center,
}

impl std::str::FromStr for PadMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tail" => Ok(PadMode::Tail),
            "center" => Ok(PadMode::Center),
            other => Err(format!("unknown pad mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub hop_ms: u32,
    pub pad: PadMode,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            hop_ms: 1000,
            pad: PadMode::Tail,
        }
    }
}

impl SegmentParams {
    fn validate(&self) -> Result<()> {
        if !(100..=CLIP_MS).contains(&self.hop_ms) {
            return Err(AudioError::InvalidArgument(format!(
                "hop {} ms outside [100, {CLIP_MS}]",
                self.hop_ms
            )));
        }
        Ok(())
    }
}

/// Exactly [`CLIP_SAMPLES`] mono samples at 16 kHz plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub samples: Vec<f32>,
    pub label: Label,
    pub event_label: EventLabel,
    pub source: String,
    pub event_index: usize,
    /// Window start relative to the event onset.
    pub window_offset_ms: u32,
    /// Zeros added to reach the fixed length.
    pub padded_samples: usize,
}

impl Clip {
    pub fn id(&self) -> String {
        clip_id(&self.source, self.event_index, self.window_offset_ms)
    }
}

pub fn clip_id(source: &str, event_index: usize, window_offset_ms: u32) -> String {
    format!("{source}_{event_index}_{window_offset_ms}")
}

/// Window start offsets (ms from event onset) for an event lasting `duration_ms`.
pub fn window_offsets(duration_ms: u32, hop_ms: u32) -> Vec<u32> {
    if duration_ms <= CLIP_MS {
        return vec![0];
    }
    let full = (duration_ms - CLIP_MS) / hop_ms;
    let mut offsets: Vec<u32> = (0..=full).map(|k| k * hop_ms).collect();
    let last = full * hop_ms;
    if last + CLIP_MS < duration_ms {
        offsets.push(duration_ms - CLIP_MS);
    }
    offsets
}

fn clamp(s: f32) -> f32 {
    s.clamp(-1.0, 1.0)
}

/// Cuts one event of a 16 kHz mono waveform into clips labelled `label`.
pub fn segment_event(
    wave: &Waveform,
    event: &SoundEvent,
    event_index: usize,
    source: &str,
    label: Label,
    params: &SegmentParams,
) -> Result<Vec<Clip>> {
    params.validate()?;
    if wave.sample_rate != TARGET_RATE || wave.channels != 1 {
        return Err(AudioError::InvalidArgument(format!(
            "segmentation needs mono {TARGET_RATE} Hz audio, got {} channel(s) at {} Hz",
            wave.channels, wave.sample_rate
        )));
    }
    let start = event.start_ms as usize * SAMPLES_PER_MS;
    let end = event.end_ms as usize * SAMPLES_PER_MS;
    if event.start_ms >= event.end_ms || end > wave.samples.len() {
        return Err(AudioError::EventOutOfBounds {
            start_ms: event.start_ms,
            end_ms: event.end_ms,
            len_ms: wave.duration_ms(),
        });
    }
    let span = &wave.samples[start..end];
    let make = |samples, window_offset_ms, padded_samples| Clip {
        samples,
        label,
        event_label: event.label,
        source: source.to_string(),
        event_index,
        window_offset_ms,
        padded_samples,
    };

    let duration = event.duration_ms();
    if duration <= CLIP_MS {
        let pad = CLIP_SAMPLES - span.len();
        let lead = match params.pad {
            PadMode::Tail => 0,
            PadMode::Center => pad / 2,
        };
        let mut samples = vec![0.0f32; CLIP_SAMPLES];
        for (dst, &s) in samples[lead..lead + span.len()].iter_mut().zip(span) {
            *dst = clamp(s);
        }
        return Ok(vec![make(samples, 0, pad)]);
    }

    Ok(window_offsets(duration, params.hop_ms)
        .into_iter()
        .map(|off| {
            let s = off as usize * SAMPLES_PER_MS;
            let samples = span[s..s + CLIP_SAMPLES].iter().copied().map(clamp).collect();
            make(samples, off, 0)
        })
        .collect())
}

/// One row of `clips_metadata.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub source: String,
    pub event_index: usize,
    pub window_offset_ms: u32,
    pub padded_samples: usize,
    pub event_label: String,
    pub binary_label: Label,
}

impl From<&Clip> for ClipMeta {
    fn from(c: &Clip) -> Self {
        Self {
            clip_id: c.id(),
            source: c.source.clone(),
            event_index: c.event_index,
            window_offset_ms: c.window_offset_ms,
            padded_samples: c.padded_samples,
            event_label: c.event_label.as_str().to_string(),
            binary_label: c.label,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClipSet {
    pub clips: Vec<Clip>,
    pub metadata: Vec<ClipMeta>,
}

/// Decodes a recording and brings it to mono 16 kHz.
pub fn load_recording_16k(path: &Path) -> Result<Waveform> {
    let w = to_mono(read_wav_file(path)?);
    Ok(resample(w, TARGET_RATE))
}

fn clips_for_recording(rec: &AnnotatedRecording, params: &SegmentParams, crackles: CracklePolicy) -> Result<Vec<Clip>> {
    let wanted: Vec<(usize, &SoundEvent, Label)> = rec
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| binary_label(e.label, crackles).label().map(|l| (i, e, l)))
        .collect();
    if wanted.is_empty() {
        return Ok(Vec::new());
    }
    let wave = load_recording_16k(&rec.audio_path)?;
    let mut clips = Vec::new();
    for (i, e, l) in wanted {
        clips.extend(segment_event(&wave, e, i, &rec.base_name, l, params)?);
    }
    Ok(clips)
}

/// Segments every non-excluded event of every recording.
///
/// Event indices refer to the position in the recording's (sorted) event
/// list, so excluded events leave gaps. Output order is recording order, then
/// event order, then window offset.
pub fn build_clip_set(recordings: &[AnnotatedRecording], params: &SegmentParams, crackles: CracklePolicy) -> Result<ClipSet> {
    params.validate()?;
    let per_recording: Vec<Result<Vec<Clip>>> = recordings
        .par_iter()
        .map(|r| clips_for_recording(r, params, crackles))
        .collect();
    let mut clips = Vec::new();
    for r in per_recording {
        clips.extend(r?);
    }
    let metadata = clips.iter().map(ClipMeta::from).collect();
    Ok(ClipSet { clips, metadata })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AudioError + '_ {
    move |source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<out>/asthma_clips/<clip_id>.wav` and `<out>/clips_metadata.csv`,
/// replacing clips left over from a previous run.
pub fn write_clip_set(set: &ClipSet, out_dir: &Path) -> Result<()> {
    let clip_dir = out_dir.join("asthma_clips");
    std::fs::create_dir_all(&clip_dir).map_err(io_err(&clip_dir))?;
    for entry in std::fs::read_dir(&clip_dir).map_err(io_err(&clip_dir))? {
        let p = entry.map_err(io_err(&clip_dir))?.path();
        if p.extension().is_some_and(|e| e == "wav") {
            std::fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    set.clips.par_iter().try_for_each(|c| {
        let p = clip_dir.join(format!("{}.wav", c.id()));
        write_wav_pcm16(&p, &c.samples, TARGET_RATE)
    })?;
    let csv_path = out_dir.join("clips_metadata.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&csv_path)?;
    w.write_record([
        "clip_id",
        "source",
        "event_index",
        "window_offset_ms",
        "padded_samples",
        "event_label",
        "binary_label",
    ])?;
    for m in &set.metadata {
        w.serialize(m)?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    Ok(())
}

pub fn read_clip_metadata(path: &Path) -> Result<Vec<ClipMeta>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
