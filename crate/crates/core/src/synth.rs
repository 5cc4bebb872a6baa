//! Synthetic annotated corpus for offline end-to-end runs.
//!
//! Positive recordings carry wheeze events: tone bursts between 300 and 600 Hz
//! mixed with breath noise at a fixed signal-to-noise ratio. Negative
//! recordings carry normal events made of band-limited breath noise only.
//! Event loudness is drawn independently of the class. A few recordings add
//! crackle events, a few are marked poor quality, some are stereo and most
//! are not at 16 kHz, so every ingest path is exercised.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audio::{AudioError, Result};
use crate::dataset::{format_filename, EventLabel, Gender, RecordLabel, RecordingMeta, Schema};
use crate::models::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub recordings: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub duration_ms: u32,
    /// Recordings marked poor quality (no events), taken from the total.
    pub poor_quality: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            recordings: 40,
            seed: 42,
            snr_db: 10.0,
            duration_ms: 14_000,
            poor_quality: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub recordings: usize,
    pub wheeze_events: usize,
    pub normal_events: usize,
    pub crackle_events: usize,
    pub poor_quality: usize,
    pub stereo: usize,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// White noise through a 100 Hz one-pole high-pass and two 1 kHz one-pole
/// low-passes, scaled to unit RMS.
pub fn breath_noise(len: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dt = 1.0 / f64::from(rate);
    let lp = |fc: f64| {
        let rc = 1.0 / (2.0 * PI * fc);
        dt / (rc + dt)
    };
    let a_lo = lp(1000.0);
    let rc_hi = 1.0 / (2.0 * PI * 100.0);
    let a_hi = rc_hi / (rc_hi + dt);
    let (mut hp, mut prev_in, mut l1, mut l2) = (0.0, 0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = rng.random_range(-1.0..1.0);
            hp = a_hi * (hp + w - prev_in);
            prev_in = w;
            l1 += a_lo * (hp - l1);
            l2 += a_lo * (l1 - l2);
            l2
        })
        .collect();
    let r = rms(&out);
    if r > 0.0 {
        out.iter_mut().for_each(|v| *v /= r);
    }
    out
}

/// Raised-cosine fade in and out over `ramp` samples.
fn envelope(x: &mut [f64], ramp: usize) {
    let n = x.len();
    let ramp = ramp.min(n / 2);
    for i in 0..ramp {
        let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

/// Tone burst with a slow pitch glide plus breath noise `snr_db` below it, unit RMS.
pub fn wheeze(len: usize, rate: u32, snr_db: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = rng.random_range(300.0..600.0);
    let glide = rng.random_range(-0.05..0.05);
    let mut phase = 0.0;
    let tone: Vec<f64> = (0..len)
        .map(|i| {
            let f = f0 * (1.0 + glide * i as f64 / len as f64);
            phase += 2.0 * PI * f / f64::from(rate);
            phase.sin()
        })
        .collect();
    let noise_gain = rms(&tone) / 10f64.powf(snr_db / 20.0);
    let noise = breath_noise(len, rate, rng);
    let mut out: Vec<f64> = tone.iter().zip(&noise).map(|(t, n)| t + noise_gain * n).collect();
    let r = rms(&out);
    out.iter_mut().for_each(|v| *v /= r);
    out
}

/// Breath noise with short decaying clicks every 80 to 200 ms, unit RMS.
fn crackles(len: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = breath_noise(len, rate, rng);
    out.iter_mut().for_each(|v| *v *= 0.3);
    let mut t = rng.random_range(0..rate as usize / 10);
    while t < len {
        let f = rng.random_range(600.0..1200.0);
        let amp = rng.random_range(1.5..3.0);
        for k in 0..(rate as usize / 100).min(len - t) {
            let s = k as f64 / f64::from(rate);
            out[t + k] += amp * (-s * 600.0).exp() * (2.0 * PI * f * s).sin();
        }
        t += rng.random_range(rate as usize * 8 / 100..rate as usize * 20 / 100);
    }
    let r = rms(&out);
    out.iter_mut().for_each(|v| *v /= r);
    out
}

fn write_wav(path: &Path, channels: &[Vec<f32>], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| AudioError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for i in 0..channels[0].len() {
        for ch in channels {
            let v = (f64::from(ch[i]) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v).map_err(err)?;
        }
    }
    w.finalize().map_err(err)
}

struct PlannedEvent {
    start_ms: u32,
    end_ms: u32,
    label: EventLabel,
}

/// Writes `<name>.wav` and `<name>.json` pairs into `dir`.
pub fn generate_corpus(dir: &Path, cfg: &SynthConfig) -> Result<SynthSummary> {
    std::fs::create_dir_all(dir).map_err(|source| AudioError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let schema = Schema::default();
    let mut summary = SynthSummary::default();
    for i in 0..cfg.recordings {
        let mut rng = stream(cfg.seed, i as u64);
        let rate = if i % 5 == 4 { 16_000 } else { 22_050 };
        let stereo = i % 4 == 3;
        let poor = i >= cfg.recordings.saturating_sub(cfg.poor_quality);
        let positive = i % 2 == 0;
        let with_crackle = !poor && i % 6 == 1;

        let mut plan = Vec::new();
        if !poor {
            let mut t = rng.random_range(200..800u32);
            while t + 1100 < cfg.duration_ms {
                let crackle_now = with_crackle && plan.len() == 1;
                let dur = rng.random_range(1000..4500u32).min(cfg.duration_ms - 100 - t);
                let label = if crackle_now {
                    EventLabel::FineCrackle
                } else if positive {
                    EventLabel::Wheeze
                } else {
                    EventLabel::Normal
                };
                plan.push(PlannedEvent {
                    start_ms: t,
                    end_ms: t + dur,
                    label,
                });
                t += dur + rng.random_range(300..1200u32);
            }
        }

        let n = (u64::from(cfg.duration_ms) * u64::from(rate) / 1000) as usize;
        let mut signal: Vec<f64> = breath_noise(n, rate, &mut rng).iter().map(|v| 0.01 * v).collect();
        for e in &plan {
            let a = (u64::from(e.start_ms) * u64::from(rate) / 1000) as usize;
            let b = ((u64::from(e.end_ms) * u64::from(rate) / 1000) as usize).min(n);
            let mut burst = match e.label {
                EventLabel::Wheeze => {
                    summary.wheeze_events += 1;
                    wheeze(b - a, rate, cfg.snr_db, &mut rng)
                }
                EventLabel::FineCrackle => {
                    summary.crackle_events += 1;
                    crackles(b - a, rate, &mut rng)
                }
                _ => {
                    summary.normal_events += 1;
                    breath_noise(b - a, rate, &mut rng)
                }
            };
            envelope(&mut burst, rate as usize / 50);
            let gain = rng.random_range(0.06..0.15);
            for (s, v) in signal[a..b].iter_mut().zip(&burst) {
                *s += gain * v;
            }
        }

        let left: Vec<f32> = signal.iter().map(|&v| v as f32).collect();
        let mut channels = vec![left];
        if stereo {
            let extra = breath_noise(n, rate, &mut rng);
            let right = signal.iter().zip(&extra).map(|(s, x)| (0.9 * s + 0.003 * x) as f32).collect();
            channels.push(right);
            summary.stereo += 1;
        }

        let meta = RecordingMeta {
            patient_id: format!("{}", 41_000_000 + i),
            age_years: 2.0 + (i % 11) as f64 * 0.5,
            gender: if i % 3 == 0 { Gender::F } else { Gender::M },
            location: format!("p{}", 1 + i % 4),
            recording_id: format!("{}", 100 + i),
        };
        let name = format_filename(&meta, &schema);
        write_wav(&dir.join(format!("{name}.wav")), &channels, rate)?;

        let record = if poor {
            summary.poor_quality += 1;
            RecordLabel::PoorQuality
        } else {
            match (positive, with_crackle) {
                (true, true) => RecordLabel::CasAndDas,
                (true, false) => RecordLabel::CAS,
                (false, true) => RecordLabel::DAS,
                (false, false) => RecordLabel::Normal,
            }
        };
        let events: Vec<_> = plan
            .iter()
            .map(|e| {
                json!({
                    "start": e.start_ms.to_string(),
                    "end": e.end_ms.to_string(),
                    "type": e.label.as_str(),
                })
            })
            .collect();
        let doc = json!({ "record_annotation": record.as_str(), "event_annotation": events });
        let json_path = dir.join(format!("{name}.json"));
        std::fs::write(&json_path, serde_json::to_string_pretty(&doc).expect("json serialises")).map_err(|source| {
            AudioError::Io {
                path: json_path.clone(),
                source,
            }
        })?;
        summary.recordings += 1;
    }
    Ok(summary)
}
