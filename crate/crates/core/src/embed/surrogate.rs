//! Deterministic stand-in for the remote embedding model.
//!
//! Layout of the 512 values:
//! * `0..256`: mean log10 mel energy, 4 temporal quarters x 64 bands (quarter-major);
//! * `256..512`: statistics of the frame-to-frame change of each band's log energy
//!   (mean, standard deviation, mean absolute value, max absolute value), stat-major,
//!   taken over frames that are not digital silence.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{EmbeddingProvider, Result};
use crate::{EMBEDDING_DIM, TARGET_RATE};

pub const MEL_BANDS: usize = 64;
/// Log energy reported for bands with no energy at all.
pub const LOG_FLOOR: f32 = -10.0;
const ENERGY_FLOOR: f64 = 1e-10;
const FRAME: usize = 400;
const HOP: usize = 160;
const N_FFT: usize = 512;
const N_BINS: usize = N_FFT / 2 + 1;
const QUARTERS: usize = 4;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

struct Frontend {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per band: (first bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
}

impl Frontend {
    fn new() -> Self {
        let window = (0..FRAME)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / FRAME as f64).cos())
            .collect();
        let nyquist = f64::from(TARGET_RATE) / 2.0;
        let bin_hz = f64::from(TARGET_RATE) / N_FFT as f64;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..MEL_BANDS + 2)
            .map(|i| mel_to_hz(top * i as f64 / (MEL_BANDS + 1) as f64))
            .collect();
        let filters = (0..MEL_BANDS)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let weights: Vec<f64> = (0..N_BINS)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect();
                match weights.iter().position(|&w| w > 0.0) {
                    Some(first) => {
                        let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
                        (first, weights[first..=last].to_vec())
                    }
                    // low bands narrower than one FFT bin take the nearest bin
                    None => ((mid / bin_hz).round() as usize, vec![1.0]),
                }
            })
            .collect();
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window,
            filters,
        }
    }

    /// log10 mel energies, one row of [`MEL_BANDS`] per frame.
    fn log_mel(&self, clip: &[f32]) -> Vec<[f64; MEL_BANDS]> {
        let n_frames = if clip.len() < FRAME { 1 } else { 1 + (clip.len() - FRAME) / HOP };
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; N_BINS];
        let mut out = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = f * HOP;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = if i < FRAME { clip.get(start + i).copied().unwrap_or(0.0) } else { 0.0 };
                let w = if i < FRAME { self.window[i] } else { 0.0 };
                *slot = Complex::new(f64::from(s) * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let mut row = [0.0; MEL_BANDS];
            for (slot, (first, weights)) in row.iter_mut().zip(&self.filters) {
                let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                *slot = e.max(ENERGY_FLOOR).log10();
            }
            out.push(row);
        }
        out
    }
}

fn frontend() -> &'static Frontend {
    static FRONTEND: OnceLock<Frontend> = OnceLock::new();
    FRONTEND.get_or_init(Frontend::new)
}

/// 512 deterministic features of a 2 s, 16 kHz clip.
pub fn surrogate_embed(clip: &[f32]) -> Vec<f32> {
    let frames = frontend().log_mel(clip);
    let n = frames.len();
    let mut out = Vec::with_capacity(EMBEDDING_DIM);

    for q in 0..QUARTERS {
        let (a, b) = (q * n / QUARTERS, ((q + 1) * n / QUARTERS).max(q * n / QUARTERS + 1).min(n));
        let a = a.min(b - 1);
        for band in 0..MEL_BANDS {
            let mean = frames[a..b].iter().map(|r| r[band]).sum::<f64>() / (b - a) as f64;
            out.push(mean as f32);
        }
    }

    // digitally silent frames (zero padding) carry no dynamics
    let floor = f64::from(LOG_FLOOR);
    let active: Vec<&[f64; MEL_BANDS]> = frames.iter().filter(|r| r.iter().any(|&v| v > floor)).collect();
    let mut stats = [[0.0f64; MEL_BANDS]; 4];
    let n_delta = active.len().saturating_sub(1).max(1) as f64;
    for band in 0..MEL_BANDS {
        let deltas: Vec<f64> = active.windows(2).map(|w| w[1][band] - w[0][band]).collect();
        let mean = deltas.iter().sum::<f64>() / n_delta;
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n_delta;
        let mean_abs = deltas.iter().map(|d| d.abs()).sum::<f64>() / n_delta;
        let max_abs = deltas.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        stats[0][band] = mean;
        stats[1][band] = var.sqrt();
        stats[2][band] = mean_abs;
        stats[3][band] = max_abs;
    }
    for s in &stats {
        out.extend(s.iter().map(|&v| v as f32));
    }
    debug_assert_eq!(out.len(), EMBEDDING_DIM);
    out
}

/// Local provider backed by [`surrogate_embed`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateEmbedder;

impl EmbeddingProvider for SurrogateEmbedder {
    fn embed(&self, clips: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        Ok(clips.iter().map(|c| surrogate_embed(c)).collect())
    }
}
