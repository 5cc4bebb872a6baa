//! Rational-ratio windowed-sinc resampler.
//!
//! The ratio `to/from` is reduced to `up/down`; output sample `n` sits at input
//! position `n * down / up`, so only `up` distinct fractional offsets (phases)
//! exist and each gets its own precomputed 64-tap Kaiser-windowed sinc kernel.

use super::Waveform;

pub const RESAMPLER_TAPS: usize = 64;
/// Low-pass cutoff as a fraction of the lower of the two sample rates.
pub const RESAMPLER_CUTOFF: f64 = 0.45;
pub const KAISER_BETA: f64 = 8.0;

const HALF: i64 = (RESAMPLER_TAPS / 2) as i64;
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone)]
pub struct Resampler {
    from: u32,
    to: u32,
    up: u64,
    down: u64,
    cutoff: f64,
    table: Option<Vec<f64>>,
}

impl Resampler {
    /// Panics if either rate is zero.
    pub fn new(from: u32, to: u32) -> Self {
        assert!(from > 0 && to > 0, "sample rates must be positive");
        let g = gcd(u64::from(from), u64::from(to));
        let up = u64::from(to) / g;
        let down = u64::from(from) / g;
        // cycles per input sample
        let cutoff = RESAMPLER_CUTOFF * (up as f64 / down as f64).min(1.0);
        let mut r = Self {
            from,
            to,
            up,
            down,
            cutoff,
            table: None,
        };
        if up <= MAX_TABLE_PHASES {
            let mut table = Vec::with_capacity(up as usize * RESAMPLER_TAPS);
            for p in 0..up {
                table.extend(r.kernel(p));
            }
            r.table = Some(table);
        }
        r
    }

    /// Normalised taps for input offsets `-31..=32` around the integer position.
    fn kernel(&self, phase: u64) -> [f64; RESAMPLER_TAPS] {
        let frac = phase as f64 / self.up as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut taps = [0.0; RESAMPLER_TAPS];
        for (slot, j) in taps.iter_mut().zip(-(HALF - 1)..=HALF) {
            let dist = j as f64 - frac;
            let r = dist / HALF as f64;
            let window = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
            };
            *slot = 2.0 * self.cutoff * sinc(2.0 * self.cutoff * dist) * window;
        }
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        taps
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u64 * self.up + self.down / 2) / self.down) as usize
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.from == self.to {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let len = input.len() as i64;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = pos % self.up;
            let taps: &[f64] = match &self.table {
                Some(t) => &t[phase as usize * RESAMPLER_TAPS..(phase as usize + 1) * RESAMPLER_TAPS],
                None => {
                    scratch = self.kernel(phase);
                    &scratch
                }
            };
            let first = base - (HALF - 1);
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let idx = first + k as i64;
                if (0..len).contains(&idx) {
                    acc += h * f64::from(input[idx as usize]);
                }
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Resamples a mono waveform. Equal rates return the input unchanged.
pub fn resample(w: Waveform, target_rate: u32) -> Waveform {
    assert_eq!(w.channels, 1, "resample expects mono input");
    if w.sample_rate == target_rate {
        return w;
    }
    let r = Resampler::new(w.sample_rate, target_rate);
    Waveform {
        samples: r.process(&w.samples),
        sample_rate: target_rate,
        channels: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn tone(freq: f64, rate: u32, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()) as f32)
            .collect()
    }

    /// Frequency of the largest DFT magnitude bin (DC excluded), and the bin width.
    fn dft_peak_hz(x: &[f32], rate: u32) -> (f64, f64) {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(f64::from(v), 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let half = buf.len() / 2;
        let (bin, _) = buf[1..half]
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 1, c.norm()))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        let width = f64::from(rate) / x.len() as f64;
        (bin as f64 * width, width)
    }

    #[test]
    fn identity_at_equal_rates() {
        let w = Waveform::mono(tone(440.0, 16000, 1000), 16000);
        let out = resample(w.clone(), 16000);
        assert_eq!(out.samples, w.samples);
    }

    #[test]
    fn length_formula() {
        let out = resample(Waveform::mono(vec![0.1; 32000], 32000), 16000);
        assert_eq!(out.samples.len(), 16000);
        assert_eq!(Resampler::new(44100, 16000).output_len(44100), 16000);
        assert_eq!(Resampler::new(8000, 16000).output_len(3), 6);
        // 7 * 16000 / 44100 = 2.539..
        assert_eq!(Resampler::new(44100, 16000).output_len(7), 3);
    }

    #[test]
    fn upsampled_tone_keeps_its_peak() {
        let w = Waveform::mono(tone(440.0, 8000, 8000), 8000);
        let out = resample(w, 16000);
        assert_eq!(out.samples.len(), 16000);
        let (peak, width) = dft_peak_hz(&out.samples, 16000);
        assert!((peak - 440.0).abs() <= width, "peak at {peak} Hz");
    }

    #[test]
    fn downsampled_tone_keeps_its_peak() {
        let w = Waveform::mono(tone(1000.0, 44100, 44100), 44100);
        let out = resample(w, 16000);
        let (peak, width) = dft_peak_hz(&out.samples, 16000);
        assert!((peak - 1000.0).abs() <= width, "peak at {peak} Hz");
    }

    #[test]
    fn downsampling_suppresses_aliases() {
        // 12 kHz would fold to 4 kHz at a 16 kHz output rate
        let w = Waveform::mono(tone(12000.0, 48000, 48000), 48000);
        let out = resample(w, 16000);
        let rms = (out.samples[200..15800].iter().map(|v| f64::from(*v).powi(2)).sum::<f64>() / 15600.0).sqrt();
        assert!(rms < 1e-3, "alias rms {rms}");
    }

    #[test]
    fn dc_is_preserved() {
        let out = resample(Waveform::mono(vec![0.5; 4410], 44100), 16000);
        for v in &out.samples[40..out.samples.len() - 40] {
            assert!((v - 0.5).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn large_phase_count_falls_back_to_direct_kernels() {
        let r = Resampler::new(44101, 16000);
        assert!(r.table.is_none());
        let out = r.process(&tone(500.0, 44101, 4410));
        assert_eq!(out.len(), r.output_len(4410));
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
