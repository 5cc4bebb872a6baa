use std::io::Cursor;
use std::path::Path;

use super::{AudioError, Result, Waveform};

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::Unsupported => AudioError::UnsupportedFormat("compression code other than PCM or IEEE float".into()),
        hound::Error::IoError(io) => AudioError::TruncatedFile(io.to_string()),
        hound::Error::FormatError(msg) => AudioError::UnsupportedFormat(msg.to_string()),
        hound::Error::TooWide => AudioError::UnsupportedFormat("sample width too large".into()),
        other => AudioError::UnsupportedFormat(other.to_string()),
    }
}

/// Decodes a RIFF/WAVE byte buffer into interleaved samples in `[-1, 1]`.
///
/// Integer PCM is divided by `2^(bits-1)` (so PCM16 by 32768); float data is
/// clamped. Only 1 or 2 channels are accepted.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::UnsupportedFormat(format!("{} channels", spec.channels)));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::UnsupportedFormat("zero sample rate".into()));
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (f64::from(v) * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(map_hound)?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
    };
    if samples.is_empty() {
        return Err(AudioError::TruncatedFile("no audio samples".into()));
    }
    if !samples.len().is_multiple_of(usize::from(spec.channels)) {
        return Err(AudioError::TruncatedFile("partial frame at end of data".into()));
    }
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

pub fn read_wav_file(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_wav(&bytes)
}

fn quantize(s: f32) -> i16 {
    (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Mono 16-bit PCM encoding of `samples`.
pub fn encode_wav_pcm16(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    {
        // writing into a Vec cannot fail
        let mut w = hound::WavWriter::new(&mut buf, spec).expect("in-memory wav writer");
        let mut w16 = w.get_i16_writer(samples.len() as u32);
        for &s in samples {
            w16.write_sample(quantize(s));
        }
        w16.flush().expect("in-memory wav writer");
        w.finalize().expect("in-memory wav writer");
    }
    buf.into_inner()
}

pub fn write_wav_pcm16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    std::fs::write(path, encode_wav_pcm16(samples, sample_rate)).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_bytes(samples: &[i16], channels: u16, rate: u32) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        let mut w = hound::WavWriter::new(&mut buf, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        buf.into_inner()
    }

    /// Hand-built canonical 44-byte header with an arbitrary format code.
    fn raw_wav(format: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(b"RIFF");
        v.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        v.extend_from_slice(b"WAVEfmt ");
        v.extend_from_slice(&16u32.to_le_bytes());
        v.extend_from_slice(&format.to_le_bytes());
        v.extend_from_slice(&1u16.to_le_bytes());
        v.extend_from_slice(&8000u32.to_le_bytes());
        v.extend_from_slice(&(8000u32 * u32::from(bits / 8)).to_le_bytes());
        v.extend_from_slice(&(bits / 8).to_le_bytes());
        v.extend_from_slice(&bits.to_le_bytes());
        v.extend_from_slice(b"data");
        v.extend_from_slice(&(data.len() as u32).to_le_bytes());
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn pcm16_normalisation() {
        let w = decode_wav(&pcm16_bytes(&[0, 16384, -32768], 1, 22050)).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate, 22050);
        assert_eq!(w.channels, 1);
    }

    #[test]
    fn stereo_kept_interleaved() {
        let w = decode_wav(&pcm16_bytes(&[16384, -16384, 0, 8192], 2, 8000)).unwrap();
        assert_eq!(w.channels, 2);
        assert_eq!(w.samples, vec![0.5, -0.5, 0.0, 0.25]);
        assert_eq!(w.frames(), 2);
    }

    #[test]
    fn float32_clamped() {
        let data: Vec<u8> = [0.25f32, 1.5, -2.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let w = decode_wav(&raw_wav(3, 32, &data)).unwrap();
        assert_eq!(w.samples, vec![0.25, 1.0, -1.0]);
    }

    #[test]
    fn adpcm_rejected() {
        let err = decode_wav(&raw_wav(2, 4, &[0u8; 16])).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedFormat(_)), "{err:?}");
    }

    #[test]
    fn truncated_data_rejected() {
        let mut bytes = pcm16_bytes(&[1, 2, 3, 4, 5, 6], 1, 8000);
        bytes.truncate(bytes.len() - 5);
        let err = decode_wav(&bytes).unwrap_err();
        assert!(matches!(err, AudioError::TruncatedFile(_)), "{err:?}");
        let err = decode_wav(&bytes[..20]).unwrap_err();
        assert!(matches!(err, AudioError::TruncatedFile(_)), "{err:?}");
    }

    #[test]
    fn pcm16_encode_round_trip() {
        let samples = [0.0f32, 0.5, -1.0, 0.25, -0.125];
        let w = decode_wav(&encode_wav_pcm16(&samples, 16000)).unwrap();
        assert_eq!(w.samples, samples);
        assert_eq!(w.sample_rate, 16000);
    }
}
