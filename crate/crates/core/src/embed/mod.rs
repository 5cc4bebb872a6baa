//! Clip embeddings: provider abstraction, batching and on-disk persistence.
//!
//! Two providers ship with the crate: [`HttpEmbeddingProvider`] talks to a
//! remote embedding service and [`SurrogateEmbedder`] computes a deterministic
//! filterbank summary locally. The surrogate exists for offline runs and tests;
//! its vectors carry no clinical meaning.

mod http;
pub mod npy;
mod surrogate;

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use crate::audio::Clip;
use crate::{Label, CLIP_SAMPLES, EMBEDDING_DIM};

pub use http::{decode_binary, encode_binary, HttpConfig, HttpEmbeddingProvider, EMBED_PATH};
pub use npy::{read_npy, write_npy, NpyArray, NpyData, NpyError};
pub use surrogate::{surrogate_embed, SurrogateEmbedder, LOG_FLOOR, MEL_BANDS};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider returned {got}-d vectors, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned non-finite values")]
    NonFinite,
    #[error("clip {id} has {len} samples, expected {CLIP_SAMPLES}")]
    BadClip { id: String, len: usize },
    #[error("invalid embedding dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Anything that maps 2 s / 16 kHz clips to fixed-length vectors.
pub trait EmbeddingProvider: Sync {
    /// One vector per input clip, in input order.
    fn embed(&self, clips: &[&[f32]]) -> Result<Vec<Vec<f32>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// N x 512 embeddings with aligned labels and clip ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f32>,
    labels: Vec<Label>,
    clip_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(data: Vec<f32>, labels: Vec<Label>, clip_ids: Vec<String>) -> Result<Self> {
        if labels.len() != clip_ids.len() || data.len() != labels.len() * EMBEDDING_DIM {
            return Err(EmbedError::InvalidDataset(format!(
                "{} values, {} labels, {} ids",
                data.len(),
                labels.len(),
                clip_ids.len()
            )));
        }
        Ok(Self { data, labels, clip_ids })
    }

    pub fn empty() -> Self {
        Self {
            data: Vec::new(),
            labels: Vec::new(),
            clip_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        EMBEDDING_DIM
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(EMBEDDING_DIM)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Features widened to f64 for training.
    pub fn to_matrix(&self) -> crate::Matrix {
        crate::Matrix::from_vec(
            self.len(),
            EMBEDDING_DIM,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

fn with_retry<T>(policy: &RetryPolicy, mut call: impl FnMut() -> Result<T>) -> Result<T> {
    let attempts = policy.attempts.max(1);
    let mut attempt = 0;
    loop {
        match call() {
            Err(EmbedError::ProviderUnavailable(msg)) if attempt + 1 < attempts => {
                let delay = policy.base_delay * 2u32.pow(attempt);
                log::warn!("embedding batch failed ({msg}); retrying in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn check_vectors(vectors: &[Vec<f32>], expected: usize) -> Result<()> {
    if vectors.len() != expected {
        return Err(EmbedError::ProviderUnavailable(format!(
            "provider returned {} vectors for {expected} clips",
            vectors.len()
        )));
    }
    for v in vectors {
        if v.len() != EMBEDDING_DIM {
            return Err(EmbedError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
    }
    Ok(())
}

/// Embeds `clips` in batches of `opts.batch_size`, at most `opts.max_in_flight`
/// batches at a time. Row `i` of the result always belongs to `clips[i]`.
///
/// A batch failing with [`EmbedError::ProviderUnavailable`] is retried with
/// exponential backoff; when retries are exhausted the whole run fails.
pub fn embed_batch<P: EmbeddingProvider + ?Sized>(provider: &P, clips: &[Clip], opts: &BatchOptions) -> Result<EmbeddingMatrix> {
    if opts.batch_size == 0 {
        return Err(EmbedError::InvalidDataset("batch size must be at least 1".into()));
    }
    if let Some(bad) = clips.iter().find(|c| c.samples.len() != CLIP_SAMPLES) {
        return Err(EmbedError::BadClip {
            id: bad.id(),
            len: bad.samples.len(),
        });
    }
    if clips.is_empty() {
        return Ok(EmbeddingMatrix::empty());
    }

    let batches: Vec<&[Clip]> = clips.chunks(opts.batch_size).collect();
    let results: Mutex<Vec<Option<Result<Vec<Vec<f32>>>>>> =
        Mutex::new((0..batches.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = opts.max_in_flight.clamp(1, batches.len());

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let b = next.fetch_add(1, Ordering::Relaxed);
                let Some(batch) = batches.get(b) else { break };
                let inputs: Vec<&[f32]> = batch.iter().map(|c| c.samples.as_slice()).collect();
                let out = with_retry(&opts.retry, || {
                    let v = provider.embed(&inputs)?;
                    check_vectors(&v, inputs.len())?;
                    Ok(v)
                });
                if out.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().unwrap()[b] = Some(out);
            });
        }
    });

    let mut data = Vec::with_capacity(clips.len() * EMBEDDING_DIM);
    for r in results.into_inner().unwrap() {
        match r {
            Some(Ok(vectors)) => vectors.iter().for_each(|v| data.extend_from_slice(v)),
            Some(Err(e)) => return Err(e),
            // a batch is only skipped after another one failed
            None => continue,
        }
    }
    let labels = clips.iter().map(|c| c.label).collect();
    let ids = clips.iter().map(Clip::id).collect();
    EmbeddingMatrix::new(data, labels, ids)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |source| EmbedError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `embeddings.npy` (float32 N x 512), `labels.npy` (int64, 1 = abnormal)
/// and `filenames.txt` (one clip id per row) into `dir`.
pub fn persist_dataset(m: &EmbeddingMatrix, dir: &Path) -> Result<()> {
    if m.is_empty() {
        return Err(EmbedError::InvalidDataset("no embeddings to persist".into()));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_npy(&dir.join("embeddings.npy"), &NpyArray::f32_2d(m.len(), EMBEDDING_DIM, m.data.clone())?)?;
    write_labels(&dir.join("labels.npy"), &m.labels)?;
    let names = dir.join("filenames.txt");
    let mut text = m.clip_ids.join("\n");
    text.push('\n');
    std::fs::write(&names, text).map_err(io_err(&names))?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    Ok(write_npy(path, &NpyArray::i64_1d(labels.iter().map(|l| l.as_int()).collect()))?)
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let arr = read_npy(path)?;
    let NpyData::I64(values) = arr.data else {
        return Err(EmbedError::InvalidDataset("labels.npy must hold int64 values".into()));
    };
    values
        .into_iter()
        .map(|v| Label::from_int(v).ok_or_else(|| EmbedError::InvalidDataset(format!("label value {v} is not 0 or 1"))))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<EmbeddingMatrix> {
    let emb = read_npy(&dir.join("embeddings.npy"))?;
    let NpyData::F32(data) = emb.data else {
        return Err(EmbedError::InvalidDataset("embeddings.npy must hold float32 values".into()));
    };
    if emb.shape.len() != 2 || emb.shape[1] != EMBEDDING_DIM {
        return Err(EmbedError::DimensionMismatch {
            expected: EMBEDDING_DIM,
            got: emb.shape.get(1).copied().unwrap_or(0),
        });
    }
    let labels = read_labels(&dir.join("labels.npy"))?;
    let names = dir.join("filenames.txt");
    let ids = std::fs::read_to_string(&names)
        .map_err(io_err(&names))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    EmbeddingMatrix::new(data, labels, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EventLabel;
    use std::sync::atomic::AtomicU32;

    fn clip(i: usize, label: Label) -> Clip {
        Clip {
            samples: vec![i as f32 * 1e-3; CLIP_SAMPLES],
            label,
            event_label: EventLabel::Normal,
            source: format!("rec{i}"),
            event_index: 0,
            window_offset_ms: 0,
            padded_samples: 0,
        }
    }

    /// Encodes the first sample of each clip in every coordinate.
    struct Echo {
        dim: usize,
        calls: AtomicU32,
    }

    impl EmbeddingProvider for Echo {
        fn embed(&self, clips: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(clips.iter().map(|c| vec![c[0]; self.dim]).collect())
        }
    }

    struct Flaky {
        failures_left: AtomicU32,
    }

    impl EmbeddingProvider for Flaky {
        fn embed(&self, clips: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1))
                .is_ok()
            {
                return Err(EmbedError::ProviderUnavailable("flaky".into()));
            }
            Ok(clips.iter().map(|_| vec![1.0; EMBEDDING_DIM]).collect())
        }
    }

    fn fast(batch_size: usize, max_in_flight: usize) -> BatchOptions {
        BatchOptions {
            batch_size,
            max_in_flight,
            retry: RetryPolicy {
                attempts: 3,
                base_delay: Duration::from_millis(1),
            },
        }
    }

    #[test]
    fn order_preserved_across_batches() {
        let clips: Vec<_> = (0..3).map(|i| clip(i, Label::from_bool(i % 2 == 0))).collect();
        let p = Echo {
            dim: EMBEDDING_DIM,
            calls: AtomicU32::new(0),
        };
        let m = embed_batch(&p, &clips, &fast(2, 1)).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);
        for i in 0..3 {
            assert_eq!(m.row(i)[0], i as f32 * 1e-3);
            assert_eq!(m.clip_ids()[i], format!("rec{i}_0_0"));
        }
        assert_eq!(m.labels(), &[Label::Positive, Label::Negative, Label::Positive]);
    }

    #[test]
    fn concurrency_does_not_change_result() {
        let clips: Vec<_> = (0..37).map(|i| clip(i, Label::Negative)).collect();
        let p = Echo {
            dim: EMBEDDING_DIM,
            calls: AtomicU32::new(0),
        };
        let seq = embed_batch(&p, &clips, &fast(4, 1)).unwrap();
        for (bs, inflight) in [(1, 8), (3, 3), (5, 16), (37, 2), (100, 4)] {
            assert_eq!(embed_batch(&p, &clips, &fast(bs, inflight)).unwrap(), seq);
        }
    }

    #[test]
    fn wrong_dimension_rejected() {
        let p = Echo {
            dim: 256,
            calls: AtomicU32::new(0),
        };
        let err = embed_batch(&p, &[clip(0, Label::Negative)], &fast(2, 1)).unwrap_err();
        assert!(matches!(err, EmbedError::DimensionMismatch { expected: 512, got: 256 }));
        // not retried
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_input_makes_no_calls() {
        let p = Echo {
            dim: EMBEDDING_DIM,
            calls: AtomicU32::new(0),
        };
        let m = embed_batch(&p, &[], &fast(2, 1)).unwrap();
        assert!(m.is_empty());
        assert_eq!(p.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn retries_then_succeeds_or_fails() {
        let p = Flaky {
            failures_left: AtomicU32::new(2),
        };
        assert!(embed_batch(&p, &[clip(0, Label::Negative)], &fast(1, 1)).is_ok());
        let p = Flaky {
            failures_left: AtomicU32::new(3),
        };
        let err = embed_batch(&p, &[clip(0, Label::Negative)], &fast(1, 1)).unwrap_err();
        assert!(matches!(err, EmbedError::ProviderUnavailable(_)));
    }

    #[test]
    fn short_clip_rejected() {
        let mut c = clip(0, Label::Negative);
        c.samples.pop();
        let p = Echo {
            dim: EMBEDDING_DIM,
            calls: AtomicU32::new(0),
        };
        assert!(matches!(embed_batch(&p, &[c], &fast(1, 1)), Err(EmbedError::BadClip { .. })));
    }

    #[test]
    fn persist_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..2 * EMBEDDING_DIM).map(|i| i as f32 / 7.0).collect();
        let m = EmbeddingMatrix::new(data, vec![Label::Negative, Label::Positive], vec!["a_0_0".into(), "b_1_0".into()]).unwrap();
        persist_dataset(&m, dir.path()).unwrap();
        for f in ["embeddings.npy", "labels.npy", "filenames.txt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let labels = read_npy(&dir.path().join("labels.npy")).unwrap();
        assert_eq!(labels.data, NpyData::I64(vec![0, 1]));
        assert_eq!(load_dataset(dir.path()).unwrap(), m);
        assert!(persist_dataset(&EmbeddingMatrix::empty(), dir.path()).is_err());
    }
}
