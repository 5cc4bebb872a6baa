//! Pipeline configuration, read from a single TOML file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use respire_core::audio::{CracklePolicy, SegmentParams};
use respire_core::dataset::{Layout, Schema};
use respire_core::embed::{BatchOptions, HttpConfig, RetryPolicy};
use respire_core::models::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_root: PathBuf,
    pub work_dir: PathBuf,
    /// Drives the split, every classifier and the barcode sample.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub segment: SegmentConfig,
    pub embed: EmbedConfig,
    /// Its `seed` field is replaced by the top-level seed.
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub review: ReviewConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus_root: PathBuf::from("corpus"),
            work_dir: PathBuf::from("work"),
            seed: 42,
            corpus: CorpusConfig::default(),
            segment: SegmentConfig::default(),
            embed: EmbedConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            review: ReviewConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub layout: Layout,
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub hop_ms: u32,
    pub pad: respire_core::audio::PadMode,
    pub crackle_policy: CracklePolicy,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        let p = SegmentParams::default();
        Self {
            hop_ms: p.hop_ms,
            pad: p.pad,
            crackle_policy: CracklePolicy::Exclude,
        }
    }
}

impl SegmentConfig {
    pub fn params(&self) -> SegmentParams {
        SegmentParams {
            hop_ms: self.hop_ms,
            pad: self.pad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Surrogate,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub batch_size: usize,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Ask the remote service for binary responses.
    pub binary: bool,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        let batch = BatchOptions::default();
        Self {
            provider: ProviderKind::Surrogate,
            endpoint: http.endpoint,
            batch_size: http.batch_size,
            timeout_ms: http.timeout.as_millis() as u64,
            max_in_flight: batch.max_in_flight,
            binary: http.binary,
            retry_attempts: batch.retry.attempts,
            retry_base_ms: batch.retry.base_delay.as_millis() as u64,
        }
    }
}

impl EmbedConfig {
    /// `EMBED_ENDPOINT`, `EMBED_BATCH` and `EMBED_TIMEOUT_MS` win over the file.
    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var("EMBED_ENDPOINT") {
            self.endpoint = v;
        }
        if let Some(v) = std::env::var("EMBED_BATCH").ok().and_then(|v| v.parse().ok()) {
            self.batch_size = v;
        }
        if let Some(v) = std::env::var("EMBED_TIMEOUT_MS").ok().and_then(|v| v.parse().ok()) {
            self.timeout_ms = v;
        }
    }

    pub fn http(&self) -> HttpConfig {
        HttpConfig {
            endpoint: self.endpoint.clone(),
            batch_size: self.batch_size,
            timeout: Duration::from_millis(self.timeout_ms),
            binary: self.binary,
        }
    }

    pub fn batch(&self) -> BatchOptions {
        BatchOptions {
            batch_size: self.batch_size,
            max_in_flight: self.max_in_flight,
            retry: RetryPolicy {
                attempts: self.retry_attempts,
                base_delay: Duration::from_millis(self.retry_base_ms),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    /// Clip-level stratification.
    #[default]
    None,
    Recording,
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub group_by: GroupBy,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            group_by: GroupBy::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub barcode_per_class: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { barcode_per_class: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewConfig {
    pub host: String,
    pub port: u16,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8765,
            ui_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn paths(&self) -> WorkPaths {
        WorkPaths::new(&self.work_dir)
    }
}

/// Locations of every stage artifact under the work directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkPaths {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub clips_dir: PathBuf,
    pub clips_metadata: PathBuf,
    pub dataset_dir: PathBuf,
    pub models_dir: PathBuf,
    pub split: PathBuf,
    pub results_dir: PathBuf,
    pub review_dir: PathBuf,
    pub verdicts: PathBuf,
}

impl WorkPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            manifest: root.join("manifest.csv"),
            clips_dir: root.join("asthma_clips"),
            clips_metadata: root.join("clips_metadata.csv"),
            dataset_dir: root.join("embeddings"),
            models_dir: root.join("models"),
            split: root.join("models").join("split.json"),
            results_dir: root.join("results"),
            review_dir: root.join("review"),
            verdicts: root.join("review").join("verdicts.jsonl"),
        }
    }

    pub fn model_file(&self, kind: respire_core::models::ClassifierKind) -> PathBuf {
        self.models_dir.join(format!("{}.rspm", kind.name()))
    }

    pub fn diagnostics_file(&self, kind: respire_core::models::ClassifierKind) -> PathBuf {
        self.models_dir.join(format!("{}_diagnostics.jsonl", kind.name()))
    }

    pub fn metrics_file(&self, kind: respire_core::models::ClassifierKind) -> PathBuf {
        self.results_dir.join(format!("metrics_{}.json", kind.name()))
    }

    pub fn misclassified_file(&self, kind: respire_core::models::ClassifierKind) -> PathBuf {
        self.results_dir.join(format!("misclassified_{}.csv", kind.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            corpus_root = "/data/sprsound"
            seed = 7
            [segment]
            hop_ms = 500
            crackle_policy = "positive"
            [train.forest]
            n_trees = 10
            [split]
            group_by = "patient"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.segment.hop_ms, 500);
        assert_eq!(cfg.segment.crackle_policy, CracklePolicy::Positive);
        assert_eq!(cfg.train.forest.n_trees, 10);
        assert_eq!(cfg.train.boosting.n_stages, 100);
        assert_eq!(cfg.split.group_by, GroupBy::Patient);
        assert_eq!(cfg.train_config().seed, 7);
        assert_eq!(cfg.work_dir, PathBuf::from("work"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("corpus = 1").is_err());
    }
}
