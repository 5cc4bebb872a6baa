//! Binary classifiers over fixed-length embeddings.
//!
//! Every classifier sits behind the same contract: [`fit`] builds a
//! [`TrainedModel`] deterministically from `(kind, data, config)`, and
//! [`TrainedModel::score`] returns a confidence that grows with the
//! likelihood of the positive class. All randomness comes from
//! [`rng::stream`], keyed by the configured seed and a per-component id.

mod boosting;
mod forest;
mod io;
mod linear;
mod mlp;
pub mod rng;
pub mod tree;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Label, Matrix};

pub use boosting::GradientBoosting;
pub use forest::RandomForest;
pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC};
pub use linear::{logistic_objective, svm_objective, LinearModel};
pub use mlp::{Layer, Mlp, MlpGradients};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data holds a single class")]
    SingleClassData,
    #[error("training data contains non-finite features")]
    NonFiniteFeature,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data is empty or misaligned: {0}")]
    InvalidData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    SvmLinear,
    LogisticRegression,
    RandomForest,
    GradientBoosting,
    Mlp,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::SvmLinear,
        ClassifierKind::LogisticRegression,
        ClassifierKind::RandomForest,
        ClassifierKind::GradientBoosting,
        ClassifierKind::Mlp,
    ];

    /// Identifier used in file names and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::SvmLinear => "svm_linear",
            ClassifierKind::LogisticRegression => "logistic_regression",
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::GradientBoosting => "gradient_boosting",
            ClassifierKind::Mlp => "mlp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ClassifierKind::SvmLinear => "SVM (Linear)",
            ClassifierKind::LogisticRegression => "Logistic Regression",
            ClassifierKind::RandomForest => "Random Forest",
            ClassifierKind::GradientBoosting => "Gradient Boosting",
            ClassifierKind::Mlp => "MLP Classifier",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            ClassifierKind::SvmLinear => 1,
            ClassifierKind::LogisticRegression => 2,
            ClassifierKind::RandomForest => 3,
            ClassifierKind::GradientBoosting => 4,
            ClassifierKind::Mlp => 5,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// `true` when [`TrainedModel::score`] is a probability rather than a margin.
    pub fn is_probabilistic(self) -> bool {
        self != ClassifierKind::SvmLinear
    }

    /// Operating point used by [`TrainedModel::predict`] by default.
    pub fn default_threshold(self) -> f64 {
        if self.is_probabilistic() {
            0.5
        } else {
            0.0
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "svm" | "svm_linear" => Ok(ClassifierKind::SvmLinear),
            "logreg" | "logistic_regression" => Ok(ClassifierKind::LogisticRegression),
            "forest" | "rf" | "random_forest" => Ok(ClassifierKind::RandomForest),
            "boosting" | "gb" | "gradient_boosting" => Ok(ClassifierKind::GradientBoosting),
            "mlp" => Ok(ClassifierKind::Mlp),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { c: 1.0, epochs: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure, capped at [`MAX_TREE_DEPTH`].
    pub max_depth: Option<usize>,
    /// `None` uses `floor(sqrt(d))`.
    pub features_per_split: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            features_per_split: None,
        }
    }
}

pub const MAX_TREE_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostingConfig {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub tree_depth: usize,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            n_stages: 100,
            learning_rate: 0.1,
            tree_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Stop after this many epochs without the training loss improving by `tol`.
    pub patience: usize,
    pub tol: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 200,
            batch: 32,
            patience: 10,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub svm: SvmConfig,
    pub logreg: LogRegConfig,
    pub forest: ForestConfig,
    pub boosting: BoostingConfig,
    pub mlp: MlpConfig,
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// One progress record: an epoch, iteration or boosting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub loss: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub final_loss: f64,
    pub iterations: usize,
    pub history: Vec<StageRecord>,
}

pub(crate) struct Progress {
    start: Instant,
    history: Vec<StageRecord>,
}

impl Progress {
    pub(crate) fn new() -> Self {
        Self {
            start: Instant::now(),
            history: Vec::new(),
        }
    }

    pub(crate) fn record(&mut self, stage: usize, loss: f64) {
        self.history.push(StageRecord {
            stage,
            loss,
            elapsed_ms: self.start.elapsed().as_millis() as u64,
        });
    }

    pub(crate) fn finish(self, iterations: usize) -> Diagnostics {
        Diagnostics {
            final_loss: self.history.last().map_or(f64::NAN, |r| r.loss),
            iterations,
            history: self.history,
        }
    }
}

/// Learned state of each classifier family.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Linear(LinearModel),
    Forest(RandomForest),
    Boosting(GradientBoosting),
    Mlp(Mlp),
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: ClassifierKind,
    pub feature_dim: usize,
    pub train_seed: u64,
    pub params: Params,
    /// Not persisted by [`save_model`].
    pub diagnostics: Diagnostics,
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.feature_dim == other.feature_dim
            && self.train_seed == other.train_seed
            && self.params == other.params
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn validate(x: &Matrix, y: &[Label]) -> Result<()> {
    if x.is_empty() || x.rows() != y.len() || x.cols() == 0 {
        return Err(ModelError::InvalidData(format!("{} rows, {} labels", x.rows(), y.len())));
    }
    if !x.all_finite() {
        return Err(ModelError::NonFiniteFeature);
    }
    let pos = y.iter().filter(|l| l.is_positive()).count();
    if pos == 0 || pos == y.len() {
        return Err(ModelError::SingleClassData);
    }
    Ok(())
}

/// Trains one classifier. Deterministic in `(kind, x, y, cfg)`.
pub fn fit(kind: ClassifierKind, x: &Matrix, y: &[Label], cfg: &TrainConfig) -> Result<TrainedModel> {
    validate(x, y)?;
    let (params, diagnostics) = match kind {
        ClassifierKind::SvmLinear => {
            let (m, d) = linear::fit_svm(x, y, &cfg.svm, cfg.seed)?;
            (Params::Linear(m), d)
        }
        ClassifierKind::LogisticRegression => {
            let (m, d) = linear::fit_logreg(x, y, &cfg.logreg)?;
            (Params::Linear(m), d)
        }
        ClassifierKind::RandomForest => {
            let (m, d) = forest::fit_forest(x, y, &cfg.forest, cfg.seed)?;
            (Params::Forest(m), d)
        }
        ClassifierKind::GradientBoosting => {
            let (m, d) = boosting::fit_boosting(x, y, &cfg.boosting)?;
            (Params::Boosting(m), d)
        }
        ClassifierKind::Mlp => {
            let (m, d) = mlp::fit_mlp(x, y, &cfg.mlp, cfg.seed)?;
            (Params::Mlp(m), d)
        }
    };
    Ok(TrainedModel {
        kind,
        feature_dim: x.cols(),
        train_seed: cfg.seed,
        params,
        diagnostics,
    })
}

impl TrainedModel {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Probability of the positive class, or the signed margin for the linear SVM.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(match &self.params {
            Params::Linear(m) if self.kind == ClassifierKind::SvmLinear => m.decision(x),
            Params::Linear(m) => sigmoid(m.decision(x)),
            Params::Forest(f) => f.vote_fraction(x),
            Params::Boosting(b) => sigmoid(b.raw_score(x)),
            Params::Mlp(m) => m.predict_proba(x),
        })
    }

    /// Scores every row of `x`.
    pub fn score_all(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.score(r)).collect()
    }

    /// `Positive` iff the score reaches `threshold` (ties are positive).
    /// `None` uses [`ClassifierKind::default_threshold`].
    pub fn predict(&self, x: &[f64], threshold: Option<f64>) -> Result<Label> {
        let t = threshold.unwrap_or_else(|| self.kind.default_threshold());
        Ok(Label::from_bool(self.score(x)? >= t))
    }

    pub fn threshold(&self) -> f64 {
        self.kind.default_threshold()
    }
}
