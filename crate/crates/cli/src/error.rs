//! Failures and their process exit codes.

use respire_core::audio::AudioError;
use respire_core::dataset::DatasetError;
use respire_core::embed::EmbedError;
use respire_core::eval::EvalError;
use respire_core::models::ModelError;
use respire_core::review::ReviewError;

/// Exit status of the `respire` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Ok = 0,
    /// Configuration, usage or unexpected I/O failure.
    General = 1,
    /// Missing or empty corpus.
    Corpus = 2,
    /// Embedding service unreachable or misbehaving.
    Provider = 3,
    /// Unusable data or stage artifacts.
    Data = 4,
    /// Review service port unavailable.
    Port = 5,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: ExitKind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn msg(kind: ExitKind, msg: impl std::fmt::Display) -> Self {
        Self::new(kind, anyhow::anyhow!("{msg}"))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let kind = match e {
            DatasetError::EmptyCorpus(_) => ExitKind::Corpus,
            DatasetError::Io { .. } | DatasetError::Csv(_) => ExitKind::General,
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        let kind = match e {
            AudioError::Io { .. } | AudioError::Csv(_) => ExitKind::General,
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        let kind = match e {
            EmbedError::ProviderUnavailable(_) | EmbedError::DimensionMismatch { .. } | EmbedError::NonFinite => {
                ExitKind::Provider
            }
            EmbedError::Io { .. } => ExitKind::General,
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::Io { .. } => ExitKind::General,
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let kind = match e {
            EvalError::Io { .. } => ExitKind::General,
            _ => ExitKind::Data,
        };
        Self::new(kind, e)
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Embed(inner) => inner.into(),
            ReviewError::Eval(inner) => inner.into(),
            ReviewError::Io { .. } => Self::new(ExitKind::General, e),
            _ => Self::new(ExitKind::Data, e),
        }
    }
}

/// Annotates I/O failures with the path involved.
pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::msg(ExitKind::General, format!("{}: {e}", path.display()))
}
