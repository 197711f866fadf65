use crate::autodiff::checkpoint::CheckpointError;
use crate::autodiff::AutodiffError;
use crate::config::ConfigError;
use crate::corpus::CorpusError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("model: {0}")]
    Model(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
}

impl Error {
    /// True for failures caused by the input data rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Corpus(_) | Error::Checkpoint(_) | Error::Eval(_))
    }

    pub fn is_numeric_failure(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Autodiff(AutodiffError::NonFinite(_))
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
