use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    #[error("integration blew up at step {index}: state {state:?}")]
    IntegrationBlowup { index: usize, state: Vec<f64> },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("evaluation produced a non-finite {0}")]
    Evaluation(&'static str),

    #[error("training diverged at minibatch {minibatch}: loss {loss}")]
    TrainingDivergence { minibatch: usize, loss: f64 },

    #[error("epoch {epoch} failed: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("every trajectory in the collection batch failed ({0} attempted)")]
    CollectionFailed(usize),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad inputs (configs, files, shapes) rather
    /// than by a numerical failure at runtime.
    pub fn is_configuration(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Parse(_) | Error::DimensionMismatch { .. } => true,
            Error::Epoch { source, .. } => source.is_configuration(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
