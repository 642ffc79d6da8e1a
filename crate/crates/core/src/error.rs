use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask has no nonzero pixels")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("decoder optimization diverged at step {step}: loss = {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}{}: {source}", tile.map(|t| format!(" (tile {t})")).unwrap_or_default())]
    Stage {
        stage: String,
        tile: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach pipeline stage (and optionally tile) context.
    pub fn in_stage(self, stage: impl Into<String>, tile: Option<usize>) -> Self {
        Error::Stage {
            stage: stage.into(),
            tile,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_backend_failure(&self) -> bool {
        matches!(self.root(), Error::Backend(_) | Error::Protocol(_))
    }
}
