use thiserror::Error;

/// Errors raised anywhere in the classification pipeline.
#[derive(Debug, Error)]
pub enum DocError {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// A file or stream did not follow its expected format.
    #[error("format error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format { line: Option<usize>, message: String },

    #[error("calibration error: {0}")]
    Calibration(String),

    /// The requested action is not possible with the given model/flags.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// Error tagged with the experiment cell it came from.
    #[error("fraction {fraction}, repetition {repetition}: {source}")]
    Experiment {
        fraction: f64,
        repetition: usize,
        #[source]
        source: Box<DocError>,
    },
}

impl DocError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        DocError::Input(msg.into())
    }

    pub(crate) fn format(line: Option<usize>, msg: impl Into<String>) -> Self {
        DocError::Format {
            line,
            message: msg.into(),
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 data/format,
    /// 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            DocError::Config(_) => 1,
            DocError::Diverged { .. } => 3,
            DocError::Experiment { source, .. } => source.exit_code(),
            DocError::Input(_)
            | DocError::Format { .. }
            | DocError::Calibration(_)
            | DocError::Io(_)
            | DocError::Json(_) => 2,
        }
    }
}

pub type Result<T, E = DocError> = std::result::Result<T, E>;
