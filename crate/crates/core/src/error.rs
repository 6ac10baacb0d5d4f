use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or widths that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an operation's precondition (non-scalar loss and similar).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("initialization error: {0}")]
    Init(String),

    #[error("rational fit failed: {reason} (condition estimate {condition:.3e})")]
    Fit { reason: String, condition: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("invalid parameters: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("checkpoint load error: bad {field}: {message}")]
    Checkpoint { field: &'static str, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
