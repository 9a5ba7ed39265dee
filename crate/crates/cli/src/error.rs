//! One error type per process, mapped onto the stable exit-code contract:
//! 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fmt;
use std::path::PathBuf;

use motionseg::datasets::DataError;
use motionseg::metrics::EvalError;
use motionseg::training::TrainError;

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong: bad flag combinations, a config file
    /// that violates the schema, impossible parameter requests.
    Usage(String),
    /// Input data is missing, malformed, or in a state we refuse to touch.
    Data(DataError),
    Eval(EvalError),
    Train(TrainError),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    /// A sub-run already classified its failure; carry its code through.
    Propagated { code: i32, msg: String },
    /// A safety refusal: the filesystem is in a state we will not touch
    /// without an explicit override.
    Refused(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Scripting contract: harnesses branch on these values, so the mapping
    /// must stay stable across versions.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_)
            | CliError::Eval(_)
            | CliError::Io { .. }
            | CliError::Image { .. }
            | CliError::Refused(_) => 2,
            CliError::Train(e) => match e {
                // Operator mistakes surface as usage errors even when the
                // core reports them, so scripts see one consistent code.
                TrainError::InvalidConfig(_) => 1,
                TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient { .. } => 3,
                _ => 2,
            },
            CliError::Propagated { code, .. } => *code,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Eval(e) => write!(f, "{e}"),
            CliError::Train(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "io failure on {}: {source}", path.display()),
            CliError::Image { path, source } => {
                write!(f, "image codec error on {}: {source}", path.display())
            }
            CliError::Propagated { msg, .. } => write!(f, "{msg}"),
            CliError::Refused(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e)
    }
}
