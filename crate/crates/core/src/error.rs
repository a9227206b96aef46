use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("unknown bike model `{0}`")]
    UnknownModel(String),

    #[error("probability `{name}` = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },

    #[error("split policy error: {0}")]
    Policy(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("loss term `{term}`: {source}")]
    LossTerm {
        term: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code used by the command-line driver:
    /// 1 usage/config, 2 data, 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownModel(_)
            | Error::Probability { .. }
            | Error::Policy(_)
            | Error::Checkpoint(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } | Error::Json(_) | Error::Image(_) => 2,
            Error::Contract(_) | Error::Tensor(_) => 3,
            Error::LossTerm { source, .. } => source.exit_code(),
        }
    }
}
