use thiserror::Error;

/// Errors surfaced by the scheduling engine and its supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, lengths or value ranges that violate an operation's contract.
    #[error("structural error: {0}")]
    Structural(String),

    /// Matrix factorization failures and non-finite intermediate values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A replay log has no record for the requested frame.
    #[error("no recorded {module} output for frame {requested}{}", nearest_hint(.nearest))]
    MissingFrame {
        module: String,
        requested: u64,
        nearest: Option<u64>,
    },

    /// A replay log has no records at all for a module.
    #[error("module {0} is not present in the replay log")]
    UnknownModule(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn nearest_hint(nearest: &Option<u64>) -> String {
    match nearest {
        Some(n) => format!(" (nearest recorded frame: {n})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}
