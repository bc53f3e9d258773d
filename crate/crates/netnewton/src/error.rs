use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Graph construction or validation failed.
    #[error("topology error: {0}")]
    Topology(String),

    /// An objective was evaluated with inconsistent dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Invalid objective construction (empty sample set, bad weight, ...).
    #[error("objective error: {0}")]
    Objective(String),

    /// A text input (LIBSVM data, edge list) failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A configuration file was syntactically or semantically invalid.
    #[error("config error in [{section}] {key}: {message}")]
    Config {
        section: String,
        key: String,
        message: String,
    },

    /// An activation schedule violated its probability constraints.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A linear solve or iterative reference solve failed.
    #[error("solve error: {0}")]
    Solve(String),

    /// I/O failure while reading inputs or writing run artifacts.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an I/O failure with the path it happened on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
