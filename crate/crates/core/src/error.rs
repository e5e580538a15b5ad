use thiserror::Error;

/// Errors raised by circuit construction, inference and learning.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("value {value} outside the domain of variable {variable}: {reason}")]
    Domain {
        variable: usize,
        value: f64,
        reason: String,
    },

    #[error("numeric error{}: {message}", location(.layer, .row))]
    Numeric {
        message: String,
        layer: Option<usize>,
        row: Option<usize>,
    },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("ingest error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Ingest { line: Option<usize>, message: String },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("io error: {0}")]
    Io(String),
}

fn location(layer: &Option<usize>, row: &Option<usize>) -> String {
    match (layer, row) {
        (Some(l), Some(r)) => format!(" (layer {l}, row {r})"),
        (Some(l), None) => format!(" (layer {l})"),
        (None, Some(r)) => format!(" (row {r})"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            layer: None,
            row: None,
        }
    }

    /// Attach a layer id to a numeric error that does not carry one yet.
    pub fn at_layer(self, id: usize) -> Self {
        match self {
            Error::Numeric {
                message,
                layer: None,
                row,
            } => Error::Numeric {
                message,
                layer: Some(id),
                row,
            },
            other => other,
        }
    }

    /// Attach a data row index to a numeric error.
    pub fn at_row(self, index: usize) -> Self {
        match self {
            Error::Numeric {
                message,
                layer,
                row: None,
            } => Error::Numeric {
                message,
                layer,
                row: Some(index),
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
