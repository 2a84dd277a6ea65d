//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform for an operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A binary file does not follow its declared format.
    #[error("format error at byte {offset}: {details}")]
    Format { offset: u64, details: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    /// A required upstream artifact (e.g. a checkpoint) is missing.
    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("concept discovery failed for class {class}: {details}")]
    Discovery { class: usize, details: String },

    #[error("concept aggregation failed: {0}")]
    Aggregation(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Wraps the failing stage name around any pipeline error.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn contract(details: impl Into<String>) -> Self {
        Error::Contract(details.into())
    }

    pub fn format(offset: u64, details: impl Into<String>) -> Self {
        Error::Format {
            offset,
            details: details.into(),
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
