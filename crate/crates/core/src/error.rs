//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The indicator needs at least two samples: with B = 1 the
    /// normalizer floor(B/2) degenerates, and B = 0 is empty.
    #[error("invalid batch size {0}: at least 2 samples are required")]
    InvalidBatch(usize),

    #[error("non-finite value in {context} at row {row}, column {col}")]
    NonFinite {
        context: &'static str,
        row: usize,
        col: usize,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    /// Forward pass produced a non-finite preactivation; training treats
    /// this as divergence of the run.
    #[error("non-finite preactivation in layer {layer}")]
    ForwardDiverged { layer: usize },

    /// Parameter update produced a non-finite weight or bias.
    #[error("non-finite parameter update in layer {layer}")]
    UpdateDiverged { layer: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("trajectory log: {0}")]
    Log(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Helper to wrap an io::Error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
