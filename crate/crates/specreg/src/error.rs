use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}: expected {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("shape mismatch at layer {layer}: {message}")]
    LayerShape { layer: usize, message: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("matrix too large for exact SVD: min dimension {min_dim} exceeds {limit}; use power iteration instead")]
    SvdSizeLimit { min_dim: usize, limit: usize },

    #[error("local Jacobian too large: {rows}x{cols} exceeds 10^6 entries")]
    JacobianSizeLimit { rows: usize, cols: usize },

    #[error("missing power-iteration state for matrix {0}")]
    MissingState(String),

    #[error("power-iteration vectors not unit length (deviation {0:.3e}); run power_iter_step first")]
    NonUnitSingularVectors(f64),

    #[error("IDX format error: {0}")]
    IdxFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: file has {found}, this build reads {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
