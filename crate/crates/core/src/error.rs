use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("qr_decompose needs rows >= cols, got {rows}x{cols}; transpose the input first")]
    WideMatrix { rows: usize, cols: usize },

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("layer {0} carries no weights")]
    NotParameterized(usize),

    #[error("stale or mismatched forward trace: {0}")]
    Trace(String),

    #[error("label {label} out of range at index {index}")]
    LabelOutOfRange { index: usize, label: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("idx {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("lr schedule `{text}`: {reason}")]
    Schedule { text: String, reason: String },

    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("pruning ratio {0} outside [0, 1)")]
    InvalidRatio(f64),

    #[error("prune plan does not fit network: {0}")]
    PlanMismatch(String),

    #[error("orthogonalization undefined: layer {0} has an all-zero weight")]
    OrthogonalizationUndefined(usize),

    #[error("checkpoint magic mismatch")]
    CheckpointMagic,

    #[error("checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    CheckpointChecksum { stored: u64, computed: u64 },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("checkpoint truncated or malformed: {0}")]
    CheckpointFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
