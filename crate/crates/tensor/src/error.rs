use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: unsupported shape {shape:?}")]
    UnsupportedShape { op: &'static str, shape: Vec<usize> },
    #[error("{op}: index {index} out of range for shape {shape:?}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        shape: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataShapeMismatch { len: usize, shape: Vec<usize> },
    #[error("{op}: mask allows no entries")]
    EmptyMask { op: &'static str },
    #[error("{op}: mask length {mask} does not match logits length {len}")]
    MaskLength {
        op: &'static str,
        mask: usize,
        len: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient for '{name}': optimizer step aborted")]
    NonFiniteGradient { name: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint record")]
    Truncated,
    #[error("record name is not valid UTF-8")]
    BadName,
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("record '{name}' has dtype {found:?}, expected {expected:?}")]
    DtypeMismatch {
        name: String,
        found: crate::Dtype,
        expected: crate::Dtype,
    },
    #[error("missing record '{0}'")]
    MissingRecord(String),
    #[error("record '{name}' has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}
