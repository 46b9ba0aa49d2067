use alloc::string::String;

use crate::volume::Dims;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("grid dimensions differ: expected {expected}, found {found}")]
    DimsMismatch { expected: Dims, found: Dims },

    #[error("invalid dimensions {0}: every axis must be at least 1")]
    InvalidDims(Dims),

    #[error("invalid spacing ({0}, {1}, {2}): components must be finite and positive")]
    InvalidSpacing(f64, f64, f64),

    #[error("buffer length {found} does not match the expected {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("slice {width}x{height} is smaller than the patch size {patch}")]
    SliceTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("first and last slices must be encoded before interpolation (missing slice {0})")]
    MissingBoundarySlice(usize),

    #[error("token grid shape differs between slices: {0}")]
    GridMismatch(String),

    #[error("channel dimension mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("cannot fit {requested} components: at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },

    #[error("PCA needs at least 2 rows, got {rows}")]
    RankDeficient { rows: usize },

    #[error("feature stack is incomplete: slice {0} is missing")]
    IncompleteStack(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("label {label} is empty in at least one mask")]
    EmptyMask { label: u32 },

    #[error("volume {0} is too small: every axis needs at least 3 voxels")]
    VolumeTooSmall(Dims),
}
