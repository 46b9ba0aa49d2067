use thiserror::Error;

/// Parse and serialization failures for the on-disk formats. Every variant
/// names the offending field or byte offset.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{what}: need at least {need} bytes, have {have}")]
    TooShort {
        what: &'static str,
        need: usize,
        have: usize,
    },

    #[error("sizeof_hdr at offset 0 is {found}, expected 348 in either byte order")]
    BadHeaderSize { found: i32 },

    #[error("bad magic at offset {offset}: {found:?}")]
    BadMagic { offset: usize, found: Vec<u8> },

    #[error("unsupported datatype code {code} (field `datatype`, offset 70)")]
    UnsupportedDatatype { code: i16 },

    #[error("invalid field `{field}` at offset {offset}: {reason}")]
    InvalidField {
        field: &'static str,
        offset: usize,
        reason: String,
    },

    #[error("truncated payload: expected {expected} bytes from offset {offset}, {actual} available")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("file size mismatch: header implies {expected} bytes, file has {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("value {value} does not fit datatype {datatype}")]
    ValueOutOfRange { value: f64, datatype: &'static str },

    #[error("non-finite feature value in slice {slice}")]
    NonFinite { slice: usize },

    #[error(transparent)]
    Core(#[from] featreg_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;
