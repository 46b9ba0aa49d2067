//! FVB1: little-endian feature-stack interchange format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FVB1"
//! 4       4           version (u32, = 1)
//! 8       4           Z
//! 12      4           grid_w
//! 16      4           grid_h
//! 20      4           D (channels)
//! 24      4           stride_k
//! 28      64          encoder_id, NUL padded
//! 92      Z           encoded_mask, one byte per slice (0 or 1)
//! 92+Z    Z*gw*gh*D*4 f32 payload: slice, grid row (y), column (x), channel
//! ```
//!
//! The mask decides which slices are present; slices with a zero mask byte
//! are stored as zeros and read back as missing. `stride_k` is carried as
//! metadata only.

use featreg_core::{SliceFeatureStack, TokenGrid};

use crate::error::{FormatError, Result};

pub const MAGIC: [u8; 4] = *b"FVB1";
pub const VERSION: u32 = 1;
pub const ENCODER_ID_LEN: usize = 64;
pub const FIXED_HEADER: usize = 28 + ENCODER_ID_LEN;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fvb1Header {
    pub version: u32,
    pub depth: u32,
    pub grid_w: u32,
    pub grid_h: u32,
    pub channels: u32,
    pub stride_k: u32,
    pub encoder_id: String,
    pub encoded_mask: Vec<bool>,
}

impl Fvb1Header {
    pub fn header_len(&self) -> usize {
        FIXED_HEADER + self.depth as usize
    }

    /// Number of f32 values in the payload, `None` on overflow.
    pub fn payload_values(&self) -> Option<usize> {
        (self.depth as usize)
            .checked_mul(self.grid_w as usize)?
            .checked_mul(self.grid_h as usize)?
            .checked_mul(self.channels as usize)
    }

    /// Exact file size implied by the header.
    pub fn file_len(&self) -> Option<usize> {
        self.payload_values()?.checked_mul(4)?.checked_add(self.header_len())
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("bounds checked"))
}

fn invalid(field: &'static str, offset: usize, reason: impl Into<String>) -> FormatError {
    FormatError::InvalidField {
        field,
        offset,
        reason: reason.into(),
    }
}

pub fn read_header(bytes: &[u8]) -> Result<Fvb1Header> {
    if bytes.len() < FIXED_HEADER {
        return Err(FormatError::TooShort {
            what: "FVB1 header",
            need: FIXED_HEADER,
            have: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            offset: 0,
            found: bytes[..4].to_vec(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(invalid("version", 4, format!("unsupported version {version}")));
    }
    let depth = u32_at(bytes, 8);
    let grid_w = u32_at(bytes, 12);
    let grid_h = u32_at(bytes, 16);
    let channels = u32_at(bytes, 20);
    let stride_k = u32_at(bytes, 24);
    for (field, offset, v) in [
        ("Z", 8, depth),
        ("grid_w", 12, grid_w),
        ("grid_h", 16, grid_h),
        ("D", 20, channels),
    ] {
        if v == 0 {
            return Err(invalid(field, offset, "must be positive"));
        }
    }

    let id_bytes = &bytes[28..FIXED_HEADER];
    let end = id_bytes.iter().position(|&b| b == 0).unwrap_or(ENCODER_ID_LEN);
    if id_bytes[end..].iter().any(|&b| b != 0) {
        return Err(invalid("encoder_id", 28, "non-zero bytes after the terminator"));
    }
    let encoder_id = std::str::from_utf8(&id_bytes[..end])
        .map_err(|e| invalid("encoder_id", 28, e.to_string()))?
        .to_owned();

    let mask_end = FIXED_HEADER
        .checked_add(depth as usize)
        .ok_or_else(|| invalid("Z", 8, "overflows"))?;
    if bytes.len() < mask_end {
        return Err(FormatError::TooShort {
            what: "FVB1 encoded_mask",
            need: mask_end,
            have: bytes.len(),
        });
    }
    let encoded_mask = bytes[FIXED_HEADER..mask_end]
        .iter()
        .enumerate()
        .map(|(z, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(invalid("encoded_mask", FIXED_HEADER + z, format!("byte {b} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Fvb1Header {
        version,
        depth,
        grid_w,
        grid_h,
        channels,
        stride_k,
        encoder_id,
        encoded_mask,
    })
}

/// Parses a whole FVB1 buffer. The file length must equal the size implied
/// by the header; nothing is allocated for the payload before that check.
pub fn read_fvb(bytes: &[u8]) -> Result<SliceFeatureStack> {
    let header = read_header(bytes)?;
    let expected = header
        .file_len()
        .ok_or_else(|| invalid("D", 20, "payload size overflows"))?;
    if bytes.len() != expected {
        return Err(FormatError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let (gw, gh, ch) = (header.grid_w as usize, header.grid_h as usize, header.channels as usize);
    let per_slice = gw * gh * ch;
    let payload = &bytes[header.header_len()..];
    let mut slices = Vec::with_capacity(header.depth as usize);
    for (z, &present) in header.encoded_mask.iter().enumerate() {
        if !present {
            slices.push(None);
            continue;
        }
        let raw = &payload[z * per_slice * 4..(z + 1) * per_slice * 4];
        let tokens: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { slice: z });
        }
        slices.push(Some(TokenGrid::new(gw, gh, ch, tokens)?));
    }
    Ok(SliceFeatureStack::new(
        gw,
        gh,
        ch,
        header.stride_k as usize,
        header.encoder_id,
        slices,
        header.encoded_mask,
    )?)
}

/// Serializes a stack. Slices are written when their mask byte is set;
/// unmasked slices are zero-filled. Values are narrowed to f32.
pub fn write_fvb(stack: &SliceFeatureStack) -> Result<Vec<u8>> {
    let id = stack.encoder_id.as_bytes();
    if id.len() > ENCODER_ID_LEN || id.contains(&0) {
        return Err(invalid("encoder_id", 28, format!("{:?} must be at most 64 bytes without NUL", stack.encoder_id)));
    }
    let to_u32 = |v: usize, field: &'static str, offset: usize| {
        u32::try_from(v).map_err(|_| invalid(field, offset, format!("{v} exceeds u32")))
    };
    let header = Fvb1Header {
        version: VERSION,
        depth: to_u32(stack.depth(), "Z", 8)?,
        grid_w: to_u32(stack.grid_w, "grid_w", 12)?,
        grid_h: to_u32(stack.grid_h, "grid_h", 16)?,
        channels: to_u32(stack.channels, "D", 20)?,
        stride_k: to_u32(stack.stride_k, "stride_k", 24)?,
        encoder_id: stack.encoder_id.clone(),
        encoded_mask: stack.encoded_mask.clone(),
    };
    let len = header
        .file_len()
        .ok_or_else(|| invalid("D", 20, "payload size overflows"))?;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&MAGIC);
    for v in [
        header.version,
        header.depth,
        header.grid_w,
        header.grid_h,
        header.channels,
        header.stride_k,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(id);
    out.resize(FIXED_HEADER, 0);
    out.extend(header.encoded_mask.iter().map(|&m| m as u8));
    let per_slice = stack.tokens_per_slice() * stack.channels;
    for (z, (slice, &present)) in stack.slices.iter().zip(&stack.encoded_mask).enumerate() {
        match (slice, present) {
            (Some(t), true) => {
                for v in &t.tokens {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            (None, true) => {
                return Err(invalid("encoded_mask", FIXED_HEADER + z, "slice marked encoded but missing"));
            }
            (_, false) => out.resize(out.len() + per_slice * 4, 0),
        }
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}
