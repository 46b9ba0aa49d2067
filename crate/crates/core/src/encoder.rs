//! Slice-wise patch-token encoding with stride skipping and z-interpolation.
//!
//! A volume is cut into axial slices. Every `stride_k`-th slice (plus the
//! last one) goes through a [`SliceEncoder`]; the skipped slices are filled
//! later by [`interpolate_missing_slices`], linearly in z between the
//! bracketing encoded slices.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::par;
use crate::volume::Volume3D;

/// A 2D scalar image, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Axial slice `z` of a volume.
    pub fn axial(vol: &Volume3D, z: usize) -> Self {
        let d = vol.dims();
        let plane = d.w * d.h;
        Self {
            width: d.w,
            height: d.h,
            data: vol.data()[z * plane..(z + 1) * plane].to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.width * y]
    }
}

/// Patch tokens of one slice: `grid_w * grid_h` rows of `channels` values,
/// row-major over the patch grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub grid_w: usize,
    pub grid_h: usize,
    pub channels: usize,
    pub tokens: Vec<f64>,
}

impl TokenGrid {
    pub fn new(grid_w: usize, grid_h: usize, channels: usize, tokens: Vec<f64>) -> Result<Self> {
        let expected = grid_w * grid_h * channels;
        if tokens.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: tokens.len(),
            });
        }
        if let Some(i) = tokens.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid_w,
            grid_h,
            channels,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, n: usize) -> &[f64] {
        &self.tokens[n * self.channels..(n + 1) * self.channels]
    }

    fn same_shape(&self, other: &TokenGrid) -> bool {
        self.grid_w == other.grid_w
            && self.grid_h == other.grid_h
            && self.channels == other.channels
    }
}

/// Per-slice token grids for a whole volume.
///
/// `slices[z]` is `None` for slices skipped by the stride and not yet
/// interpolated. `encoded_mask[z]` records provenance: it stays `true` only
/// for slices that went through the encoder, also after interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceFeatureStack {
    pub grid_w: usize,
    pub grid_h: usize,
    pub channels: usize,
    pub stride_k: usize,
    pub encoder_id: String,
    pub slices: Vec<Option<TokenGrid>>,
    pub encoded_mask: Vec<bool>,
}

impl SliceFeatureStack {
    /// Assembles a stack, checking that every present slice has the same shape.
    pub fn new(
        grid_w: usize,
        grid_h: usize,
        channels: usize,
        stride_k: usize,
        encoder_id: String,
        slices: Vec<Option<TokenGrid>>,
        encoded_mask: Vec<bool>,
    ) -> Result<Self> {
        if slices.len() != encoded_mask.len() {
            return Err(Error::LengthMismatch {
                expected: slices.len(),
                found: encoded_mask.len(),
            });
        }
        for (z, s) in slices.iter().enumerate() {
            if let Some(t) = s {
                if t.grid_w != grid_w || t.grid_h != grid_h || t.channels != channels {
                    return Err(Error::GridMismatch(format!(
                        "slice {z} is {}x{}x{}, stack is {grid_w}x{grid_h}x{channels}",
                        t.grid_w, t.grid_h, t.channels
                    )));
                }
            }
        }
        Ok(Self {
            grid_w,
            grid_h,
            channels,
            stride_k,
            encoder_id,
            slices,
            encoded_mask,
        })
    }

    pub fn depth(&self) -> usize {
        self.slices.len()
    }

    pub fn tokens_per_slice(&self) -> usize {
        self.grid_w * self.grid_h
    }

    /// Number of directly encoded slices.
    pub fn encoded_count(&self) -> usize {
        self.encoded_mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.slices.iter().all(Option::is_some)
    }

    pub fn first_missing(&self) -> Option<usize> {
        self.slices.iter().position(Option::is_none)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub stride_k: usize,
    pub patch_size: usize,
    /// Multiplier on every desk descriptor value.
    pub desk_gain: f64,
    pub encoder_id: String,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stride_k: 1,
            patch_size: 2,
            desk_gain: DeskEncoder::DEFAULT_GAIN,
            encoder_id: DeskEncoder::ID.to_string(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride_k == 0 {
            return Err(Error::InvalidConfig("stride_k must be at least 1".into()));
        }
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig("patch_size must be at least 1".into()));
        }
        if !(self.desk_gain.is_finite() && self.desk_gain > 0.0) {
            return Err(Error::InvalidConfig(format!("desk_gain must be positive, got {}", self.desk_gain)));
        }
        Ok(())
    }
}

/// Maps one 2D slice to its patch tokens. Must be deterministic.
pub trait SliceEncoder: Sync {
    fn id(&self) -> &str;
    fn encode(&self, slice: &Image2D) -> Result<TokenGrid>;
}

/// Built-in patch descriptor encoder (no learned weights).
///
/// Each slice is min-max normalized to `[0, 1]` (constant slices become all
/// zero). Each non-overlapping `patch_size` square then yields 20 values: its
/// intensities area-averaged onto a 4x4 grid, the patch mean and population
/// std, and the mean absolute x and y forward differences inside the patch.
/// Remainder rows/columns that do not fill a whole patch are dropped.
///
/// All 20 values are finally multiplied by `gain`. Descriptors of a
/// normalized slice are small (mostly below 1), so with gain 1 the
/// similarity term is tiny next to a unit-weight regularizer and recovered
/// fields come out over-smoothed.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskEncoder {
    pub patch_size: usize,
    pub gain: f64,
}

impl DeskEncoder {
    pub const ID: &'static str = "desk-v1";
    pub const CHANNELS: usize = 20;
    const CELLS: usize = 4;

    pub const DEFAULT_GAIN: f64 = 5.0;

    pub fn new(patch_size: usize) -> Self {
        Self::with_gain(patch_size, Self::DEFAULT_GAIN)
    }

    pub fn with_gain(patch_size: usize, gain: f64) -> Self {
        Self { patch_size, gain }
    }

    pub fn from_config(cfg: &EncoderConfig) -> Self {
        Self::with_gain(cfg.patch_size, cfg.desk_gain)
    }

    fn describe(&self, img: &Image2D, px: usize, py: usize, out: &mut [f64]) {
        let p = self.patch_size;
        let (x0, y0) = (px * p, py * p);
        let cell_range = |c: usize| {
            let lo = c * p / Self::CELLS;
            let hi = ((c + 1) * p / Self::CELLS).max(lo + 1);
            lo..hi
        };
        for cy in 0..Self::CELLS {
            for cx in 0..Self::CELLS {
                let mut sum = 0.0;
                let mut count = 0usize;
                for y in cell_range(cy) {
                    for x in cell_range(cx) {
                        sum += img.at(x0 + x, y0 + y);
                        count += 1;
                    }
                }
                out[cy * Self::CELLS + cx] = sum / count as f64;
            }
        }
        let n = (p * p) as f64;
        let mut sum = 0.0;
        for y in 0..p {
            for x in 0..p {
                sum += img.at(x0 + x, y0 + y);
            }
        }
        let mean = sum / n;
        let mut var = 0.0;
        let (mut gx, mut gy) = (0.0, 0.0);
        for y in 0..p {
            for x in 0..p {
                let v = img.at(x0 + x, y0 + y);
                var += (v - mean) * (v - mean);
                if x + 1 < p {
                    gx += libm::fabs(img.at(x0 + x + 1, y0 + y) - v);
                }
                if y + 1 < p {
                    gy += libm::fabs(img.at(x0 + x, y0 + y + 1) - v);
                }
            }
        }
        let pairs = (p * (p - 1)) as f64;
        out[16] = mean;
        out[17] = libm::sqrt(var / n);
        out[18] = if pairs > 0.0 { gx / pairs } else { 0.0 };
        out[19] = if pairs > 0.0 { gy / pairs } else { 0.0 };
    }
}

fn normalize_min_max(img: &Image2D) -> Image2D {
    let lo = img.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = img.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data = if range > 0.0 {
        img.data.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; img.data.len()]
    };
    Image2D {
        width: img.width,
        height: img.height,
        data,
    }
}

impl SliceEncoder for DeskEncoder {
    fn id(&self) -> &str {
        Self::ID
    }

    fn encode(&self, slice: &Image2D) -> Result<TokenGrid> {
        let p = self.patch_size;
        if p == 0 || slice.width < p || slice.height < p {
            return Err(Error::SliceTooSmall {
                width: slice.width,
                height: slice.height,
                patch: p,
            });
        }
        let img = normalize_min_max(slice);
        let (gw, gh) = (img.width / p, img.height / p);
        let mut tokens = vec![0.0; gw * gh * Self::CHANNELS];
        for (n, out) in tokens.chunks_exact_mut(Self::CHANNELS).enumerate() {
            self.describe(&img, n % gw, n / gw, out);
        }
        if self.gain != 1.0 {
            tokens.iter_mut().for_each(|t| *t *= self.gain);
        }
        TokenGrid::new(gw, gh, Self::CHANNELS, tokens)
    }
}

/// Indices of the slices that go through the encoder: `0, k, 2k, ...` and
/// always the last slice.
pub fn encoded_indices(depth: usize, stride_k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..depth).step_by(stride_k.max(1)).collect();
    if depth > 0 && idx.last() != Some(&(depth - 1)) {
        idx.push(depth - 1);
    }
    idx
}

/// Encodes the selected axial slices of `vol`; skipped slices are left missing.
pub fn encode_volume<E: SliceEncoder + ?Sized>(
    vol: &Volume3D,
    cfg: &EncoderConfig,
    encoder: &E,
) -> Result<SliceFeatureStack> {
    cfg.validate()?;
    let depth = vol.dims().z;
    let selected = encoded_indices(depth, cfg.stride_k);
    let encoded = par::map(selected.len(), |i| {
        encoder.encode(&Image2D::axial(vol, selected[i]))
    });
    let mut slices: Vec<Option<TokenGrid>> = vec![None; depth];
    let mut mask = vec![false; depth];
    for (&z, grid) in selected.iter().zip(encoded) {
        slices[z] = Some(grid?);
        mask[z] = true;
    }
    let first = slices[selected[0]].as_ref().expect("slice 0 is always encoded");
    let (gw, gh, ch) = (first.grid_w, first.grid_h, first.channels);
    SliceFeatureStack::new(gw, gh, ch, cfg.stride_k, encoder.id().to_string(), slices, mask)
}

/// Fills every missing slice `z` between present neighbours `a < z < b` with
/// `(b - z)/(b - a) * F[a] + (z - a)/(b - a) * F[b]`, token-wise.
pub fn interpolate_missing_slices(stack: &SliceFeatureStack) -> Result<SliceFeatureStack> {
    let depth = stack.depth();
    if depth == 0 {
        return Ok(stack.clone());
    }
    for z in [0, depth - 1] {
        if stack.slices[z].is_none() {
            return Err(Error::MissingBoundarySlice(z));
        }
    }
    let mut out = stack.clone();
    let present: Vec<usize> = (0..depth).filter(|&z| stack.slices[z].is_some()).collect();
    for pair in present.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b == a + 1 {
            continue;
        }
        let fa = stack.slices[a].as_ref().expect("present");
        let fb = stack.slices[b].as_ref().expect("present");
        if !fa.same_shape(fb) {
            return Err(Error::GridMismatch(format!("slices {a} and {b} differ in shape")));
        }
        let span = (b - a) as f64;
        for z in a + 1..b {
            let wa = (b - z) as f64 / span;
            let wb = (z - a) as f64 / span;
            let tokens = fa
                .tokens
                .iter()
                .zip(&fb.tokens)
                .map(|(&u, &v)| wa * u + wb * v)
                .collect();
            out.slices[z] = Some(TokenGrid::new(fa.grid_w, fa.grid_h, fa.channels, tokens)?);
        }
    }
    Ok(out)
}
