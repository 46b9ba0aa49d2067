//! Grayscale mid-axial-slice displays written as binary PGM (P5).

use featreg_core::metrics::log_jacobian_map;
use featreg_core::{DisplacementField, Error as CoreError, Volume3D};

pub const TILE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum MontageMode {
    /// Alternating 16-voxel tiles of the two volumes.
    Checker,
    /// Absolute difference.
    Diff,
    /// log det J of a displacement field.
    Logj,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray8 {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn mid_slice(vol: &Volume3D) -> (usize, usize, Vec<f64>) {
    let d = vol.dims();
    let z = d.z / 2;
    let plane = d.w * d.h;
    (d.w, d.h, vol.data()[z * plane..(z + 1) * plane].to_vec())
}

/// Linear map of `[lo, hi]` onto `0..=255`; a constant range maps to 128.
fn rescale(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn check_dims(a: &Volume3D, b: &Volume3D) -> Result<(), CoreError> {
    if a.dims() != b.dims() {
        return Err(CoreError::DimsMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

/// Checkerboard of `a` and `b` on the mid-axial slice, both rescaled with
/// their joint min/max so equal inputs give an image of the slice itself.
pub fn checker(a: &Volume3D, b: &Volume3D) -> Result<Gray8, CoreError> {
    check_dims(a, b)?;
    let (w, h, sa) = mid_slice(a);
    let (_, _, sb) = mid_slice(b);
    let (la, ha) = min_max(&sa);
    let (lb, hb) = min_max(&sb);
    let values: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if (x / TILE + y / TILE) % 2 == 0 {
                sa[i]
            } else {
                sb[i]
            }
        })
        .collect();
    Ok(Gray8 {
        width: w,
        height: h,
        pixels: rescale(&values, la.min(lb), ha.max(hb)),
    })
}

/// `|a - b|` on the mid-axial slice, mapped from `[0, max]`; all zero when
/// the inputs agree.
pub fn diff(a: &Volume3D, b: &Volume3D) -> Result<Gray8, CoreError> {
    check_dims(a, b)?;
    let (w, h, sa) = mid_slice(a);
    let (_, _, sb) = mid_slice(b);
    let values: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).collect();
    let (_, hi) = min_max(&values);
    let pixels = if hi > 0.0 {
        rescale(&values, 0.0, hi)
    } else {
        vec![0; values.len()]
    };
    Ok(Gray8 {
        width: w,
        height: h,
        pixels,
    })
}

/// log det J of `field` on the mid-axial slice, min/max rescaled.
pub fn logj(field: &DisplacementField) -> Result<Gray8, CoreError> {
    let map = log_jacobian_map(field)?;
    let (w, h, values) = mid_slice(&map);
    let (lo, hi) = min_max(&values);
    Ok(Gray8 {
        width: w,
        height: h,
        pixels: rescale(&values, lo, hi),
    })
}
