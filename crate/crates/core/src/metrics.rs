//! Overlap, surface-distance and deformation-regularity metrics.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::par;
use crate::volume::{Dims, DisplacementField, Grid, Interp, LabelVolume, Resample, Spacing, Volume3D};

fn check_dims(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::DimsMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Dice overlap of `label` in two label volumes. Both empty gives 1, exactly
/// one empty gives 0.
pub fn dice(s_fix: &LabelVolume, s_warped: &LabelVolume, label: u32) -> Result<f64> {
    check_dims(s_fix.dims(), s_warped.dims())?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in s_fix.data().iter().zip(s_warped.data()) {
        let (ix, iy) = (x == label, y == label);
        a += ix as usize;
        b += iy as usize;
        both += (ix && iy) as usize;
    }
    Ok(match (a, b) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => 2.0 * both as f64 / (a + b) as f64,
    })
}

/// Foreground voxels with at least one background (or out-of-volume)
/// face neighbour.
pub fn boundary(mask: &[bool], dims: Dims) -> Vec<bool> {
    let n = dims.as_array();
    let strides = [1, dims.w, dims.w * dims.h];
    (0..dims.len())
        .map(|i| {
            if !mask[i] {
                return false;
            }
            let c = dims.coords(i);
            (0..3).any(|a| {
                c[a] == 0
                    || c[a] + 1 == n[a]
                    || !mask[i - strides[a]]
                    || !mask[i + strides[a]]
            })
        })
        .collect()
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest set
/// voxel of `sites`, via separable lower-envelope transforms.
pub fn squared_distance_transform(sites: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    let mut dist: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let n = dims.as_array();
    let sp = spacing.as_array();
    let strides = [1, dims.w, dims.w * dims.h];
    for axis in 0..3 {
        let len = n[axis];
        let stride = strides[axis];
        let lines: Vec<usize> = (0..dims.len())
            .filter(|&i| dims.coords(i)[axis] == 0)
            .collect();
        let src = &dist;
        let results = par::map(lines.len(), |li| {
            let start = lines[li];
            let f: Vec<f64> = (0..len).map(|k| src[start + k * stride]).collect();
            envelope_1d(&f, sp[axis])
        });
        for (start, line) in lines.iter().zip(results) {
            for (k, v) in line.into_iter().enumerate() {
                dist[start + k * stride] = v;
            }
        }
    }
    dist
}

/// `out[p] = min_q ((p - q) * s)^2 + f[q]` over finite `f[q]`.
fn envelope_1d(f: &[f64], s: f64) -> Vec<f64> {
    let n = f.len();
    let pos = |q: usize| q as f64 * s;
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    let intersect = |q: usize, v: usize| -> f64 {
        ((f[q] + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(q) - pos(v)))
    };
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match hull.last() {
                None => {
                    hull.push(q);
                    bounds.clear();
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&v) => {
                    let x = intersect(q, v);
                    if x <= *bounds.last().expect("bound per hull entry") {
                        hull.pop();
                        bounds.pop();
                        if hull.is_empty() {
                            continue;
                        }
                    } else {
                        hull.push(q);
                        bounds.push(x);
                        break;
                    }
                }
            }
        }
    }
    if hull.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = pos(p);
        while k + 1 < hull.len() && bounds[k + 1] < x {
            k += 1;
        }
        let q = hull[k];
        let d = (p as f64 - q as f64) * s;
        *o = d * d + f[q];
    }
    out
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], pct: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

/// Union of both directed boundary-to-boundary distance sets, in mm.
pub fn surface_distances(
    s_fix: &LabelVolume,
    s_warped: &LabelVolume,
    label: u32,
    spacing: Spacing,
) -> Result<Vec<f64>> {
    check_dims(s_fix.dims(), s_warped.dims())?;
    let dims = s_fix.dims();
    let mask_a: Vec<bool> = s_fix.data().iter().map(|&l| l == label).collect();
    let mask_b: Vec<bool> = s_warped.data().iter().map(|&l| l == label).collect();
    if !mask_a.contains(&true) || !mask_b.contains(&true) {
        return Err(Error::EmptyMask { label });
    }
    let edge_a = boundary(&mask_a, dims);
    let edge_b = boundary(&mask_b, dims);
    let to_a = squared_distance_transform(&edge_a, dims, spacing);
    let to_b = squared_distance_transform(&edge_b, dims, spacing);
    let mut out = Vec::new();
    for i in 0..dims.len() {
        if edge_a[i] {
            out.push(libm::sqrt(to_b[i]));
        }
    }
    for i in 0..dims.len() {
        if edge_b[i] {
            out.push(libm::sqrt(to_a[i]));
        }
    }
    Ok(out)
}

/// Symmetric surface-distance percentile in mm (`pct = 100` is Hausdorff).
pub fn hd_percentile(
    s_fix: &LabelVolume,
    s_warped: &LabelVolume,
    label: u32,
    spacing: Spacing,
    pct: f64,
) -> Result<f64> {
    let mut d = surface_distances(s_fix, s_warped, label, spacing)?;
    Ok(percentile(&mut d, pct))
}

/// 95th-percentile symmetric surface distance in mm.
pub fn hd95(s_fix: &LabelVolume, s_warped: &LabelVolume, label: u32, spacing: Spacing) -> Result<f64> {
    hd_percentile(s_fix, s_warped, label, spacing, 95.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JacobianStats {
    /// Population std of log det J over interior voxels.
    pub sdlogj: f64,
    /// Fraction of interior voxels whose determinant was clamped (det <= 1e-6).
    pub folding_fraction: f64,
    pub min_det: f64,
}

pub const DET_FLOOR: f64 = 1e-6;

#[inline]
fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Determinant of the Jacobian of `x + disp(x)` from central differences;
/// neighbours are clamped at the border (one-sided there).
fn jacobian_det(disp: &DisplacementField, i: usize) -> f64 {
    let dims = disp.dims();
    let c = dims.coords(i);
    let n = dims.as_array();
    let data = disp.data();
    let mut m = [[0.0; 3]; 3];
    for axis in 0..3 {
        let lo = c[axis].saturating_sub(1);
        let hi = (c[axis] + 1).min(n[axis] - 1);
        let mut a = c;
        let mut b = c;
        a[axis] = lo;
        b[axis] = hi;
        let span = (hi - lo) as f64;
        let (pa, pb) = (data[dims.index(a[0], a[1], a[2])], data[dims.index(b[0], b[1], b[2])]);
        for comp in 0..3 {
            let deriv = if span > 0.0 { (pb[comp] - pa[comp]) / span } else { 0.0 };
            m[comp][axis] = deriv + if comp == axis { 1.0 } else { 0.0 };
        }
    }
    det3(m)
}

/// Standard deviation of the log Jacobian determinant over interior voxels.
pub fn sdlogj(disp: &DisplacementField) -> Result<JacobianStats> {
    let dims = disp.dims();
    if dims.w < 3 || dims.h < 3 || dims.z < 3 {
        return Err(Error::VolumeTooSmall(dims));
    }
    let interior: Vec<usize> = (0..dims.len())
        .filter(|&i| {
            let c = dims.coords(i);
            (0..3).all(|a| c[a] > 0 && c[a] + 1 < dims.as_array()[a])
        })
        .collect();
    let dets = par::map(interior.len(), |k| jacobian_det(disp, interior[k]));
    let n = dets.len() as f64;
    let mut folded = 0usize;
    let mut min_det = f64::INFINITY;
    let logs: Vec<f64> = dets
        .iter()
        .map(|&d| {
            min_det = min_det.min(d);
            if d <= DET_FLOOR {
                folded += 1;
                libm::log(DET_FLOOR)
            } else {
                libm::log(d)
            }
        })
        .collect();
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    Ok(JacobianStats {
        sdlogj: libm::sqrt(var),
        folding_fraction: folded as f64 / n,
        min_det,
    })
}

/// log det J on every voxel (clamped at [`DET_FLOOR`]), for display.
pub fn log_jacobian_map(disp: &DisplacementField) -> Result<Volume3D> {
    let dims = disp.dims();
    let data = par::map(dims.len(), |i| libm::log(jacobian_det(disp, i).max(DET_FLOOR)));
    Grid::new(dims, disp.spacing(), data)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub per_label_dice: BTreeMap<u32, f64>,
    /// `None` when the label is empty in either mask.
    pub per_label_hd95_mm: BTreeMap<u32, Option<f64>>,
    pub mean_dice: f64,
    pub mean_hd95_mm: Option<f64>,
    pub sdlogj: f64,
    pub folding_fraction: f64,
    pub spacing: Spacing,
}

/// Labels present (non-zero) in either volume.
pub fn present_labels(a: &LabelVolume, b: &LabelVolume) -> Vec<u32> {
    let set: BTreeSet<u32> = a
        .data()
        .iter()
        .chain(b.data())
        .copied()
        .filter(|&l| l != 0)
        .collect();
    set.into_iter().collect()
}

/// Warps `mov_labels` with `disp` (nearest neighbour) and scores it against
/// `fix_labels`. An empty `labels` list means every non-zero label present.
pub fn evaluate(
    fix_labels: &LabelVolume,
    mov_labels: &LabelVolume,
    disp: &DisplacementField,
    labels: &[u32],
) -> Result<MetricReport> {
    check_dims(fix_labels.dims(), mov_labels.dims())?;
    let warped = mov_labels.warp(disp, Interp::Nearest)?;
    let labels = if labels.is_empty() {
        present_labels(fix_labels, mov_labels)
    } else {
        labels.to_vec()
    };
    let spacing = fix_labels.spacing();
    let mut per_label_dice = BTreeMap::new();
    let mut per_label_hd95_mm = BTreeMap::new();
    for &label in &labels {
        per_label_dice.insert(label, dice(fix_labels, &warped, label)?);
        let hd = match hd95(fix_labels, &warped, label, spacing) {
            Ok(v) => Some(v),
            Err(Error::EmptyMask { .. }) => None,
            Err(e) => return Err(e),
        };
        per_label_hd95_mm.insert(label, hd);
    }
    let mean_dice = if labels.is_empty() {
        1.0
    } else {
        per_label_dice.values().sum::<f64>() / labels.len() as f64
    };
    let hds: Vec<f64> = per_label_hd95_mm.values().flatten().copied().collect();
    let mean_hd95_mm = if hds.is_empty() {
        None
    } else {
        Some(hds.iter().sum::<f64>() / hds.len() as f64)
    };
    let jac = sdlogj(disp)?;
    Ok(MetricReport {
        per_label_dice,
        per_label_hd95_mm,
        mean_dice,
        mean_hd95_mm,
        sdlogj: jac.sdlogj,
        folding_fraction: jac.folding_fraction,
        spacing,
    })
}
