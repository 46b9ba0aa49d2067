//! Coarse-to-fine discrete search with coupled-convex smoothing.
//!
//! At each pyramid level the feature volumes are average-pooled, a dense cost
//! volume is evaluated over integer candidate offsets around the rounded
//! initial field, and the field is alternately smoothed and re-selected with
//! a quadratic coupling penalty whose weight doubles every iteration.

use alloc::vec;
use alloc::vec::Vec;

use super::RegistrationConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::volume::{Dims, DisplacementField, FeatureVolume, Grid};

/// Candidate offsets `{-R..R}` in steps of `q` per axis (x fastest), stably
/// sorted by squared length so that ties prefer shorter offsets.
pub fn candidate_offsets(radius: usize, step: usize) -> Vec<[i64; 3]> {
    let half = (radius / step) as i64;
    let q = step as i64;
    let mut out = Vec::with_capacity(((2 * half + 1) as usize).pow(3));
    for z in -half..=half {
        for y in -half..=half {
            for x in -half..=half {
                out.push([x * q, y * q, z * q]);
            }
        }
    }
    out.sort_by_key(|o| o[0] * o[0] + o[1] * o[1] + o[2] * o[2]);
    out
}

fn pool(f: &FeatureVolume, factor: usize) -> Result<FeatureVolume> {
    if factor == 1 {
        return Ok(f.clone());
    }
    let src = f.dims();
    let dims = Dims::new(
        src.w.div_ceil(factor),
        src.h.div_ceil(factor),
        src.z.div_ceil(factor),
    );
    let ch = f.channels();
    let plane = dims.w * dims.h;
    let data = par::map_slices(dims.z, |z| {
        let mut row = vec![0.0; plane * ch];
        for y in 0..dims.h {
            for x in 0..dims.w {
                let out = &mut row[(x + dims.w * y) * ch..][..ch];
                let mut count = 0usize;
                for sz in z * factor..((z + 1) * factor).min(src.z) {
                    for sy in y * factor..((y + 1) * factor).min(src.h) {
                        for sx in x * factor..((x + 1) * factor).min(src.w) {
                            let v = f.voxel(src.index(sx, sy, sz));
                            for (o, a) in out.iter_mut().zip(v) {
                                *o += a;
                            }
                            count += 1;
                        }
                    }
                }
                out.iter_mut().for_each(|o| *o /= count as f64);
            }
        }
        row
    });
    let sp = f.spacing().scaled(factor as f64)?;
    FeatureVolume::new(dims, sp, ch, data)
}

/// Doubles the resolution of a pooled-level field onto `dims`, scaling
/// vectors by two. Voxel centres follow the pooling geometry.
fn upsample_level(field: &DisplacementField, dims: Dims) -> Result<DisplacementField> {
    let coarse = |j: usize| (j as f64 + 0.5) / 2.0 - 0.5;
    DisplacementField::from_fn(dims, field.spacing(), |x, y, z| {
        let v = field.sample_linear([coarse(x), coarse(y), coarse(z)]);
        [2.0 * v[0], 2.0 * v[1], 2.0 * v[2]]
    })
}

/// Mean filter over a `(2r + 1)^3` window with edge replication, applied as
/// three separable passes.
pub fn box_smooth(field: &DisplacementField, radius: usize) -> DisplacementField {
    if radius == 0 {
        return field.clone();
    }
    let dims = field.dims();
    let n = dims.as_array();
    let strides = [1, dims.w, dims.w * dims.h];
    let r = radius as i64;
    let mut cur = field.data().to_vec();
    for axis in 0..3 {
        let src = &cur;
        let next = par::map(dims.len(), |i| {
            let c = dims.coords(i)[axis] as i64;
            let base = i as i64 - c * strides[axis] as i64;
            let mut acc = [0.0; 3];
            for o in -r..=r {
                let k = (c + o).clamp(0, n[axis] as i64 - 1);
                let v = src[(base + k * strides[axis] as i64) as usize];
                for a in 0..3 {
                    acc[a] += v[a];
                }
            }
            let count = (2 * r + 1) as f64;
            [acc[0] / count, acc[1] / count, acc[2] / count]
        });
        cur = next;
    }
    Grid::new(dims, field.spacing(), cur).expect("smoothing preserves shape")
}

struct CostVolume {
    dims: Dims,
    offsets: Vec<[i64; 3]>,
    centers: Vec<[i64; 3]>,
    cost: Vec<f64>,
}

impl CostVolume {
    fn build(
        fix: &FeatureVolume,
        mov: &FeatureVolume,
        init: &DisplacementField,
        radius: usize,
        step: usize,
    ) -> Self {
        let dims = fix.dims();
        let offsets = candidate_offsets(radius, step);
        let k = offsets.len();
        let centers: Vec<[i64; 3]> = init
            .data()
            .iter()
            .map(|v| {
                [
                    libm::round(v[0]) as i64,
                    libm::round(v[1]) as i64,
                    libm::round(v[2]) as i64,
                ]
            })
            .collect();
        let n = dims.as_array().map(|v| v as i64);
        let plane = dims.w * dims.h;
        let cost = par::map_slices(dims.z, |z| {
            let mut row = Vec::with_capacity(plane * k);
            for i in z * plane..(z + 1) * plane {
                let c = dims.coords(i);
                let f = fix.voxel(i);
                for o in &offsets {
                    let mut idx = [0usize; 3];
                    for a in 0..3 {
                        idx[a] = (c[a] as i64 + centers[i][a] + o[a]).clamp(0, n[a] - 1) as usize;
                    }
                    let m = mov.voxel(dims.index(idx[0], idx[1], idx[2]));
                    let mut s = 0.0;
                    for (a, b) in f.iter().zip(m) {
                        let d = a - b;
                        s += d * d;
                    }
                    row.push(s);
                }
            }
            row
        });
        Self {
            dims,
            offsets,
            centers,
            cost,
        }
    }

    /// Per-voxel argmin of `cost(u) + theta * |u - target(x)|^2`; the first
    /// candidate in offset order wins ties.
    fn select(&self, theta: f64, target: Option<&DisplacementField>) -> Vec<[f64; 3]> {
        let k = self.offsets.len();
        par::map(self.dims.len(), |i| {
            let costs = &self.cost[i * k..(i + 1) * k];
            let center = self.centers[i];
            let goal = target.map(|t| t.data()[i]);
            let mut best = f64::INFINITY;
            let mut best_u = [0.0; 3];
            for (o, &c) in self.offsets.iter().zip(costs) {
                let u = [
                    (center[0] + o[0]) as f64,
                    (center[1] + o[1]) as f64,
                    (center[2] + o[2]) as f64,
                ];
                let mut value = c;
                if let Some(g) = goal {
                    let d = [u[0] - g[0], u[1] - g[1], u[2] - g[2]];
                    value += theta * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                }
                if value < best {
                    best = value;
                    best_u = u;
                }
            }
            best_u
        })
    }
}

/// Coarse-to-fine discrete estimate of the displacement field at the
/// resolution of the feature volumes.
pub fn discrete_convex_search(
    f_fix: &FeatureVolume,
    f_mov: &FeatureVolume,
    cfg: &RegistrationConfig,
) -> Result<DisplacementField> {
    cfg.validate()?;
    if f_fix.dims() != f_mov.dims() {
        return Err(Error::DimsMismatch {
            expected: f_fix.dims(),
            found: f_mov.dims(),
        });
    }
    if f_fix.channels() != f_mov.channels() {
        return Err(Error::ChannelMismatch {
            expected: f_fix.channels(),
            found: f_mov.channels(),
        });
    }
    let mut field: Option<DisplacementField> = None;
    for level in 0..cfg.levels {
        let factor = 1usize << (cfg.levels - 1 - level);
        let fix = pool(f_fix, factor)?;
        let mov = pool(f_mov, factor)?;
        let init = match field.take() {
            None => DisplacementField::zeros(fix.dims(), fix.spacing())?,
            Some(prev) => upsample_level(&prev, fix.dims())?,
        };
        let volume = CostVolume::build(
            &fix,
            &mov,
            &init,
            cfg.capture_radius[level],
            cfg.quant_step[level],
        );
        let mut current = Grid::new(fix.dims(), fix.spacing(), volume.select(0.0, None))?;
        let mut theta = 1.0;
        for _ in 0..cfg.cc_iters {
            let smooth = box_smooth(&current, cfg.smooth_radius);
            current = Grid::new(fix.dims(), fix.spacing(), volume.select(theta, Some(&smooth)))?;
            theta *= 2.0;
        }
        field = Some(current);
    }
    let out = field.expect("at least one level");
    Ok(out.with_spacing(f_fix.spacing()))
}
