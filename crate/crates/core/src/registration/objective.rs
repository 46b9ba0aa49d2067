//! Feature MSE, diffusion regularizer, and their analytic gradient.

use alloc::vec;
use alloc::vec::Vec;

use super::LossBreakdown;
use crate::error::{Error, Result};
use crate::par;
use crate::volume::{Cell, Dims, DisplacementField, FeatureVolume, Grid};

fn check_pair(a: &FeatureVolume, b: &FeatureVolume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    if a.channels() != b.channels() {
        return Err(Error::ChannelMismatch {
            expected: a.channels(),
            found: b.channels(),
        });
    }
    Ok(())
}

fn check_field(f: &FeatureVolume, disp: &DisplacementField) -> Result<()> {
    if f.dims() != disp.dims() {
        return Err(Error::DimsMismatch {
            expected: f.dims(),
            found: disp.dims(),
        });
    }
    Ok(())
}

/// Sums per-slice partials in slice order.
fn ordered_sum(parts: Vec<f64>) -> f64 {
    parts.into_iter().fold(0.0, |a, b| a + b)
}

/// Mean over voxels and channels of the squared feature difference.
pub fn similarity_mse(f_fix: &FeatureVolume, f_mov_warped: &FeatureVolume) -> Result<f64> {
    check_pair(f_fix, f_mov_warped)?;
    let dims = f_fix.dims();
    let plane = dims.w * dims.h;
    let parts = par::map(dims.z, |z| {
        let mut acc = 0.0;
        for i in z * plane..(z + 1) * plane {
            acc += squared_distance(f_fix.voxel(i), f_mov_warped.voxel(i));
        }
        acc
    });
    Ok(ordered_sum(parts) / (dims.len() * f_fix.channels()) as f64)
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = y - x;
        s += d * d;
    }
    s
}

#[inline]
fn neighbour(dims: Dims, i: usize, axis: usize) -> Option<usize> {
    let c = dims.coords(i);
    let n = dims.as_array();
    if c[axis] + 1 < n[axis] {
        Some(i + [1, dims.w, dims.w * dims.h][axis])
    } else {
        None
    }
}

/// Mean over voxels of the squared Frobenius norm of the forward-difference
/// Jacobian of the field; differences past the far boundary are zero.
pub fn regularizer(disp: &DisplacementField) -> f64 {
    let dims = disp.dims();
    let data = disp.data();
    let plane = dims.w * dims.h;
    let parts = par::map(dims.z, |z| {
        let mut acc = 0.0;
        for i in z * plane..(z + 1) * plane {
            for axis in 0..3 {
                if let Some(j) = neighbour(dims, i, axis) {
                    for c in 0..3 {
                        let d = data[j][c] - data[i][c];
                        acc += d * d;
                    }
                }
            }
        }
        acc
    });
    ordered_sum(parts) / dims.len() as f64
}

/// Objective value at `disp`.
pub fn loss(
    f_fix: &FeatureVolume,
    f_mov: &FeatureVolume,
    disp: &DisplacementField,
    lambda: f64,
) -> Result<LossBreakdown> {
    evaluate(f_fix, f_mov, disp, lambda, false).map(|(l, _)| l)
}

/// Gradient of the objective w.r.t. every displacement component.
pub fn loss_gradient(
    f_fix: &FeatureVolume,
    f_mov: &FeatureVolume,
    disp: &DisplacementField,
    lambda: f64,
) -> Result<DisplacementField> {
    loss_and_gradient(f_fix, f_mov, disp, lambda).map(|(_, g)| g)
}

pub fn loss_and_gradient(
    f_fix: &FeatureVolume,
    f_mov: &FeatureVolume,
    disp: &DisplacementField,
    lambda: f64,
) -> Result<(LossBreakdown, DisplacementField)> {
    let (l, g) = evaluate(f_fix, f_mov, disp, lambda, true)?;
    Ok((l, g.expect("gradient requested")))
}

struct SlicePartial {
    sim: f64,
    grad: Vec<[f64; 3]>,
}

fn evaluate(
    f_fix: &FeatureVolume,
    f_mov: &FeatureVolume,
    disp: &DisplacementField,
    lambda: f64,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<DisplacementField>)> {
    check_pair(f_fix, f_mov)?;
    check_field(f_fix, disp)?;
    let dims = f_fix.dims();
    let ch = f_fix.channels();
    let plane = dims.w * dims.h;
    let n = dims.len();
    let field = disp.data();
    let sim_scale = 2.0 / (n * ch) as f64;
    let reg_scale = 2.0 * lambda / n as f64;
    let strides = [1, dims.w, plane];

    let parts = par::map(dims.z, |z| {
        let mut sampled = vec![0.0; ch];
        let mut sim = 0.0;
        let mut grad = if want_grad {
            Vec::with_capacity(plane)
        } else {
            Vec::new()
        };
        for i in z * plane..(z + 1) * plane {
            let [x, y, zz] = dims.coords(i);
            let v = field[i];
            let p = [x as f64 + v[0], y as f64 + v[1], zz as f64 + v[2]];
            let cell = Cell::new(dims, p);
            f_mov.sample_cell_into(&cell, &mut sampled);
            let fixed = f_fix.voxel(i);
            sim += squared_distance(fixed, &sampled);
            if !want_grad {
                continue;
            }
            // d sim / d p = sim_scale * sum_ch r_ch * d F_mov,ch / d p
            let mut g = [0.0; 3];
            for c in 0..8 {
                let corner = f_mov.voxel(cell.index[c]);
                let mut dot = 0.0;
                for k in 0..ch {
                    dot += (sampled[k] - fixed[k]) * corner[k];
                }
                for a in 0..3 {
                    g[a] += cell.dweight[c][a] * dot;
                }
            }
            for a in g.iter_mut() {
                *a *= sim_scale;
            }
            let c = [x, y, zz];
            let nmax = dims.as_array();
            for axis in 0..3 {
                let s = strides[axis];
                for comp in 0..3 {
                    let mut r = 0.0;
                    if c[axis] > 0 {
                        r += v[comp] - field[i - s][comp];
                    }
                    if c[axis] + 1 < nmax[axis] {
                        r -= field[i + s][comp] - v[comp];
                    }
                    g[comp] += reg_scale * r;
                }
            }
            grad.push(g);
        }
        SlicePartial { sim, grad }
    });

    let mut sim_sum = 0.0;
    let mut grad = if want_grad { Vec::with_capacity(n) } else { Vec::new() };
    for part in parts {
        sim_sum += part.sim;
        grad.extend(part.grad);
    }
    let breakdown = LossBreakdown::new(sim_sum / (n * ch) as f64, regularizer(disp), lambda);
    let grad = if want_grad {
        Some(Grid::new(dims, disp.spacing(), grad)?)
    } else {
        None
    };
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Interp, Resample, Spacing};

    fn feat(dims: Dims, ch: usize, f: impl Fn(usize) -> f64) -> FeatureVolume {
        FeatureVolume::new(dims, Spacing::unit(), ch, (0..dims.len() * ch).map(f).collect()).unwrap()
    }

    #[test]
    fn mse_basics() {
        let d = Dims::new(3, 2, 2);
        let a = feat(d, 2, |i| (i as f64 * 0.3).sin());
        let b = feat(d, 2, |i| (i as f64 * 0.3).sin() + 0.5);
        assert_eq!(similarity_mse(&a, &a).unwrap(), 0.0);
        assert!((similarity_mse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let c = feat(Dims::new(2, 2, 2), 2, |_| 0.0);
        assert!(matches!(similarity_mse(&a, &c), Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn regularizer_cases() {
        let d = Dims::new(4, 4, 4);
        let zero = DisplacementField::zeros(d, Spacing::unit()).unwrap();
        assert_eq!(regularizer(&zero), 0.0);
        let shift = DisplacementField::filled(d, Spacing::unit(), [1.5, -2.0, 0.25]).unwrap();
        assert_eq!(regularizer(&shift), 0.0);
        // phi_x = x: each voxel with an x-neighbour contributes 1.
        let shear = DisplacementField::from_fn(d, Spacing::unit(), |x, _, _| [x as f64, 0.0, 0.0]).unwrap();
        assert_eq!(regularizer(&shear), 0.75);
    }

    #[test]
    fn loss_decomposition() {
        let d = Dims::new(5, 4, 3);
        let a = feat(d, 3, |i| (i as f64 * 0.11).cos());
        let b = feat(d, 3, |i| (i as f64 * 0.13).sin());
        let disp = DisplacementField::from_fn(d, Spacing::unit(), |x, y, z| {
            [0.1 * y as f64, -0.2 * z as f64, 0.05 * x as f64]
        })
        .unwrap();
        let l = loss(&a, &b, &disp, 2.5).unwrap();
        assert_eq!(l.total, l.sim + 2.5 * l.reg);
        let warped = b.warp(&disp, Interp::Linear).unwrap();
        assert!((l.sim - similarity_mse(&a, &warped).unwrap()).abs() < 1e-15);
        assert_eq!(l.reg, regularizer(&disp));
        let l0 = loss(&a, &b, &disp, 0.0).unwrap();
        assert_eq!(l0.total, l0.sim);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let d = Dims::new(4, 4, 4);
        let a = feat(d, 2, |i| (i as f64 * 0.7).sin());
        let zero = DisplacementField::zeros(d, Spacing::unit()).unwrap();
        let g = loss_gradient(&a, &a, &zero, 1.0).unwrap();
        assert!(g.data().iter().all(|v| *v == [0.0; 3]));
    }
}
