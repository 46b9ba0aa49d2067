mod common;

use common::{random_field, random_volume, rng};
use featreg_core::{Dims, DisplacementField, Interp, LabelVolume, Resample, Spacing, Volume3D};
use proptest::prelude::*;
use rand::Rng;

/// Trilinear interpolation written directly from the 8-corner formula.
fn trilinear_oracle(v: &Volume3D, p: [f64; 3]) -> f64 {
    let n = v.dims().as_array();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let c = p[a].clamp(0.0, (n[a] - 1) as f64);
        lo[a] = c.floor() as usize;
        hi[a] = (lo[a] + 1).min(n[a] - 1);
        t[a] = c - lo[a] as f64;
    }
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let x = if dx == 0 { lo[0] } else { hi[0] };
                let y = if dy == 0 { lo[1] } else { hi[1] };
                let z = if dz == 0 { lo[2] } else { hi[2] };
                let w = (if dx == 0 { 1.0 - t[0] } else { t[0] })
                    * (if dy == 0 { 1.0 - t[1] } else { t[1] })
                    * (if dz == 0 { 1.0 - t[2] } else { t[2] });
                acc += w * v.get(x, y, z);
            }
        }
    }
    acc
}

#[test]
fn trilinear_matches_corner_formula() {
    let mut r = rng(1);
    let v = random_volume(&mut r, Dims::new(7, 5, 6));
    for _ in 0..2000 {
        let p = [0; 3].map(|_| r.gen_range(-2.0..8.0));
        let (a, b) = (v.sample_linear(p), trilinear_oracle(&v, p));
        assert!((a - b).abs() < 1e-12, "{p:?}: {a} vs {b}");
    }
}

#[test]
fn trilinear_is_exact_on_affine_functions() {
    let f = |x: f64, y: f64, z: f64| 0.5 + 2.0 * x - 3.0 * y + 0.25 * z;
    let v = Volume3D::from_fn(Dims::new(6, 6, 6), Spacing::unit(), |x, y, z| {
        f(x as f64, y as f64, z as f64)
    })
    .unwrap();
    let mut r = rng(2);
    for _ in 0..500 {
        let p = [0; 3].map(|_| r.gen_range(0.0..5.0));
        assert!((v.sample_linear(p) - f(p[0], p[1], p[2])).abs() < 1e-12);
    }
}

#[test]
fn warp_matches_per_voxel_sampling() {
    let mut r = rng(3);
    let d = Dims::new(9, 8, 7);
    let v = random_volume(&mut r, d);
    let field = random_field(&mut r, d, 3.0);
    let warped = v.warp(&field, Interp::Linear).unwrap();
    for z in 0..d.z {
        for y in 0..d.h {
            for x in 0..d.w {
                let u = field.get(x, y, z);
                let p = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
                assert_eq!(*warped.get(x, y, z), v.sample_linear(p));
            }
        }
    }
}

#[test]
fn integer_translation_warp_shifts_voxels() {
    let mut r = rng(4);
    let d = Dims::new(8, 8, 8);
    let v = random_volume(&mut r, d);
    let field = DisplacementField::filled(d, Spacing::unit(), [2.0, -1.0, 0.0]).unwrap();
    let warped = v.warp(&field, Interp::Linear).unwrap();
    assert_eq!(warped.get(3, 4, 5), v.get(5, 3, 5));
    let labels = LabelVolume::from_fn(d, Spacing::unit(), |x, y, z| (x + 10 * y + 100 * z) as u32).unwrap();
    let moved = labels.warp(&field, Interp::Nearest).unwrap();
    assert_eq!(*moved.get(3, 4, 5), 5 + 30 + 500);
}

#[test]
fn nearest_warp_only_produces_existing_labels() {
    let mut r = rng(5);
    let d = Dims::new(10, 9, 8);
    let labels = LabelVolume::from_fn(d, Spacing::unit(), |x, y, _| ((x / 3) + 4 * (y / 3)) as u32).unwrap();
    let field = random_field(&mut r, d, 4.0);
    let moved = labels.warp(&field, Interp::Nearest).unwrap();
    assert!(moved.data().iter().all(|l| labels.data().contains(l)));
}

#[test]
fn resample_keeps_endpoints_and_extent() {
    let mut r = rng(6);
    let v = random_volume(&mut r, Dims::new(9, 5, 7)).with_spacing(Spacing::new(1.0, 2.0, 3.0).unwrap());
    let out = v.resample_to_shape(Dims::new(5, 9, 4), Interp::Linear).unwrap();
    assert_eq!(out.get(0, 0, 0), v.get(0, 0, 0));
    assert_eq!(out.get(4, 8, 3), v.get(8, 4, 6));
    let s = out.spacing();
    assert!((s.sx * 4.0 - 8.0).abs() < 1e-12);
    assert!((s.sy * 8.0 - 8.0).abs() < 1e-12);
    assert!((s.sz * 3.0 - 18.0).abs() < 1e-12);
}

#[test]
fn field_resize_rescales_vectors() {
    let f = DisplacementField::filled(Dims::new(5, 5, 5), Spacing::unit(), [1.0, 2.0, -1.0]).unwrap();
    let up = f.resize(Dims::new(9, 5, 3)).unwrap();
    for v in up.data() {
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-12);
        assert!((v[2] + 0.5).abs() < 1e-12);
    }
}

#[test]
fn invalid_construction_is_rejected() {
    assert!(Volume3D::new(Dims::new(2, 2, 2), Spacing::unit(), vec![0.0; 7]).is_err());
    assert!(Volume3D::new(Dims::new(0, 2, 2), Spacing::unit(), vec![]).is_err());
    assert!(Volume3D::new(Dims::new(1, 1, 1), Spacing::unit(), vec![f64::NAN]).is_err());
    assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
}

proptest! {
    #[test]
    fn sampling_at_nodes_returns_node_values(seed in 0u64..1000, x in 0usize..6, y in 0usize..5, z in 0usize..4) {
        let mut r = rng(seed);
        let v = random_volume(&mut r, Dims::new(6, 5, 4));
        prop_assert_eq!(v.sample_linear([x as f64, y as f64, z as f64]), *v.get(x, y, z));
    }

    #[test]
    fn zero_field_warp_is_identity(seed in 0u64..1000) {
        let mut r = rng(seed);
        let d = Dims::new(5, 6, 4);
        let v = random_volume(&mut r, d);
        let zero = DisplacementField::zeros(d, Spacing::unit()).unwrap();
        prop_assert_eq!(v.warp(&zero, Interp::Linear).unwrap(), v);
    }

    #[test]
    fn interpolated_values_stay_within_range(seed in 0u64..1000, px in -3.0f64..9.0, py in -3.0f64..9.0, pz in -3.0f64..9.0) {
        let mut r = rng(seed);
        let v = random_volume(&mut r, Dims::new(6, 6, 6));
        let s = v.sample_linear([px, py, pz]);
        let lo = v.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s >= lo - 1e-12 && s <= hi + 1e-12);
    }
}
