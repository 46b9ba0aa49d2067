#![allow(dead_code)]

use featreg_core::{Dims, DisplacementField, FeatureVolume, LabelVolume, Spacing, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> Volume3D {
    let data = (0..dims.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Volume3D::new(dims, Spacing::unit(), data).unwrap()
}

/// Sum of random low-frequency sinusoids per channel.
pub fn smooth_features(rng: &mut ChaCha8Rng, dims: Dims, channels: usize) -> FeatureVolume {
    let waves: Vec<([f64; 3], f64, f64)> = (0..channels * 3)
        .map(|_| {
            let k = [0; 3].map(|_| rng.gen_range(-0.6..0.6));
            (k, rng.gen_range(0.0..6.3), rng.gen_range(0.5..1.5))
        })
        .collect();
    let mut data = Vec::with_capacity(dims.len() * channels);
    for i in 0..dims.len() {
        let c = dims.coords(i).map(|v| v as f64);
        for ch in 0..channels {
            let v: f64 = waves[ch * 3..ch * 3 + 3]
                .iter()
                .map(|(k, phase, amp)| amp * (k[0] * c[0] + k[1] * c[1] + k[2] * c[2] + phase).sin())
                .sum();
            data.push(v);
        }
    }
    FeatureVolume::new(dims, Spacing::unit(), channels, data).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, dims: Dims, amplitude: f64) -> DisplacementField {
    let data = (0..dims.len())
        .map(|_| [0; 3].map(|_| rng.gen_range(-amplitude..amplitude)))
        .collect();
    DisplacementField::new(dims, Spacing::unit(), data).unwrap()
}

/// Random blobby label mask: a few random boxes of label 1 and 2.
pub fn random_labels(rng: &mut ChaCha8Rng, dims: Dims) -> LabelVolume {
    let n = dims.as_array();
    let mut data = vec![0u32; dims.len()];
    for label in [1u32, 2, 1] {
        let lo: [usize; 3] = std::array::from_fn(|a| rng.gen_range(0..n[a]));
        let hi: [usize; 3] = std::array::from_fn(|a| rng.gen_range(lo[a]..n[a]) + 1);
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    if rng.gen_bool(0.9) {
                        data[dims.index(x, y, z)] = label;
                    }
                }
            }
        }
    }
    LabelVolume::new(dims, Spacing::unit(), data).unwrap()
}
