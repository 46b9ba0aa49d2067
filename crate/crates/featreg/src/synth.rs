//! Synthetic blob phantoms with a known, fold-free displacement field.
//!
//! Blobs are ellipsoids with a smooth (logistic) edge and a distinct
//! intensity per label. The truth field `t` is lattice white noise smoothed
//! with a Gaussian and scaled so its largest component equals the requested
//! amplitude. Both images are rendered analytically: the moving image is the
//! phantom itself and the fixed image samples the phantom at `x + t(x)`, so
//! warping the moving image with `t` reproduces the fixed image and `t` is
//! the field a registration should recover.

use featreg_core::metrics::sdlogj;
use featreg_core::{Dims, DisplacementField, Grid, LabelVolume, Spacing, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DRAWS: usize = 100;
pub const MIN_DET: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("dims {0} are below the 16x16x16 minimum")]
    TooSmall(Dims),
    #[error("invalid synth parameter: {0}")]
    InvalidParam(String),
    #[error("no fold-free field in {draws} draws (best min det {best_min_det:.4})")]
    RejectionExhausted { draws: usize, best_min_det: f64 },
    #[error(transparent)]
    Core(#[from] featreg_core::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub dims: Dims,
    pub n_blobs: usize,
    /// Largest displacement component, in voxels.
    pub warp_amplitude: f64,
    /// Std of the Gaussian applied to the noise, in voxels.
    pub warp_smoothness: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dims: Dims::new(64, 64, 64),
            n_blobs: 6,
            warp_amplitude: 12.0,
            warp_smoothness: 16.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub intensity: f64,
    pub label: u32,
}

impl Blob {
    /// Normalized ellipsoidal radius (1 on the surface).
    fn radius_at(&self, p: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.radii[a];
            s += d * d;
        }
        s.sqrt()
    }

    fn min_radius(&self) -> f64 {
        self.radii.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub blobs: Vec<Blob>,
    /// Width of the logistic edge, in voxels.
    pub edge: f64,
}

impl Phantom {
    pub fn intensity(&self, p: [f64; 3]) -> f64 {
        self.blobs
            .iter()
            .map(|b| {
                let signed = (b.radius_at(p) - 1.0) * b.min_radius();
                b.intensity / (1.0 + (signed / self.edge).exp())
            })
            .sum()
    }

    /// Label of the first blob containing `p`, 0 for background.
    pub fn label(&self, p: [f64; 3]) -> u32 {
        self.blobs
            .iter()
            .find(|b| b.radius_at(p) <= 1.0)
            .map_or(0, |b| b.label)
    }
}

#[derive(Clone, Debug)]
pub struct SynthCase {
    pub fix: Volume3D,
    pub mov: Volume3D,
    pub fix_labels: LabelVolume,
    pub mov_labels: LabelVolume,
    pub truth: DisplacementField,
    pub phantom: Phantom,
    pub draws: usize,
}

fn validate(cfg: &SynthConfig) -> Result<(), SynthError> {
    let d = cfg.dims;
    if d.w < 16 || d.h < 16 || d.z < 16 {
        return Err(SynthError::TooSmall(d));
    }
    if cfg.n_blobs == 0 || cfg.n_blobs > 255 {
        return Err(SynthError::InvalidParam(format!("n_blobs {} not in 1..=255", cfg.n_blobs)));
    }
    if !(cfg.warp_amplitude.is_finite() && cfg.warp_amplitude >= 0.0) {
        return Err(SynthError::InvalidParam(format!("warp_amplitude {}", cfg.warp_amplitude)));
    }
    if !(cfg.warp_smoothness.is_finite() && cfg.warp_smoothness > 0.0) {
        return Err(SynthError::InvalidParam(format!("warp_smoothness {}", cfg.warp_smoothness)));
    }
    Ok(())
}

/// Places non-overlapping blobs by rejection. Radii scale with the smallest
/// dimension; intensities are spread over `[0.3, 1.0]` in shuffled order.
pub fn random_phantom(rng: &mut ChaCha8Rng, dims: Dims, n_blobs: usize) -> Phantom {
    let n = dims.as_array().map(|v| v as f64);
    let m = n.iter().copied().fold(f64::INFINITY, f64::min);
    let mut levels: Vec<f64> = (0..n_blobs)
        .map(|i| 0.3 + 0.7 * (i + 1) as f64 / n_blobs as f64)
        .collect();
    for i in (1..levels.len()).rev() {
        let j = rng.gen_range(0..=i);
        levels.swap(i, j);
    }
    let mut blobs: Vec<Blob> = Vec::with_capacity(n_blobs);
    let mut attempts = 0;
    while blobs.len() < n_blobs {
        attempts += 1;
        // Shrink blobs if the volume is crowded.
        let shrink = 1.0 / (1.0 + attempts as f64 / 2000.0);
        let radii = [0; 3].map(|_| rng.gen_range(0.10..0.20) * m * shrink);
        let center: [f64; 3] =
            std::array::from_fn(|a| rng.gen_range(radii[a] + 2.0..n[a] - 1.0 - radii[a] - 2.0));
        let max_r = radii.iter().copied().fold(0.0, f64::max);
        let clear = blobs.iter().all(|b| {
            let other = b.radii.iter().copied().fold(0.0, f64::max);
            let d2: f64 = (0..3).map(|a| (b.center[a] - center[a]).powi(2)).sum();
            d2.sqrt() > max_r + other + 2.0
        });
        if clear {
            let label = blobs.len() as u32 + 1;
            blobs.push(Blob {
                center,
                radii,
                intensity: levels[blobs.len()],
                label,
            });
        }
    }
    Phantom { blobs, edge: 0.75 }
}

/// Gaussian weights `g(i - c_k)` between output positions `0..n` and lattice
/// positions `c_k = -pad + k * step`, cut off at three standard deviations.
fn axis_weights(n: usize, pad: usize, step: usize, sigma: f64) -> (usize, Vec<f64>) {
    let k = (n + 2 * pad - 1) / step + 1;
    let cutoff = 3.0 * sigma;
    let mut w = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let d = i as f64 - (j * step) as f64 + pad as f64;
            if d.abs() <= cutoff {
                w[i * k + j] = (-d * d / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    (k, w)
}

/// White-noise impulses on a lattice of spacing `step` (covering the volume
/// plus a `3 sigma` margin) convolved with a Gaussian of std `sigma`.
fn smoothed_noise(rng: &mut ChaCha8Rng, dims: Dims, sigma: f64, step: usize) -> Vec<f64> {
    let pad = (3.0 * sigma).ceil() as usize;
    let (kx, wx) = axis_weights(dims.w, pad, step, sigma);
    let (ky, wy) = axis_weights(dims.h, pad, step, sigma);
    let (kz, wz) = axis_weights(dims.z, pad, step, sigma);
    let impulses: Vec<f64> = (0..kx * ky * kz).map(|_| rng.sample(StandardNormal)).collect();
    // Contract one axis at a time: (kx,ky,kz) -> (w,ky,kz) -> (w,h,kz) -> (w,h,z).
    let mut a = vec![0.0; dims.w * ky * kz];
    for r in 0..ky * kz {
        for x in 0..dims.w {
            a[r * dims.w + x] = (0..kx).map(|j| wx[x * kx + j] * impulses[r * kx + j]).sum();
        }
    }
    let mut b = vec![0.0; dims.w * dims.h * kz];
    for z in 0..kz {
        for y in 0..dims.h {
            for j in 0..ky {
                let g = wy[y * ky + j];
                if g == 0.0 {
                    continue;
                }
                for x in 0..dims.w {
                    b[(z * dims.h + y) * dims.w + x] += g * a[(z * ky + j) * dims.w + x];
                }
            }
        }
    }
    let plane = dims.w * dims.h;
    let mut c = vec![0.0; dims.len()];
    for z in 0..dims.z {
        for j in 0..kz {
            let g = wz[z * kz + j];
            if g == 0.0 {
                continue;
            }
            for p in 0..plane {
                c[z * plane + p] += g * b[j * plane + p];
            }
        }
    }
    c
}

/// One smooth random field draw, scaled so `max |component| = amplitude`.
pub fn random_field(rng: &mut ChaCha8Rng, dims: Dims, amplitude: f64, smoothness: f64) -> Result<DisplacementField, SynthError> {
    let step = ((smoothness / 2.0).round() as usize).max(1);
    let comps: Vec<Vec<f64>> = (0..3).map(|_| smoothed_noise(rng, dims, smoothness, step)).collect();
    let peak = comps
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let data = (0..dims.len())
        .map(|i| [comps[0][i] * scale, comps[1][i] * scale, comps[2][i] * scale])
        .collect();
    Ok(Grid::new(dims, Spacing::unit(), data)?)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCase, SynthError> {
    validate(cfg)?;
    let dims = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phantom = random_phantom(&mut rng, dims, cfg.n_blobs);

    let mut best = f64::NEG_INFINITY;
    let mut accepted = None;
    for draw in 1..=MAX_DRAWS {
        let field = random_field(&mut rng, dims, cfg.warp_amplitude, cfg.warp_smoothness)?;
        let min_det = sdlogj(&field)?.min_det;
        if min_det > MIN_DET {
            accepted = Some((field, draw));
            break;
        }
        best = best.max(min_det);
    }
    let (truth, draws) = accepted.ok_or(SynthError::RejectionExhausted {
        draws: MAX_DRAWS,
        best_min_det: best,
    })?;

    let spacing = Spacing::unit();
    let at = |x: usize, y: usize, z: usize| [x as f64, y as f64, z as f64];
    let moved = |x: usize, y: usize, z: usize| {
        let t = truth.get(x, y, z);
        [x as f64 + t[0], y as f64 + t[1], z as f64 + t[2]]
    };
    let mov = Grid::from_fn(dims, spacing, |x, y, z| phantom.intensity(at(x, y, z)))?;
    let mov_labels = Grid::from_fn(dims, spacing, |x, y, z| phantom.label(at(x, y, z)))?;
    let fix = Grid::from_fn(dims, spacing, |x, y, z| phantom.intensity(moved(x, y, z)))?;
    let fix_labels = Grid::from_fn(dims, spacing, |x, y, z| phantom.label(moved(x, y, z)))?;
    Ok(SynthCase {
        fix,
        mov,
        fix_labels,
        mov_labels,
        truth,
        phantom,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(amplitude: f64) -> SynthConfig {
        SynthConfig {
            seed: 3,
            dims: Dims::new(24, 20, 16),
            n_blobs: 3,
            warp_amplitude: amplitude,
            warp_smoothness: 4.0,
        }
    }

    #[test]
    fn zero_amplitude_gives_identical_pair() {
        let case = generate(&small(0.0)).unwrap();
        assert_eq!(case.fix, case.mov);
        assert_eq!(case.fix_labels, case.mov_labels);
        assert!(case.truth.data().iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn amplitude_sets_peak_component() {
        let case = generate(&small(2.5)).unwrap();
        let peak = case.truth.data().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 2.5).abs() < 1e-12);
        assert!(sdlogj(&case.truth).unwrap().min_det > MIN_DET);
    }

    #[test]
    fn labels_are_one_to_n() {
        let case = generate(&small(1.0)).unwrap();
        let mut seen: Vec<u32> = case.mov_labels.data().to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_params() {
        let mut cfg = small(1.0);
        cfg.dims = Dims::new(15, 16, 16);
        assert!(matches!(generate(&cfg), Err(SynthError::TooSmall(_))));
        let mut cfg = small(1.0);
        cfg.warp_smoothness = 0.0;
        assert!(matches!(generate(&cfg), Err(SynthError::InvalidParam(_))));
    }

    #[test]
    fn huge_amplitude_exhausts_rejection() {
        let mut cfg = small(40.0);
        cfg.warp_smoothness = 1.0;
        assert!(matches!(generate(&cfg), Err(SynthError::RejectionExhausted { .. })));
    }

    #[test]
    fn axis_weights_cover_the_margin() {
        let (k, w) = axis_weights(10, 6, 2, 2.0);
        // Lattice -6, -4, ..., 14.
        assert_eq!(k, 11);
        // Output 0 sits on lattice point 3 (position 0).
        assert_eq!(w[3], 1.0);
        assert_eq!(w[0], (-18.0f64).exp() * 0.0 + (-36.0f64 / 8.0).exp());
    }
}
