//! Joint feature bank, shared PCA projection, and feature-volume assembly.
//!
//! Tokens from the directly encoded slices of both volumes are stacked into
//! one bank; a single mean-centered PCA basis fitted on that bank projects
//! both stacks, so the reduced features of the two volumes live in the same
//! coordinates.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::{SliceFeatureStack, TokenGrid};
use crate::error::{Error, Result};
use crate::linalg;
use crate::volume::{Dims, FeatureVolume, Interp, Resample, Spacing};

/// Row-stacked token vectors, fixed volume first, then moving.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub rows: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureBank {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.channels..(r + 1) * self.channels]
    }
}

/// Mean vector and orthonormal `D x d` basis of a fitted PCA.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionModel {
    pub input_dim: usize,
    pub output_dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `input_dim x output_dim`.
    pub basis: Vec<f64>,
    /// Per-component variance (squared singular value over `rows - 1`),
    /// non-increasing.
    pub explained_variance: Vec<f64>,
}

impl ProjectionModel {
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.input_dim)
            .map(|r| self.basis[r * self.output_dim + c])
            .collect()
    }

    /// `(t - mean) * basis`
    pub fn project(&self, t: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, (&x, &m)) in t.iter().zip(&self.mean).enumerate() {
            let centered = x - m;
            let row = &self.basis[r * self.output_dim..(r + 1) * self.output_dim];
            for (o, b) in out.iter_mut().zip(row) {
                *o += centered * b;
            }
        }
    }

    /// `mean + basis * reduced`
    pub fn reconstruct(&self, reduced: &[f64]) -> Vec<f64> {
        (0..self.input_dim)
            .map(|r| {
                let row = &self.basis[r * self.output_dim..(r + 1) * self.output_dim];
                self.mean[r] + row.iter().zip(reduced).map(|(b, y)| b * y).sum::<f64>()
            })
            .collect()
    }
}

/// Stacks the tokens of all directly encoded slices: fixed first, then
/// moving, each in slice-then-token order. Interpolated slices are skipped.
pub fn build_feature_bank(
    stack_fix: &SliceFeatureStack,
    stack_mov: &SliceFeatureStack,
) -> Result<FeatureBank> {
    if stack_fix.channels != stack_mov.channels {
        return Err(Error::ChannelMismatch {
            expected: stack_fix.channels,
            found: stack_mov.channels,
        });
    }
    let channels = stack_fix.channels;
    let mut data = Vec::new();
    for stack in [stack_fix, stack_mov] {
        for (slice, &encoded) in stack.slices.iter().zip(&stack.encoded_mask) {
            if let (Some(grid), true) = (slice, encoded) {
                data.extend_from_slice(&grid.tokens);
            }
        }
    }
    Ok(FeatureBank {
        rows: data.len() / channels,
        channels,
        data,
    })
}

/// Fits a mean-centered PCA with `d` components.
///
/// Components come from the SVD of the centered bank, ordered by decreasing
/// singular value. Each component is signed so that its largest-magnitude
/// entry (lowest index on ties) is positive. If the data rank is below `d`,
/// the remaining components complete an orthonormal set with zero variance.
pub fn fit_pca(bank: &FeatureBank, d: usize) -> Result<ProjectionModel> {
    let (rows, dim) = (bank.rows, bank.channels);
    if rows < 2 {
        return Err(Error::RankDeficient { rows });
    }
    let max = dim.min(rows);
    if d == 0 || d > max {
        return Err(Error::TooManyComponents { requested: d, max });
    }

    let mut mean = vec![0.0; dim];
    for r in 0..rows {
        for (m, x) in mean.iter_mut().zip(bank.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    // Second pass removes the rounding bias of the first.
    let mut correction = vec![0.0; dim];
    for r in 0..rows {
        for ((c, x), m) in correction.iter_mut().zip(bank.row(r)).zip(&mean) {
            *c += x - m;
        }
    }
    for (m, c) in mean.iter_mut().zip(&correction) {
        *m += c / rows as f64;
    }

    let mut centered = bank.data.clone();
    for row in centered.chunks_exact_mut(dim) {
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let svd = linalg::right_svd(&centered, rows, dim);

    let mut basis = vec![0.0; dim * d];
    for c in 0..d {
        let mut col = svd.vector(c);
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if libm::fabs(*v) > libm::fabs(col[pivot]) {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        for r in 0..dim {
            basis[r * d + c] = col[r];
        }
    }
    let explained_variance = svd.singular_values[..d]
        .iter()
        .map(|s| s * s / (rows - 1) as f64)
        .collect();
    Ok(ProjectionModel {
        input_dim: dim,
        output_dim: d,
        mean,
        basis,
        explained_variance,
    })
}

/// Projects every present slice of `stack` to `model.output_dim` channels.
pub fn project_stack(stack: &SliceFeatureStack, model: &ProjectionModel) -> Result<SliceFeatureStack> {
    if stack.channels != model.input_dim {
        return Err(Error::ChannelMismatch {
            expected: model.input_dim,
            found: stack.channels,
        });
    }
    let d = model.output_dim;
    let slices = stack
        .slices
        .iter()
        .map(|slice| {
            slice
                .as_ref()
                .map(|grid| {
                    let mut tokens = vec![0.0; grid.len() * d];
                    for (n, out) in tokens.chunks_exact_mut(d).enumerate() {
                        model.project(grid.token(n), out);
                    }
                    TokenGrid::new(grid.grid_w, grid.grid_h, d, tokens)
                })
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    SliceFeatureStack::new(
        stack.grid_w,
        stack.grid_h,
        d,
        stack.stride_k,
        stack.encoder_id.clone(),
        slices,
        stack.encoded_mask.clone(),
    )
}

/// Reshapes each slice's tokens onto its patch grid, stacks the slices along
/// z, and resamples every channel trilinearly onto `dims` with `spacing`.
pub fn assemble_feature_volume(
    reduced: &SliceFeatureStack,
    dims: Dims,
    spacing: Spacing,
) -> Result<FeatureVolume> {
    if let Some(z) = reduced.first_missing() {
        return Err(Error::IncompleteStack(z));
    }
    let grid = Dims::new(reduced.grid_w, reduced.grid_h, reduced.depth());
    let mut data = Vec::with_capacity(grid.len() * reduced.channels);
    for slice in reduced.slices.iter().flatten() {
        data.extend_from_slice(&slice.tokens);
    }
    let stacked = FeatureVolume::new(grid, spacing, reduced.channels, data)?;
    let resampled = stacked.resample_to_shape(dims, Interp::Linear)?;
    FeatureVolume::new(dims, spacing, resampled.channels(), resampled.data().to_vec())
}
