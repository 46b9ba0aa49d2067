//! Displacement-field estimation in the reduced feature space.
//!
//! The objective is `mse(F_fix, F_mov ∘ φ) + λ·‖∇φ‖²`. A coarse-to-fine
//! discrete search produces a robust initial field, which moment-adaptive
//! gradient steps then refine to sub-voxel precision.

mod discrete;
mod objective;
mod pipeline;
mod refine;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use discrete::{box_smooth, candidate_offsets, discrete_convex_search};
pub use objective::{loss, loss_and_gradient, loss_gradient, regularizer, similarity_mse};
pub use pipeline::{optimization_dims, register, register_stacks, RegistrationResult};
pub use refine::continuous_refine;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegistrationConfig {
    /// Weight of the diffusion regularizer.
    pub lambda: f64,
    /// Number of pyramid levels in the discrete search.
    pub levels: usize,
    /// Per-level capture radius, in voxels of that level (coarsest first).
    pub capture_radius: Vec<usize>,
    /// Per-level candidate spacing, in voxels of that level.
    pub quant_step: Vec<usize>,
    /// Coupled-convex alternations per level.
    pub cc_iters: usize,
    /// Box-filter radius used to smooth the field during coupling.
    pub smooth_radius: usize,
    pub refine_iters: usize,
    /// Adam step size, in voxels of the optimization grid.
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of PCA components kept (capped by the encoder's channel count).
    pub feature_dim: usize,
    /// Image-to-optimization-grid downsampling factor per axis.
    pub grid_factor: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            levels: 3,
            capture_radius: vec![2, 2, 2],
            quant_step: vec![1, 1, 1],
            cc_iters: 5,
            smooth_radius: 3,
            refine_iters: 100,
            step_size: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            feature_dim: 24,
            grid_factor: 2,
        }
    }
}

impl RegistrationConfig {
    /// One discrete level with plain per-voxel argmin (no coupling).
    pub fn single_level(radius: usize, step: usize) -> Self {
        Self {
            levels: 1,
            capture_radius: vec![radius],
            quant_step: vec![step],
            cc_iters: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.capture_radius.len() != self.levels || self.quant_step.len() != self.levels {
            return bad(format!(
                "capture_radius ({}) and quant_step ({}) must both have {} entries",
                self.capture_radius.len(),
                self.quant_step.len(),
                self.levels
            ));
        }
        if self.capture_radius.iter().chain(&self.quant_step).any(|&v| v == 0) {
            return bad("capture radii and quantization steps must be positive".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if self.grid_factor == 0 {
            return bad("grid_factor must be at least 1".into());
        }
        Ok(())
    }
}

/// Objective value split into its terms; `total = sim + lambda * reg`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub sim: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(sim: f64, reg: f64, lambda: f64) -> Self {
        Self {
            sim,
            reg,
            total: sim + lambda * reg,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sim.is_finite() && self.reg.is_finite() && self.total.is_finite()
    }
}
