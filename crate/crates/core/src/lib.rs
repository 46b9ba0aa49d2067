//! Training-free deformable registration of 3D volumes in a compact feature space.
//!
//! Volumes are cut into axial slices and encoded into patch-token grids. The
//! tokens of both volumes are pooled into one feature bank, reduced with a
//! shared PCA projection and reassembled into dense feature volumes. A
//! displacement field is then estimated by minimizing feature MSE plus a
//! diffusion penalty: first with a coarse-to-fine discrete search over
//! candidate offsets, then with moment-adaptive gradient refinement.
//!
//! The crate is `no_std` + `alloc` with default features disabled. The
//! `parallel` feature (on by default) spreads per-voxel loops over rayon; all
//! reductions have a fixed order, so results do not depend on thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod encoder;
pub mod error;
pub mod featbank;
pub mod linalg;
pub mod metrics;
mod par;
pub mod registration;
pub mod volume;

pub use encoder::{
    encode_volume, interpolate_missing_slices, DeskEncoder, EncoderConfig, Image2D,
    SliceEncoder, SliceFeatureStack, TokenGrid,
};
pub use error::{Error, Result};
pub use featbank::{
    assemble_feature_volume, build_feature_bank, fit_pca, project_stack, FeatureBank,
    ProjectionModel,
};
pub use metrics::{dice, evaluate, hd95, sdlogj, JacobianStats, MetricReport};
pub use registration::{
    continuous_refine, discrete_convex_search, loss, loss_gradient, register,
    register_stacks, regularizer, similarity_mse, LossBreakdown, RegistrationConfig,
    RegistrationResult,
};
pub use volume::{
    DisplacementField, Dims, FeatureVolume, Grid, Interp, LabelVolume, Resample, Spacing, Volume3D,
};
