use alloc::vec::Vec;

use super::{continuous_refine, discrete_convex_search, loss, LossBreakdown, RegistrationConfig};
use crate::encoder::{
    encode_volume, interpolate_missing_slices, EncoderConfig, SliceEncoder, SliceFeatureStack,
};
use crate::error::{Error, Result};
use crate::featbank::{
    assemble_feature_volume, build_feature_bank, fit_pca, project_stack, ProjectionModel,
};
use crate::volume::{Dims, DisplacementField, Interp, Resample, Spacing, Volume3D};

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    /// Final field on the image grid, in image voxels.
    pub field: DisplacementField,
    /// Discrete-search field on the optimization grid.
    pub initial_field: DisplacementField,
    /// Refined field on the optimization grid.
    pub grid_field: DisplacementField,
    /// Loss at the discrete-search field, then after every refinement step.
    pub trace: Vec<LossBreakdown>,
    /// Loss of the zero field on the optimization grid.
    pub identity_loss: LossBreakdown,
    pub projection: ProjectionModel,
}

/// Shape of the optimization grid for an image grid and downsampling factor.
pub fn optimization_dims(image: Dims, factor: usize) -> Dims {
    Dims::new(
        image.w.div_ceil(factor),
        image.h.div_ceil(factor),
        image.z.div_ceil(factor),
    )
}

/// Full pipeline from intensity volumes: encode both, fill skipped slices,
/// then run [`register_stacks`].
pub fn register<E: SliceEncoder + ?Sized>(
    fix: &Volume3D,
    mov: &Volume3D,
    encoder: &E,
    enc_cfg: &EncoderConfig,
    reg_cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    if fix.dims() != mov.dims() {
        return Err(Error::DimsMismatch {
            expected: fix.dims(),
            found: mov.dims(),
        });
    }
    let stack_fix = encode_volume(fix, enc_cfg, encoder)?;
    let stack_mov = encode_volume(mov, enc_cfg, encoder)?;
    register_stacks(&stack_fix, &stack_mov, fix.dims(), fix.spacing(), reg_cfg)
}

/// Registration from per-slice token stacks (encoded in-process or loaded
/// from feature files) onto an image grid of shape `dims`.
pub fn register_stacks(
    stack_fix: &SliceFeatureStack,
    stack_mov: &SliceFeatureStack,
    dims: Dims,
    spacing: Spacing,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    for stack in [stack_fix, stack_mov] {
        if stack.depth() != dims.z {
            return Err(Error::DimsMismatch {
                expected: dims,
                found: Dims::new(stack.grid_w, stack.grid_h, stack.depth()),
            });
        }
    }
    let full_fix = interpolate_missing_slices(stack_fix)?;
    let full_mov = interpolate_missing_slices(stack_mov)?;

    let bank = build_feature_bank(&full_fix, &full_mov)?;
    let d = cfg.feature_dim.min(bank.channels).min(bank.rows);
    let projection = fit_pca(&bank, d)?;
    let reduced_fix = project_stack(&full_fix, &projection)?;
    let reduced_mov = project_stack(&full_mov, &projection)?;

    let feat_fix = assemble_feature_volume(&reduced_fix, dims, spacing)?;
    let feat_mov = assemble_feature_volume(&reduced_mov, dims, spacing)?;

    let grid = optimization_dims(dims, cfg.grid_factor);
    let opt_fix = feat_fix.resample_to_shape(grid, Interp::Linear)?;
    let opt_mov = feat_mov.resample_to_shape(grid, Interp::Linear)?;

    let zero = DisplacementField::zeros(grid, opt_fix.spacing())?;
    let identity_loss = loss(&opt_fix, &opt_mov, &zero, cfg.lambda)?;
    let initial_field = discrete_convex_search(&opt_fix, &opt_mov, cfg)?;
    let (grid_field, trace) = continuous_refine(&opt_fix, &opt_mov, &initial_field, cfg)?;
    let field = grid_field.resize(dims)?.with_spacing(spacing);

    Ok(RegistrationResult {
        field,
        initial_field,
        grid_field,
        trace,
        identity_loss,
        projection,
    })
}
