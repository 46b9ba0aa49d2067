//! Moment-adaptive (Adam) refinement of a displacement field.

use alloc::vec;
use alloc::vec::Vec;

use super::{loss_and_gradient, LossBreakdown, RegistrationConfig};
use crate::error::{Error, Result};
use crate::volume::{DisplacementField, FeatureVolume, Grid};

/// Halvings tried before a step is given up on.
const MAX_HALVINGS: usize = 20;

/// Runs up to `cfg.refine_iters` bias-corrected Adam steps on every
/// displacement component.
///
/// A step that would raise the total loss is retried at half the step size
/// so the trace never increases.
/// Refinement ends early once no reduction is found after [`MAX_HALVINGS`]
/// halvings. The returned trace holds the loss at the initial field followed
/// by the loss after each accepted step.
pub fn continuous_refine(
    f_fix: &FeatureVolume,
    f_mov: &FeatureVolume,
    init: &DisplacementField,
    cfg: &RegistrationConfig,
) -> Result<(DisplacementField, Vec<LossBreakdown>)> {
    cfg.validate()?;
    let n = init.data().len();
    let mut phi: Vec<[f64; 3]> = init.data().to_vec();
    let mut m = vec![[0.0; 3]; n];
    let mut v = vec![[0.0; 3]; n];
    let mut trace = Vec::with_capacity(cfg.refine_iters + 1);
    let (mut b1t, mut b2t) = (1.0, 1.0);

    let evaluate = |phi: Vec<[f64; 3]>, iteration: usize| -> Result<_> {
        let field = Grid::new(init.dims(), init.spacing(), phi)
            .map_err(|_| Error::NonFiniteLoss { iteration })?;
        let (l, grad) = loss_and_gradient(f_fix, f_mov, &field, cfg.lambda)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        Ok((field, l, grad))
    };

    let (mut field, mut current, mut grad) = evaluate(phi.clone(), 0)?;
    trace.push(current);

    'outer: for iter in 0..cfg.refine_iters {
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let mut dir = vec![[0.0; 3]; n];
        for (((d, g), mi), vi) in dir.iter_mut().zip(grad.data()).zip(&mut m).zip(&mut v) {
            for a in 0..3 {
                mi[a] = cfg.beta1 * mi[a] + (1.0 - cfg.beta1) * g[a];
                vi[a] = cfg.beta2 * vi[a] + (1.0 - cfg.beta2) * g[a] * g[a];
                let m_hat = mi[a] / (1.0 - b1t);
                let v_hat = vi[a] / (1.0 - b2t);
                d[a] = m_hat / (libm::sqrt(v_hat) + cfg.eps);
            }
        }
        let mut lr = cfg.step_size;
        for _ in 0..=MAX_HALVINGS {
            let proposal: Vec<[f64; 3]> = phi
                .iter()
                .zip(&dir)
                .map(|(p, d)| [p[0] - lr * d[0], p[1] - lr * d[1], p[2] - lr * d[2]])
                .collect();
            let (f, l, g) = evaluate(proposal.clone(), iter + 1)?;
            if l.total <= current.total {
                phi = proposal;
                field = f;
                current = l;
                grad = g;
                trace.push(current);
                continue 'outer;
            }
            lr *= 0.5;
        }
        break;
    }
    Ok((field, trace))
}
