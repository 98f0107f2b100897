//! Central-difference gradients over pose parameters.
//!
//! Parameters are ordered `[ω (3), t (3), s (3)]`. Rotation steps are
//! applied as `exp([ω]×)·R`, translation and size componentwise. The same
//! engine backs gradient verification and the numeric parts of the solver.

use crate::error::{GeomError, Result};
use crate::geom::{exp_so3, Pose, Vec3};
use crate::losses::PoseGradient;

/// Component-wise denominator floor for relative errors.
pub const ABS_FLOOR: f64 = 1e-6;

/// A one-sided slope mismatch above this fraction of the slope scale marks a
/// kink inside the stencil.
pub const KINK_REL: f64 = 1e-4;

/// Moves `pose` by a 9-parameter step. Sizes are kept positive by the
/// [`Pose`] constructor; a step that would flip one errors.
pub fn perturb(pose: &Pose, step: &[f64; 9]) -> Result<Pose> {
    let omega = Vec3::new(step[0], step[1], step[2]);
    let dt = Vec3::new(step[3], step[4], step[5]);
    let ds = Vec3::new(step[6], step[7], step[8]);
    Pose::new(exp_so3(&omega) * pose.rotation(), pose.translation() + dt, pose.size() + ds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericGradient {
    pub central: [f64; 9],
    /// Per component: forward and backward slopes disagree.
    pub kink: [bool; 9],
}

impl NumericGradient {
    pub fn gradient(&self) -> PoseGradient {
        PoseGradient::from_array(&self.central)
    }

    pub fn non_smooth(&self) -> bool {
        self.kink.iter().any(|&k| k)
    }
}

/// Central differences of `loss` at `pose` with step `eps`.
pub fn numeric_gradient(loss: impl Fn(&Pose) -> Result<f64>, pose: &Pose, eps: f64) -> Result<NumericGradient> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GeomError::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let f0 = loss(pose)?;
    let mut central = [0.0; 9];
    let mut kink = [false; 9];
    for i in 0..9 {
        let mut step = [0.0; 9];
        step[i] = eps;
        let fp = loss(&perturb(pose, &step)?)?;
        step[i] = -eps;
        let fm = loss(&perturb(pose, &step)?)?;
        let forward = (fp - f0) / eps;
        let backward = (f0 - fm) / eps;
        central[i] = (fp - fm) / (2.0 * eps);
        let scale = forward.abs().max(backward.abs()).max(1.0);
        kink[i] = (forward - backward).abs() > KINK_REL * scale;
    }
    Ok(NumericGradient { central, kink })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index of the largest error.
    pub worst: usize,
    /// A kink fell inside the stencil; the comparison is not meaningful.
    pub non_smooth: bool,
    pub analytic: [f64; 9],
    pub numeric: [f64; 9],
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        !self.non_smooth && self.max_rel_error < tol
    }
}

/// Relative error `|a − n| / max(|a|, |n|, ABS_FLOOR)`, component-wise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares an analytic gradient against central differences of `loss`.
pub fn grad_check(
    loss: impl Fn(&Pose) -> Result<f64>,
    analytic: &PoseGradient,
    pose: &Pose,
    eps: f64,
) -> Result<GradCheckReport> {
    let numeric = numeric_gradient(loss, pose, eps)?;
    let a = analytic.to_array();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: 0,
        non_smooth: numeric.non_smooth(),
        analytic: a,
        numeric: numeric.central,
    };
    for i in 0..9 {
        let e = relative_error(a[i], numeric.central[i]);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = i;
        }
    }
    Ok(report)
}
