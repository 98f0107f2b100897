//! Pose recovery from a prediction bundle, and local refinement of a pose
//! against the geometric consistency terms.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{CategoryPrior, PointCloud, Pose, Vec3};
use crate::gradcheck::{numeric_gradient, perturb};
use crate::losses::{
    bb_pose_loss_grad_with, geometric_loss, pc_pose_loss_grad_with, pc_size_loss, LossBreakdown, LossParams, Penalty,
    PoseGradient,
};
use crate::rotation::{assemble_size, assemble_translation, calibrate};
use crate::synth::PredictionBundle;
use crate::voting::{fit_plane_weighted, project_votes, recover_box, BoxEstimate, FaceId, FacePlanes, FaceVoteSet};

/// Closed-form pose: calibrated rotation, `t = t_res + mean(P)`,
/// `s = s_res + mean size`.
pub fn recover_pose(bundle: &PredictionBundle, cloud: &PointCloud, prior: &CategoryPrior) -> Result<Pose> {
    let rotation = calibrate(&bundle.rotation)?.rotation;
    let translation = assemble_translation(&bundle.t_res, cloud);
    let size = assemble_size(&bundle.s_res, prior)?;
    Pose::new(rotation, translation, size)
}

/// Outward direction voted for `face`, weighted by confidence and
/// distance so that votes from points already on the face, whose sign is
/// arbitrary, do not count.
fn voted_direction(votes: &FaceVoteSet, face: FaceId) -> Vec3 {
    votes.face(face).iter().fold(Vec3::zeros(), |acc, v| acc + v.direction * (v.confidence * v.distance))
}

/// Confidence-weighted plane for each face from the projected votes.
/// Opposite faces are oriented together: `+` along the difference of the
/// two voted directions, `−` against it.
pub fn fit_face_planes(cloud: &PointCloud, votes: &FaceVoteSet) -> Result<FacePlanes> {
    let mut pairs = Vec::with_capacity(6);
    for axis in 0..3 {
        let (plus, minus) = (FaceId::positive(axis), FaceId::negative(axis));
        let hint = voted_direction(votes, plus) - voted_direction(votes, minus);
        for (face, orientation) in [(plus, hint), (minus, -hint)] {
            let points = project_votes(cloud, votes, face)?;
            let weights: Vec<f64> = votes.face(face).iter().map(|v| v.confidence).collect();
            let plane = fit_plane_weighted(&points, &weights, &orientation)
                .map_err(|e| GeomError::degenerate(format!("face {face}: {e}")))?;
            pairs.push((face, plane));
        }
    }
    FacePlanes::from_pairs(pairs)
}

/// Box from the bundle's face votes.
pub fn recover_box_from_votes(bundle: &PredictionBundle, cloud: &PointCloud) -> Result<BoxEstimate> {
    recover_box(&fit_face_planes(cloud, &bundle.votes)?)
}

/// Same as [`recover_box_from_votes`] with every vote weighted equally.
pub fn recover_box_uniform(bundle: &PredictionBundle, cloud: &PointCloud) -> Result<BoxEstimate> {
    let uniform = bundle.votes.map_confidences(|_, _, _| 1.0)?;
    recover_box(&fit_face_planes(cloud, &uniform)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Initial step lengths: rotation (rad), translation (m), size (m).
    pub step: [f64; 3],
    pub iters: usize,
    /// Halve the step until the objective decreases; without it every
    /// step is taken at full length.
    pub backtracking: bool,
    /// Step scale below which the search stops.
    pub min_scale: f64,
    pub penalty: Penalty,
    /// Include the size-score term, differentiated numerically.
    pub size_score: bool,
    pub size_score_eps: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            step: [1e-2, 1e-2, 1e-2],
            iters: 50,
            backtracking: true,
            min_scale: 1e-6,
            penalty: Penalty::L1,
            size_score: true,
            size_score_eps: 1e-4,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(GeomError::invalid("refinement steps must be finite and non-negative"));
        }
        if !(self.min_scale > 0.0 && self.min_scale <= 1.0) {
            return Err(GeomError::invalid("min_scale must be in (0, 1]"));
        }
        if !(self.size_score_eps > 0.0) {
            return Err(GeomError::invalid("size_score_eps must be positive"));
        }
        self.penalty.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    /// No step shorter than the minimum scale decreased the objective.
    Converged,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    /// Loss breakdown of every accepted iterate, starting with the initial
    /// pose.
    pub trace: Vec<LossBreakdown>,
    pub status: RefineStatus,
}

/// Refinement stopped on a non-finite loss or an invalid iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineFailure {
    pub error: GeomError,
    /// Iterates up to the failure.
    pub trace: Vec<LossBreakdown>,
}

impl fmt::Display for RefineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "refinement aborted after {} iterates: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for RefineFailure {}

struct Problem<'a> {
    cloud: &'a PointCloud,
    planes: &'a FacePlanes,
    visible: &'a [FaceId],
    params: &'a LossParams,
    config: &'a RefineConfig,
}

impl Problem<'_> {
    fn size_term(&self, pose: &Pose) -> Result<f64> {
        if !self.config.size_score {
            return Ok(0.0);
        }
        let w = &self.params.weights;
        Ok(w.pc * w.l(5) * pc_size_loss(self.cloud, pose, self.visible, &self.params.size, self.params.bin_seed)?)
    }

    /// Objective and its gradient. With the L1 penalty the value equals the
    /// geometric total.
    fn objective(&self, pose: &Pose) -> Result<(f64, PoseGradient)> {
        let w = &self.params.weights;
        let penalty = self.config.penalty;
        let (pc, g_pc) = pc_pose_loss_grad_with(self.cloud, pose, penalty)?;
        let (bb, [g_r, g_t, g_s]) = bb_pose_loss_grad_with(pose, self.planes, penalty);
        let value = w.pc * w.l(4) * pc
            + w.bb * (w.l(6) * bb.rotation + w.l(7) * bb.translation + w.l(8) * bb.size)
            + self.size_term(pose)?;
        let mut grad = g_pc * (w.pc * w.l(4)) + (g_r * w.l(6) + g_t * w.l(7) + g_s * w.l(8)) * w.bb;
        if self.config.size_score && w.pc * w.l(5) != 0.0 {
            grad += numeric_gradient(|p| self.size_term(p), pose, self.config.size_score_eps)?.gradient();
        }
        if !value.is_finite() {
            return Err(GeomError::NonFinite(format!("objective is {value}")));
        }
        Ok((value, grad))
    }

    fn value(&self, pose: &Pose) -> Result<f64> {
        self.objective(pose).map(|(v, _)| v)
    }

    fn breakdown(&self, pose: &Pose) -> Result<LossBreakdown> {
        let b = geometric_loss(self.cloud, pose, self.planes, self.visible, self.params)?;
        if !b.total.is_finite() {
            return Err(GeomError::NonFinite(format!("loss total is {}", b.total)));
        }
        Ok(b)
    }
}

fn unit_or_zero(v: &Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec3::zeros()
    }
}

/// Descends the geometric consistency terms with the voted planes held
/// fixed. Each iteration moves the parameter blocks (rotation, translation,
/// size) in turn along their normalized negative gradients; rotation steps
/// are applied on the manifold as `exp([ω]×)·R`. With backtracking every
/// block keeps its own step scale, halved until the objective decreases and
/// doubled back after each accepted step, so the objective never increases.
pub fn refine_pose(
    init: &Pose,
    cloud: &PointCloud,
    planes: &FacePlanes,
    visible: &[FaceId],
    params: &LossParams,
    config: &RefineConfig,
) -> std::result::Result<Refinement, RefineFailure> {
    let fail = |error: GeomError, trace: &Vec<LossBreakdown>| RefineFailure { error, trace: trace.clone() };
    let mut trace = Vec::with_capacity(config.iters + 1);
    params.validate().map_err(|e| fail(e, &trace))?;
    config.validate().map_err(|e| fail(e, &trace))?;
    let problem = Problem { cloud, planes, visible, params, config };

    let mut pose = *init;
    trace.push(problem.breakdown(&pose).map_err(|e| fail(e, &trace))?);
    let (mut value, mut grad) = problem.objective(&pose).map_err(|e| fail(e, &trace))?;
    let mut scale = [1.0_f64; 3];
    let mut status = RefineStatus::MaxIters;

    for _ in 0..config.iters {
        let blocks = [grad.rotation, grad.translation, grad.size];
        if blocks.iter().all(|g| *g == Vec3::zeros()) {
            status = RefineStatus::Converged;
            break;
        }
        let mut moved = false;
        for (b, g) in blocks.iter().enumerate() {
            let dir = unit_or_zero(g);
            if dir == Vec3::zeros() || config.step[b] == 0.0 {
                continue;
            }
            loop {
                let mut step = [0.0; 9];
                for k in 0..3 {
                    step[3 * b + k] = -scale[b] * config.step[b] * dir[k];
                }
                // a step that flips a size is treated like an uphill one
                if let Ok(candidate) = perturb(&pose, &step) {
                    let v = problem.value(&candidate).map_err(|e| fail(e, &trace))?;
                    if !config.backtracking || v < value {
                        pose = candidate;
                        value = v;
                        moved = true;
                        if config.backtracking {
                            scale[b] = (scale[b] * 2.0).min(1.0);
                        }
                        break;
                    }
                }
                if !config.backtracking {
                    break;
                }
                scale[b] *= 0.5;
                if scale[b] < config.min_scale {
                    // leave room for the block to move again once the others have
                    scale[b] = config.min_scale;
                    break;
                }
            }
        }
        if !moved {
            status = RefineStatus::Converged;
            break;
        }
        trace.push(problem.breakdown(&pose).map_err(|e| fail(e, &trace))?);
        (value, grad) = problem.objective(&pose).map_err(|e| fail(e, &trace))?;
    }
    Ok(Refinement { pose, trace, status })
}
