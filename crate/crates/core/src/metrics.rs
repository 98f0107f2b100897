//! Pose and box evaluation metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{angle_between, axis_angle_matrix, geodesic_angle, skew, Mat3, Pose, Vec3};
use crate::symmetry::SymmetryType;

/// (degrees, centimeters) pairs reported by default.
pub const POSE_THRESHOLDS: [(f64, f64); 4] = [(5.0, 2.0), (5.0, 5.0), (10.0, 5.0), (10.0, 10.0)];

/// IoU thresholds reported by default.
pub const IOU_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

pub const DEFAULT_IOU_SAMPLES: usize = 100_000;

/// Rotation error in degrees, reduced by the category symmetry.
///
/// Rotational symmetry takes the minimum over spins about the axis, which is
/// the angle between the two images of the axis. Reflection symmetry maps a
/// proper rotation to an improper one, so no rotation is equivalent and the
/// plain geodesic is used.
pub fn rotation_error(r_pred: &Mat3, r_gt: &Mat3, sym: &SymmetryType) -> f64 {
    let rad = match sym {
        SymmetryType::Rotational { axis } => {
            angle_between(&(r_pred * axis), &(r_gt * axis)).unwrap_or_else(|_| geodesic_angle(r_pred, r_gt))
        }
        SymmetryType::None | SymmetryType::Reflection { .. } => geodesic_angle(r_pred, r_gt),
    };
    rad.to_degrees()
}

/// Spin of `r_gt` about its canonical `axis` that brings it closest to
/// `r_pred`: `argmax_φ tr(R_predᵀ·R_gt·Rot(a, φ))`.
pub fn align_about_axis(r_pred: &Mat3, r_gt: &Mat3, axis: &Vec3) -> Result<Mat3> {
    let m = r_pred.transpose() * r_gt;
    let a_m_a = axis.dot(&(m * axis));
    let cos_coeff = m.trace() - a_m_a;
    let sin_coeff = (m * skew(axis)).trace();
    let phi = sin_coeff.atan2(cos_coeff);
    Ok(r_gt * axis_angle_matrix(axis, phi)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_m: f64,
}

pub fn pose_error(pred: &Pose, gt: &Pose, sym: &SymmetryType) -> PoseError {
    PoseError {
        rotation_deg: rotation_error(pred.rotation(), gt.rotation(), sym),
        translation_m: (pred.translation() - gt.translation()).norm(),
    }
}

/// Fraction of errors strictly below both thresholds.
pub fn pose_accuracy(errors: &[PoseError], deg_thresh: f64, cm_thresh: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(GeomError::invalid("pose_accuracy of an empty list"));
    }
    let hits = errors
        .iter()
        .filter(|e| e.rotation_deg < deg_thresh && e.translation_m * 100.0 < cm_thresh)
        .count();
    Ok(hits as f64 / errors.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouEstimate {
    pub iou: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Monte-Carlo IoU of two oriented boxes. Samples uniformly in `a`,
/// estimates the overlap volume from the hit rate and combines it with the
/// exact volumes. The standard error is the delta-method propagation of the
/// binomial hit-rate error.
pub fn iou_3d(a: &Pose, b: &Pose, samples: usize, seed: u64) -> Result<IouEstimate> {
    if samples == 0 {
        return Err(GeomError::invalid("iou_3d needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = a.size() * 0.5;
    let hits = (0..samples)
        .filter(|_| {
            let q = Vec3::from_fn(|i, _| rng.random_range(-half[i]..=half[i]));
            b.contains(&a.to_camera(&q))
        })
        .count();
    let (va, vb) = (a.volume(), b.volume());
    let n = samples as f64;
    let f = hits as f64 / n;
    let inter = f * va;
    let union = va + vb - inter;
    let iou = inter / union;
    let d_iou_d_inter = (va + vb) / (union * union);
    let std_err = d_iou_d_inter * va * (f * (1.0 - f) / n).sqrt();
    Ok(IouEstimate { iou, std_err, samples })
}

/// IoU after spinning the ground-truth box about its symmetry axis to best
/// match the prediction. Other symmetry types use the boxes as given.
pub fn symmetric_iou(pred: &Pose, gt: &Pose, sym: &SymmetryType, samples: usize, seed: u64) -> Result<IouEstimate> {
    let gt = match sym {
        SymmetryType::Rotational { axis } => gt.with_rotation(align_about_axis(pred.rotation(), gt.rotation(), axis)?)?,
        _ => *gt,
    };
    iou_3d(pred, &gt, samples, seed)
}

/// Fraction of IoU values at or above `threshold`.
pub fn iou_precision(ious: &[f64], threshold: f64) -> Result<f64> {
    if ious.is_empty() {
        return Err(GeomError::invalid("iou_precision of an empty list"));
    }
    Ok(ious.iter().filter(|&&v| v >= threshold).count() as f64 / ious.len() as f64)
}
