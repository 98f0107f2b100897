//! Symmetry-aware reconstruction targets.
//!
//! The target for a point cloud is built by a canonical-frame round trip:
//! map each point into the ground-truth object frame, apply the category's
//! symmetry there, then map the result back through the predicted pose.

use std::f64::consts::TAU;

use crate::error::{GeomError, Result};
use crate::geom::{axis_angle_matrix, is_finite_vec, Pose, PointCloud, Vec3};
use crate::tol;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SymmetryType {
    #[default]
    None,
    /// Mirror symmetry across the canonical plane through the origin with
    /// this unit normal.
    Reflection { normal: Vec3 },
    /// Continuous rotational symmetry about this unit canonical axis.
    Rotational { axis: Vec3 },
}

impl SymmetryType {
    pub fn reflection(normal: Vec3) -> Result<Self> {
        Ok(SymmetryType::Reflection { normal: unit(normal, "reflection normal")? })
    }

    pub fn rotational(axis: Vec3) -> Result<Self> {
        Ok(SymmetryType::Rotational { axis: unit(axis, "symmetry axis")? })
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self {
            SymmetryType::None => return Ok(()),
            SymmetryType::Reflection { normal } => normal,
            SymmetryType::Rotational { axis } => axis,
        };
        if !is_finite_vec(v) || (v.norm() - 1.0).abs() > tol::AXIS_NORM {
            return Err(GeomError::invalid(format!("symmetry direction {v:?} is not unit length")));
        }
        Ok(())
    }
}

fn unit(v: Vec3, what: &str) -> Result<Vec3> {
    let n = v.norm();
    if !is_finite_vec(&v) || n == 0.0 {
        return Err(GeomError::invalid(format!("{what} must be a finite non-zero vector")));
    }
    Ok(v / n)
}

fn reflect(q: &Vec3, normal: &Vec3) -> Vec3 {
    q - normal * (2.0 * normal.dot(q))
}

fn l1_mismatch(rotated: &[Vec3], target: &[Vec3]) -> f64 {
    rotated.iter().zip(target).map(|(a, b)| (a - b).abs().sum()).sum()
}

const GRID_STEPS: usize = 360;
const GOLDEN_TOL: f64 = 1e-12;

/// Angle about `axis` that best aligns `source` with `target` in summed L1
/// distance. One-degree scan followed by golden-section refinement in the
/// bracket around the best grid cell.
pub fn rotational_alignment_angle(source: &[Vec3], target: &[Vec3], axis: &Vec3) -> Result<f64> {
    let cost = |phi: f64| -> Result<f64> {
        let rot = axis_angle_matrix(axis, phi)?;
        let rotated: Vec<Vec3> = source.iter().map(|q| rot * q).collect();
        Ok(l1_mismatch(&rotated, target))
    };
    let step = TAU / GRID_STEPS as f64;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..GRID_STEPS {
        let phi = k as f64 * step;
        let c = cost(phi)?;
        if c < best.0 {
            best = (c, phi);
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = cost(x1)?;
    let mut f2 = cost(x2)?;
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = cost(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = cost(x2)?;
        }
    }
    let refined = 0.5 * (lo + hi);
    Ok(if cost(refined)? <= best.0 { refined } else { best.1 }.rem_euclid(TAU))
}

/// Symmetry-resolved reconstruction target for `cloud`.
///
/// - `None`: points go through the ground-truth frame into the predicted
///   frame unchanged.
/// - `Reflection`: the canonical points are mirrored before mapping back.
/// - `Rotational`: the canonical points are turned about the axis by the
///   angle that best matches the cloud as seen from the predicted frame.
pub fn symmetry_map(cloud: &PointCloud, pred: &Pose, gt: &Pose, sym: &SymmetryType) -> Result<PointCloud> {
    sym.validate()?;
    let canonical: Vec<Vec3> = cloud.points().iter().map(|p| gt.to_canonical(p)).collect();
    let mapped: Vec<Vec3> = match sym {
        SymmetryType::None => canonical,
        SymmetryType::Reflection { normal } => canonical.iter().map(|q| reflect(q, normal)).collect(),
        SymmetryType::Rotational { axis } => {
            let target: Vec<Vec3> = cloud.points().iter().map(|p| pred.to_canonical(p)).collect();
            let phi = rotational_alignment_angle(&canonical, &target, axis)?;
            let rot = axis_angle_matrix(axis, phi)?;
            canonical.iter().map(|q| rot * q).collect()
        }
    };
    PointCloud::new(mapped.iter().map(|q| pred.to_camera(q)).collect())
}

/// `λ2 · mean_j |P_rec_j − ε(P)_j|₁`.
pub fn symmetry_reconstruction_loss(
    reconstruction: &PointCloud,
    cloud: &PointCloud,
    pred: &Pose,
    gt: &Pose,
    sym: &SymmetryType,
    lambda2: f64,
) -> Result<f64> {
    if reconstruction.len() != cloud.len() {
        return Err(GeomError::invalid(format!(
            "reconstruction has {} points, cloud has {}",
            reconstruction.len(),
            cloud.len()
        )));
    }
    let target = symmetry_map(cloud, pred, gt, sym)?;
    let total = l1_mismatch(reconstruction.points(), target.points());
    Ok(lambda2 * total / cloud.len() as f64)
}
