//! Confidence-aware rotation recovery from two predicted plane normals,
//! plus closed-form translation and size assembly.

use std::f64::consts::FRAC_PI_2;

use crate::error::{GeomError, Result};
use crate::geom::{angle_between, rodrigues_rotate, CategoryPrior, Mat3, PointCloud, RotationPrediction, Vec3};
use crate::tol;

/// Orthogonalized normals and the corrections that produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub r_x: Vec3,
    pub r_y: Vec3,
    /// Correction applied to `r_y`, radians.
    pub theta1: f64,
    /// Correction applied to `r_x`, radians.
    pub theta2: f64,
    pub rotation: Mat3,
}

/// Corrects two predicted normals to exact orthogonality.
///
/// The angular defect `θ − π/2` is split between the normals in inverse
/// proportion to their confidences, i.e. the minimizer of
/// `c_y·θ1² + c_x·θ2²` subject to `θ1 + θ2 = θ − π/2`:
/// `θ1 = c_x/(c_x + c_y)·(θ − π/2)` rotates `r_y`, the remainder rotates `r_x`.
/// Both rotations are about `a = r_x × r_y / |r_x × r_y|`; `r_x` turns by
/// `+θ2` and `r_y` by `−θ1`, which closes (or opens) the angle to π/2.
pub fn calibrate(pred: &RotationPrediction) -> Result<CalibrationResult> {
    let (r_x, r_y) = (pred.r_x(), pred.r_y());
    let (c_x, c_y) = (pred.c_x(), pred.c_y());
    let weight = c_x + c_y;
    if !(weight > 0.0) {
        return Err(GeomError::invalid("confidences sum to zero"));
    }
    let cross = r_x.cross(r_y);
    let cross_norm = cross.norm();
    if r_x.dot(r_y).abs() >= 1.0 - tol::PARALLEL || cross_norm == 0.0 {
        return Err(GeomError::degenerate("plane normals are parallel; rotation axis undefined"));
    }
    let axis = cross / cross_norm;
    let theta = angle_between(r_x, r_y)?;
    let defect = theta - FRAC_PI_2;
    let theta1 = c_x / weight * defect;
    let theta2 = defect - theta1;

    let turn = |v: &Vec3, angle: f64| -> Result<Vec3> {
        if angle == 0.0 {
            return Ok(*v);
        }
        Ok(rodrigues_rotate(v, &axis, angle)?.normalize())
    };
    let r_y_cal = turn(r_y, -theta1)?;
    let r_x_cal = turn(r_x, theta2)?;
    let r_z = r_x_cal.cross(&r_y_cal);
    let rotation = Mat3::from_columns(&[r_x_cal, r_y_cal, r_z]);
    Ok(CalibrationResult { r_x: r_x_cal, r_y: r_y_cal, theta1, theta2, rotation })
}

/// Supervision target for a normal's confidence, `exp(−k1·|r − r_gt|²)`.
pub fn rotation_confidence_target(r: &Vec3, r_gt: &Vec3, k1: f64) -> f64 {
    (-k1 * (r - r_gt).norm_squared()).exp()
}

/// `t = t_res + mean(P)`.
pub fn assemble_translation(t_res: &Vec3, cloud: &PointCloud) -> Vec3 {
    t_res + cloud.mean()
}

/// `s = s_res + category mean size`; every component must stay positive.
pub fn assemble_size(s_res: &Vec3, prior: &CategoryPrior) -> Result<Vec3> {
    let s = s_res + prior.mean_size();
    if s.iter().any(|&c| !(c > 0.0)) {
        return Err(GeomError::InvalidSize(format!(
            "assembled size {:?} has a non-positive component",
            s.as_slice()
        )));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::SymmetryType;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn planar(angle_deg: f64) -> Vec3 {
        Vec3::new(deg(angle_deg).cos(), deg(angle_deg).sin(), 0.0)
    }

    #[test]
    fn perpendicular_normals_are_a_fixed_point() {
        for (cx, cy) in [(1.0, 1.0), (0.2, 0.9), (1.0, 0.0)] {
            let pred = RotationPrediction::new(Vec3::x(), Vec3::y(), cx, cy).unwrap();
            let cal = calibrate(&pred).unwrap();
            assert_eq!(cal.r_x, Vec3::x());
            assert_eq!(cal.r_y, Vec3::y());
            assert_eq!(cal.theta1, 0.0);
            assert_eq!(cal.theta2, 0.0);
            assert_eq!(cal.rotation, Mat3::identity());
        }
    }

    #[test]
    fn zero_x_confidence_moves_only_r_x() {
        let r_y = Vec3::new(deg(30.0).sin(), deg(30.0).cos(), 0.0);
        let pred = RotationPrediction::new(Vec3::x(), r_y, 0.0, 1.0).unwrap();
        let cal = calibrate(&pred).unwrap();
        assert_eq!(cal.theta1, 0.0);
        assert!((cal.r_y - pred.r_y()).amax() < 1e-15);
        assert!((cal.theta2 - deg(-30.0)).abs() < 1e-15);
        assert!(cal.r_x.dot(&cal.r_y).abs() < 1e-15);
    }

    /// Oracle: parametrize both calibrated normals by planar angles
    /// (φ for r_x', φ + 90° for r_y') and minimize the weighted squared
    /// displacement from the predictions by dense scan.
    fn planar_oracle(rx_deg: f64, ry_deg: f64, cx: f64, cy: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let steps = 200_000;
        for k in 0..=steps {
            let phi = rx_deg - 45.0 + 90.0 * k as f64 / steps as f64;
            let cost = cy * (phi + 90.0 - ry_deg).powi(2) + cx * (phi - rx_deg).powi(2);
            if cost < best.0 {
                best = (cost, phi);
            }
        }
        best.1
    }

    #[test]
    fn equal_confidences_split_thirty_degrees() {
        let r_y = Vec3::new(deg(30.0).sin(), deg(30.0).cos(), 0.0);
        let pred = RotationPrediction::new(Vec3::x(), r_y, 1.0, 1.0).unwrap();
        let cal = calibrate(&pred).unwrap();
        let phi = planar_oracle(0.0, 60.0, 1.0, 1.0);
        assert!((phi - -15.0).abs() < 1e-3);
        assert!((cal.r_x - planar(phi)).amax() < 1e-5);
        assert!((cal.r_y - planar(phi + 90.0)).amax() < 1e-5);
        assert!((cal.theta1.abs() - deg(15.0)).abs() < 1e-12);
        assert!((cal.theta1 - cal.theta2).abs() < 1e-12);
        assert!(cal.r_x.dot(&cal.r_y).abs() < 1e-15);
    }

    #[test]
    fn unequal_confidences_match_planar_oracle() {
        for &(rx, ry, cx, cy) in &[(10.0, 130.0, 0.3, 0.9), (-20.0, 45.0, 0.8, 0.1), (0.0, 91.0, 0.5, 0.5)] {
            let pred = RotationPrediction::new(planar(rx), planar(ry), cx, cy).unwrap();
            let cal = calibrate(&pred).unwrap();
            let phi = planar_oracle(rx, ry, cx, cy);
            assert!((cal.r_x - planar(phi)).amax() < 1e-5, "{rx} {ry}");
            assert!((cal.r_y - planar(phi + 90.0)).amax() < 1e-5, "{rx} {ry}");
        }
    }

    #[test]
    fn parallel_normals_rejected() {
        // RotationPrediction already rejects exact parallels; calibrate
        // re-checks for predictions built before a tolerance change.
        let near = Vec3::new(1.0, 1e-4, 0.0);
        let pred = RotationPrediction::new(Vec3::x(), near, 1.0, 1.0).unwrap();
        assert!(calibrate(&pred).is_ok());
        assert!(RotationPrediction::new(Vec3::x(), Vec3::new(1.0, 1e-12, 0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_total_confidence_rejected() {
        let pred = RotationPrediction::new(Vec3::x(), planar(80.0), 0.0, 0.0).unwrap();
        assert!(matches!(calibrate(&pred), Err(GeomError::InvalidArgument(_))));
    }

    #[test]
    fn correction_on_r_y_decreases_with_its_confidence() {
        let pred = |cy| RotationPrediction::new(Vec3::x(), planar(70.0), 0.6, cy).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=20 {
            let t1 = calibrate(&pred(k as f64 / 20.0)).unwrap().theta1.abs();
            assert!(t1 < last);
            last = t1;
        }
    }

    #[test]
    fn random_predictions_are_orthogonalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let r_x = Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let r_y = Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5);
            let Ok(pred) = RotationPrediction::new(r_x, r_y, rng.random(), rng.random()) else {
                continue;
            };
            let Ok(cal) = calibrate(&pred) else { continue };
            assert!(cal.r_x.dot(&cal.r_y).abs() < 1e-9);
            assert!(crate::geom::validate_rotation(&cal.rotation).is_ok());
            let theta = angle_between(pred.r_x(), pred.r_y()).unwrap();
            assert!((cal.theta1 + cal.theta2 - (theta - FRAC_PI_2)).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn confidence_target_values() {
        let r = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(rotation_confidence_target(&r, &r, 13.7), 1.0);
        // |r − r_gt|² = 0.1
        let r_gt = Vec3::new(0.1f64.sqrt(), 0.6, 0.8);
        let c = rotation_confidence_target(&r, &r_gt, 13.7);
        assert!((c - (-1.37f64).exp()).abs() < 1e-15);
        assert!((c - 0.2541).abs() < 5e-5);
    }

    #[test]
    fn translation_and_size_assembly() {
        let cloud = PointCloud::new(vec![Vec3::new(0.5, 0.5, 1.0)]).unwrap();
        let t = assemble_translation(&Vec3::new(0.01, 0.0, -0.02), &cloud);
        assert!((t - Vec3::new(0.51, 0.5, 0.98)).amax() < 1e-15);
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 2.0, 3.0), Vec3::new(2.0, 2.0, 3.0)]).unwrap();
        assert_eq!(assemble_translation(&Vec3::zeros(), &cloud), Vec3::new(1.0, 2.0, 3.0));

        let prior = CategoryPrior::new(Vec3::new(0.1, 0.2, 0.3), SymmetryType::None).unwrap();
        assert_eq!(assemble_size(&Vec3::zeros(), &prior).unwrap(), *prior.mean_size());
        let s = assemble_size(&Vec3::new(-0.01, 0.02, 0.0), &prior).unwrap();
        assert!((s - Vec3::new(0.09, 0.22, 0.3)).amax() < 1e-15);
        let err = assemble_size(&Vec3::new(-0.1, 0.0, 0.0), &prior).unwrap_err();
        assert!(matches!(err, GeomError::InvalidSize(_)));
    }
}
