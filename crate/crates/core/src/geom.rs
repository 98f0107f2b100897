//! Geometric primitives shared by every other module.
//!
//! Conventions:
//! - `Mat3` entries are addressed `(row, col)`; anything serialized writes
//!   rows first.
//! - A `Pose` maps canonical object coordinates into the camera frame,
//!   `x_cam = R·x_obj + t`. Columns of `R` are the object axes in camera
//!   coordinates, so `R·e_x = r_x` and `R·e_y = r_y`.
//! - Sizes are full metric extents along the object axes (meters).

use nalgebra::{Matrix3, Vector3};

use crate::error::{GeomError, Result};
use crate::symmetry::SymmetryType;
use crate::tol;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub fn is_finite_vec(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Builds a vector, rejecting NaN and infinite components.
pub fn vec3(x: f64, y: f64, z: f64) -> Result<Vec3> {
    let v = Vec3::new(x, y, z);
    if is_finite_vec(&v) {
        Ok(v)
    } else {
        Err(GeomError::NonFinite(format!("vector ({x}, {y}, {z})")))
    }
}

/// Builds a matrix from rows, rejecting non-finite entries.
pub fn mat3_from_rows(rows: [[f64; 3]; 3]) -> Result<Mat3> {
    let m = Mat3::from_fn(|r, c| rows[r][c]);
    if m.iter().all(|c| c.is_finite()) {
        Ok(m)
    } else {
        Err(GeomError::NonFinite("matrix entry".into()))
    }
}

pub fn mat3_rows(m: &Mat3) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn check_unit_axis(axis: &Vec3) -> Result<()> {
    if !is_finite_vec(axis) {
        return Err(GeomError::NonFinite("rotation axis".into()));
    }
    if (axis.norm() - 1.0).abs() > tol::AXIS_NORM {
        return Err(GeomError::invalid(format!(
            "rotation axis must be unit length, got norm {}",
            axis.norm()
        )));
    }
    Ok(())
}

/// Rotates `v` by `angle` radians about the unit `axis` (right-handed).
pub fn rodrigues_rotate(v: &Vec3, axis: &Vec3, angle: f64) -> Result<Vec3> {
    check_unit_axis(axis)?;
    let (sin, cos) = angle.sin_cos();
    Ok(v * cos + axis.cross(v) * sin + axis * (axis.dot(v) * (1.0 - cos)))
}

/// Matrix form of [`rodrigues_rotate`].
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Result<Mat3> {
    check_unit_axis(axis)?;
    let (sin, cos) = angle.sin_cos();
    let k = skew(axis);
    Ok(Mat3::identity() + k * sin + k * k * (1.0 - cos))
}

/// Exponential map from a rotation vector (axis scaled by angle) to SO(3).
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    let angle = omega.norm();
    if angle < 1e-12 {
        // first order is exact to machine precision here
        return Mat3::identity() + skew(omega);
    }
    let axis = omega / angle;
    let (sin, cos) = angle.sin_cos();
    let k = skew(&axis);
    Mat3::identity() + k * sin + k * k * (1.0 - cos)
}

/// Angle of the rotation `R`, in `[0, π]`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let skew_part = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin2 = skew_part.norm();
    let cos2 = r.trace() - 1.0;
    (sin2 * 0.5).atan2(cos2 * 0.5)
}

/// Geodesic distance between two rotations, radians.
pub fn geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// Angle between two non-zero vectors in `[0, π]`, via `atan2(|a×b|, a·b)`.
pub fn angle_between(a: &Vec3, b: &Vec3) -> Result<f64> {
    if !is_finite_vec(a) || !is_finite_vec(b) {
        return Err(GeomError::NonFinite("angle_between input".into()));
    }
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(GeomError::invalid("angle_between of a zero vector"));
    }
    Ok(a.cross(b).norm().atan2(a.dot(b)))
}

/// Checks orthonormality and determinant of a candidate rotation.
pub fn validate_rotation(r: &Mat3) -> Result<()> {
    if !r.iter().all(|c| c.is_finite()) {
        return Err(GeomError::NonFinite("rotation entry".into()));
    }
    let deviation = (r.transpose() * r - Mat3::identity()).amax();
    if deviation >= tol::ORTHONORMAL {
        return Err(GeomError::invalid(format!(
            "rotation not orthonormal (max |RᵀR − I| = {deviation:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol::DETERMINANT {
        return Err(GeomError::invalid(format!("rotation determinant {det}")));
    }
    Ok(())
}

/// Projects an approximately orthonormal matrix onto SO(3) (polar factor).
pub fn orthonormalize(m: &Mat3) -> Result<Mat3> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeomError::degenerate("svd failed to converge")),
    };
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(u * d * v_t)
}

/// Rigid transform plus metric size of one object instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
    size: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3, size: Vec3) -> Result<Self> {
        validate_rotation(&rotation)?;
        if !is_finite_vec(&translation) {
            return Err(GeomError::NonFinite("translation".into()));
        }
        if !is_finite_vec(&size) {
            return Err(GeomError::NonFinite("size".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(GeomError::InvalidSize(format!(
                "size components must be positive, got {:?}",
                size.as_slice()
            )));
        }
        Ok(Pose { rotation, translation, size })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn size(&self) -> &Vec3 {
        &self.size
    }

    pub fn with_translation(&self, t: Vec3) -> Result<Self> {
        Pose::new(self.rotation, t, self.size)
    }

    pub fn with_rotation(&self, r: Mat3) -> Result<Self> {
        Pose::new(r, self.translation, self.size)
    }

    pub fn with_size(&self, s: Vec3) -> Result<Self> {
        Pose::new(self.rotation, self.translation, s)
    }

    /// Camera point to canonical coordinates, `Rᵀ(p − t)`.
    pub fn to_canonical(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.translation))
    }

    /// Canonical coordinates to camera frame, `R·q + t`.
    pub fn to_camera(&self, q: &Vec3) -> Vec3 {
        self.rotation * q + self.translation
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// True when `p` (camera frame) lies in the closed box.
    pub fn contains(&self, p: &Vec3) -> bool {
        let q = self.to_canonical(p);
        (0..3).all(|i| q[i].abs() <= 0.5 * self.size[i])
    }
}

/// Two predicted plane normals with their confidences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationPrediction {
    r_x: Vec3,
    r_y: Vec3,
    c_x: f64,
    c_y: f64,
}

impl RotationPrediction {
    /// Normalizes both normals. Confidences must lie in `[0, 1]`.
    pub fn new(r_x: Vec3, r_y: Vec3, c_x: f64, c_y: f64) -> Result<Self> {
        if !is_finite_vec(&r_x) || !is_finite_vec(&r_y) {
            return Err(GeomError::NonFinite("plane normal".into()));
        }
        let (nx, ny) = (r_x.norm(), r_y.norm());
        if nx == 0.0 || ny == 0.0 {
            return Err(GeomError::invalid("zero-length plane normal"));
        }
        for (name, c) in [("c_x", c_x), ("c_y", c_y)] {
            if !(0.0..=1.0).contains(&c) {
                return Err(GeomError::invalid(format!("{name} = {c} outside [0, 1]")));
            }
        }
        let r_x = r_x / nx;
        let r_y = r_y / ny;
        if r_x.dot(&r_y).abs() >= 1.0 - tol::PARALLEL {
            return Err(GeomError::degenerate("plane normals are parallel"));
        }
        Ok(RotationPrediction { r_x, r_y, c_x, c_y })
    }

    pub fn r_x(&self) -> &Vec3 {
        &self.r_x
    }

    pub fn r_y(&self) -> &Vec3 {
        &self.r_y
    }

    pub fn c_x(&self) -> f64 {
        self.c_x
    }

    pub fn c_y(&self) -> f64 {
        self.c_y
    }
}

/// Per-category mean size and symmetry description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryPrior {
    mean_size: Vec3,
    symmetry: SymmetryType,
}

impl CategoryPrior {
    pub fn new(mean_size: Vec3, symmetry: SymmetryType) -> Result<Self> {
        if !is_finite_vec(&mean_size) || mean_size.iter().any(|&s| s <= 0.0) {
            return Err(GeomError::InvalidSize(format!(
                "category mean size must be positive, got {:?}",
                mean_size.as_slice()
            )));
        }
        symmetry.validate()?;
        Ok(CategoryPrior { mean_size, symmetry })
    }

    pub fn mean_size(&self) -> &Vec3 {
        &self.mean_size
    }

    pub fn symmetry(&self) -> &SymmetryType {
        &self.symmetry
    }
}

/// Camera-frame points, optionally paired with canonical correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    canonical: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeomError::invalid("point cloud is empty"));
        }
        if let Some(i) = points.iter().position(|p| !is_finite_vec(p)) {
            return Err(GeomError::NonFinite(format!("point {i}")));
        }
        Ok(PointCloud { points, canonical: None })
    }

    pub fn with_canonical(points: Vec<Vec3>, canonical: Vec<Vec3>) -> Result<Self> {
        let mut cloud = PointCloud::new(points)?;
        if canonical.len() != cloud.points.len() {
            return Err(GeomError::invalid(format!(
                "{} canonical correspondences for {} points",
                canonical.len(),
                cloud.points.len()
            )));
        }
        if let Some(i) = canonical.iter().position(|p| !is_finite_vec(p)) {
            return Err(GeomError::NonFinite(format!("canonical point {i}")));
        }
        cloud.canonical = Some(canonical);
        Ok(cloud)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn canonical(&self) -> Option<&[Vec3]> {
        self.canonical.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Vec3 {
        point_cloud_mean(self)
    }
}

/// Arithmetic mean of the cloud's points.
pub fn point_cloud_mean(cloud: &PointCloud) -> Vec3 {
    let sum = cloud.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / cloud.points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: &Vec3, b: &Vec3, eps: f64) -> bool {
        (a - b).amax() < eps
    }

    #[test]
    fn rodrigues_examples() {
        let z = Vec3::z();
        let x = Vec3::x();
        assert!(close(&rodrigues_rotate(&x, &z, 0.0).unwrap(), &x, 1e-15));
        assert!(close(&rodrigues_rotate(&x, &z, FRAC_PI_2).unwrap(), &Vec3::y(), 1e-15));
        // (1,1,0)/√2 is at 45°; another 45° lands on +y
        let v = Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
        let out = rodrigues_rotate(&v, &z, FRAC_PI_4).unwrap();
        assert!(close(&out, &Vec3::y(), 1e-15), "{out}");
    }

    #[test]
    fn rodrigues_rejects_non_unit_axis() {
        let err = rodrigues_rotate(&Vec3::x(), &Vec3::new(0.0, 0.0, 2.0), 1.0).unwrap_err();
        assert!(matches!(err, GeomError::InvalidArgument(_)));
    }

    #[test]
    fn axis_angle_matrix_agrees_with_nalgebra() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        let ours = axis_angle_matrix(&axis, 1.1).unwrap();
        let theirs = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), 1.1);
        assert!((ours - theirs.matrix()).amax() < 1e-14);
        assert!((exp_so3(&(axis * 1.1)) - ours).amax() < 1e-14);
    }

    #[test]
    fn angle_between_examples() {
        assert!((angle_between(&Vec3::x(), &Vec3::y()).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(angle_between(&Vec3::x(), &Vec3::x()).unwrap(), 0.0);
        let a = angle_between(&Vec3::x(), &Vec3::new(1.0, 1.0, 0.0)).unwrap();
        assert!((a - FRAC_PI_4).abs() < 1e-15);
        assert!((angle_between(&Vec3::x(), &-Vec3::x()).unwrap() - PI).abs() < 1e-15);
        assert!(angle_between(&Vec3::zeros(), &Vec3::x()).is_err());
    }

    #[test]
    fn angle_between_resolves_tiny_angles() {
        // acos(dot) collapses to 0 for angles below ~1e-8; atan2 does not
        let b = Vec3::new(1.0, 1e-10, 0.0);
        let a = angle_between(&Vec3::x(), &b).unwrap();
        assert!((a - 1e-10).abs() < 1e-20);
    }

    #[test]
    fn rotation_angle_near_pi() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        for angle in [PI, PI - 1e-7, 3.0, 0.5, 1e-9] {
            let r = axis_angle_matrix(&axis, angle).unwrap();
            assert!((rotation_angle(&r) - angle).abs() < 1e-8, "{angle}");
        }
    }

    #[test]
    fn pose_validation() {
        let s = Vec3::new(1.0, 1.0, 1.0);
        assert!(Pose::new(Mat3::identity(), Vec3::zeros(), s).is_ok());
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vec3::zeros(), s).is_err());
        let scaled = Mat3::identity() * 1.001;
        assert!(Pose::new(scaled, Vec3::zeros(), s).is_err());
        let err = Pose::new(Mat3::identity(), Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0)).unwrap_err();
        assert!(matches!(err, GeomError::InvalidSize(_)));
        assert!(Pose::new(Mat3::identity(), Vec3::new(f64::NAN, 0.0, 0.0), s).is_err());
    }

    #[test]
    fn prediction_normalizes_and_rejects_parallel() {
        let p = RotationPrediction::new(Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 3.0, 0.0), 0.5, 1.0)
            .unwrap();
        assert!((p.r_x().norm() - 1.0).abs() < tol::UNIT_NORM);
        assert!((p.r_y().norm() - 1.0).abs() < tol::UNIT_NORM);
        let err = RotationPrediction::new(Vec3::x(), Vec3::x() * 5.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, GeomError::Degenerate(_)));
        assert!(RotationPrediction::new(Vec3::x(), Vec3::y(), 1.5, 1.0).is_err());
    }

    #[test]
    fn mean_examples() {
        let c = PointCloud::new(vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        assert_eq!(c.mean(), Vec3::new(1.0, 0.0, 0.0));
        let c = PointCloud::new(vec![Vec3::new(1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(c.mean(), Vec3::new(1.0, 1.0, 1.0));
        assert!(PointCloud::new(vec![]).is_err());
    }

    #[test]
    fn mean_of_uniform_cube_samples() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let center = Vec3::new(0.3, -1.2, 2.0);
        // uniform on [-0.5, 0.5]: σ = 1/√12 per axis
        let bound = 3.0 / 12f64.sqrt() / (1028f64).sqrt();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..1028)
                .map(|_| center + Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5))
                .collect();
            let m = PointCloud::new(pts).unwrap().mean();
            assert!((m - center).amax() < bound, "seed {seed}: {m}");
        }
    }

    proptest::proptest! {
        #[test]
        fn rodrigues_preserves_norm_and_composes(
            v in proptest::array::uniform3(-10.0f64..10.0),
            a in proptest::array::uniform3(-1.0f64..1.0),
            alpha in -7.0f64..7.0,
            beta in -7.0f64..7.0,
        ) {
            let axis = Vec3::from(a);
            proptest::prop_assume!(axis.norm() > 1e-3);
            let axis = axis.normalize();
            let v = Vec3::from(v);
            let once = rodrigues_rotate(&v, &axis, alpha).unwrap();
            proptest::prop_assert!((once.norm() - v.norm()).abs() < 1e-12 * (1.0 + v.norm()));
            let twice = rodrigues_rotate(&once, &axis, beta).unwrap();
            let direct = rodrigues_rotate(&v, &axis, alpha + beta).unwrap();
            proptest::prop_assert!((twice - direct).amax() < 1e-9);
        }

        #[test]
        fn angle_between_symmetric_and_scale_invariant(
            a in proptest::array::uniform3(-5.0f64..5.0),
            b in proptest::array::uniform3(-5.0f64..5.0),
            k in 0.01f64..100.0,
        ) {
            let (a, b) = (Vec3::from(a), Vec3::from(b));
            proptest::prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let ab = angle_between(&a, &b).unwrap();
            proptest::prop_assert!((0.0..=PI).contains(&ab));
            proptest::prop_assert!((ab - angle_between(&b, &a).unwrap()).abs() < 1e-15);
            proptest::prop_assert!((ab - angle_between(&(a * k), &b).unwrap()).abs() < 1e-14);
        }
    }
}
