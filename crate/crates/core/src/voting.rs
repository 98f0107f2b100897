//! Point-wise bounding-box face voting.
//!
//! Every point votes for each of the six box faces with a direction, a
//! distance and a confidence. Projected votes are fitted with a
//! confidence-weighted total-least-squares plane per face, and the six
//! planes are turned back into an oriented box.

use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;

use crate::error::{GeomError, Result};
use crate::geom::{is_finite_vec, orthonormalize, Mat3, PointCloud, Pose, Vec3};
use crate::tol;

/// One of the six faces of an object's bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaceId {
    YPos,
    YNeg,
    XPos,
    XNeg,
    ZPos,
    ZNeg,
}

impl FaceId {
    pub const ALL: [FaceId; 6] = [FaceId::YPos, FaceId::YNeg, FaceId::XPos, FaceId::XNeg, FaceId::ZPos, FaceId::ZNeg];

    /// Canonical axis index, x = 0, y = 1, z = 2.
    pub fn axis(self) -> usize {
        match self {
            FaceId::XPos | FaceId::XNeg => 0,
            FaceId::YPos | FaceId::YNeg => 1,
            FaceId::ZPos | FaceId::ZNeg => 2,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            FaceId::XPos | FaceId::YPos | FaceId::ZPos => 1.0,
            _ => -1.0,
        }
    }

    pub fn positive(axis: usize) -> FaceId {
        [FaceId::XPos, FaceId::YPos, FaceId::ZPos][axis]
    }

    pub fn negative(axis: usize) -> FaceId {
        [FaceId::XNeg, FaceId::YNeg, FaceId::ZNeg][axis]
    }

    pub fn opposite(self) -> FaceId {
        if self.sign() > 0.0 {
            FaceId::negative(self.axis())
        } else {
            FaceId::positive(self.axis())
        }
    }

    /// Position in [`FaceId::ALL`].
    pub fn index(self) -> usize {
        FaceId::ALL.iter().position(|&f| f == self).unwrap_or(0)
    }

    /// Outward face normal in the canonical frame.
    pub fn canonical_normal(self) -> Vec3 {
        let mut n = Vec3::zeros();
        n[self.axis()] = self.sign();
        n
    }

    /// Outward face normal in the camera frame for the given pose.
    pub fn normal_in(self, pose: &Pose) -> Vec3 {
        pose.rotation().column(self.axis()) * self.sign()
    }

    pub fn label(self) -> &'static str {
        match self {
            FaceId::XPos => "x+",
            FaceId::XNeg => "x-",
            FaceId::YPos => "y+",
            FaceId::YNeg => "y-",
            FaceId::ZPos => "z+",
            FaceId::ZNeg => "z-",
        }
    }
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FaceId {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self> {
        FaceId::ALL
            .into_iter()
            .find(|f| f.label() == s)
            .ok_or_else(|| GeomError::invalid(format!("unknown face `{s}`")))
    }
}

/// A single point's vote for one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vote {
    pub direction: Vec3,
    pub distance: f64,
    pub confidence: f64,
}

/// Votes of every point for every face, indexed `[face][point]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVoteSet {
    votes: [Vec<Vote>; 6],
}

impl FaceVoteSet {
    /// `votes` is ordered like [`FaceId::ALL`].
    pub fn new(votes: [Vec<Vote>; 6]) -> Result<Self> {
        let n = votes[0].len();
        if n == 0 {
            return Err(GeomError::invalid("vote set is empty"));
        }
        for (face, list) in FaceId::ALL.iter().zip(&votes) {
            if list.len() != n {
                return Err(GeomError::invalid(format!("face {face} has {} votes, expected {n}", list.len())));
            }
            for (j, v) in list.iter().enumerate() {
                if !is_finite_vec(&v.direction) || !v.distance.is_finite() || !v.confidence.is_finite() {
                    return Err(GeomError::NonFinite(format!("vote {j} for face {face}")));
                }
                if (v.direction.norm() - 1.0).abs() > tol::AXIS_NORM {
                    return Err(GeomError::invalid(format!("vote {j} for face {face} has non-unit direction")));
                }
                if v.distance < 0.0 {
                    return Err(GeomError::invalid(format!("vote {j} for face {face} has negative distance")));
                }
                if !(0.0..=1.0).contains(&v.confidence) {
                    return Err(GeomError::invalid(format!("vote {j} for face {face} has confidence outside [0, 1]")));
                }
            }
        }
        Ok(FaceVoteSet { votes })
    }

    pub fn len(&self) -> usize {
        self.votes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes[0].is_empty()
    }

    pub fn face(&self, face: FaceId) -> &[Vote] {
        &self.votes[face.index()]
    }

    pub fn into_inner(self) -> [Vec<Vote>; 6] {
        self.votes
    }

    /// Same votes with every confidence replaced by `f(face, point, vote)`.
    pub fn map_confidences(&self, mut f: impl FnMut(FaceId, usize, &Vote) -> f64) -> Result<Self> {
        let mut votes = self.votes.clone();
        for face in FaceId::ALL {
            for (j, v) in votes[face.index()].iter_mut().enumerate() {
                v.confidence = f(face, j, v);
            }
        }
        FaceVoteSet::new(votes)
    }
}

/// Plane `N·x = D` with unit normal `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams {
    pub normal: Vec3,
    pub distance: f64,
}

impl PlaneParams {
    pub fn new(normal: Vec3, distance: f64) -> Result<Self> {
        if !is_finite_vec(&normal) || !distance.is_finite() {
            return Err(GeomError::NonFinite("plane parameters".into()));
        }
        if (normal.norm() - 1.0).abs() > tol::AXIS_NORM {
            return Err(GeomError::invalid("plane normal is not unit length"));
        }
        Ok(PlaneParams { normal, distance })
    }

    /// Signed distance of `p` from the plane, positive on the normal side.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.distance
    }

    /// Same plane with the opposite orientation, `(−N, −D)`.
    pub fn flipped(&self) -> Self {
        PlaneParams { normal: -self.normal, distance: -self.distance }
    }

    /// The face plane of `pose`'s box, outward oriented.
    pub fn of_box_face(pose: &Pose, face: FaceId) -> Self {
        let normal = face.normal_in(pose);
        let distance = normal.dot(pose.translation()) + 0.5 * pose.size()[face.axis()];
        PlaneParams { normal, distance }
    }
}

/// Six face planes, one per [`FaceId`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacePlanes([PlaneParams; 6]);

impl FacePlanes {
    pub fn new(planes: [PlaneParams; 6]) -> Self {
        FacePlanes(planes)
    }

    /// Collects exactly one plane per face; a missing face is an error.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (FaceId, PlaneParams)>) -> Result<Self> {
        let mut slots: [Option<PlaneParams>; 6] = [None; 6];
        for (face, plane) in pairs {
            slots[face.index()] = Some(plane);
        }
        let mut planes = [PlaneParams { normal: Vec3::zeros(), distance: 0.0 }; 6];
        for face in FaceId::ALL {
            planes[face.index()] =
                slots[face.index()].ok_or_else(|| GeomError::invalid(format!("missing plane for face {face}")))?;
        }
        Ok(FacePlanes(planes))
    }

    /// Exact planes of a posed box.
    pub fn of_pose(pose: &Pose) -> Self {
        FacePlanes(FaceId::ALL.map(|f| PlaneParams::of_box_face(pose, f)))
    }

    pub fn get(&self, face: FaceId) -> &PlaneParams {
        &self.0[face.index()]
    }

    pub fn set(&mut self, face: FaceId, plane: PlaneParams) {
        self.0[face.index()] = plane;
    }

    pub fn iter(&self) -> impl Iterator<Item = (FaceId, &PlaneParams)> {
        FaceId::ALL.into_iter().zip(self.0.iter())
    }
}

/// `p'_j = p_j + n_j·d_j` for one face.
pub fn project_votes(cloud: &PointCloud, votes: &FaceVoteSet, face: FaceId) -> Result<Vec<Vec3>> {
    if cloud.len() != votes.len() {
        return Err(GeomError::invalid(format!(
            "{} votes for {} points",
            votes.len(),
            cloud.len()
        )));
    }
    Ok(cloud
        .points()
        .iter()
        .zip(votes.face(face))
        .map(|(p, v)| p + v.direction * v.distance)
        .collect())
}

/// Confidence-weighted total-least-squares plane through `points`.
///
/// Minimizes `Σ w_j (N·p_j − D)²` over unit `N`: the normal is the
/// eigenvector of the smallest eigenvalue of the weighted scatter about the
/// weighted centroid. The sign of `N` is chosen so that `N·orientation ≥ 0`.
pub fn fit_plane_weighted(points: &[Vec3], weights: &[f64], orientation: &Vec3) -> Result<PlaneParams> {
    if points.len() != weights.len() {
        return Err(GeomError::invalid(format!("{} weights for {} points", weights.len(), points.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(GeomError::invalid("plane-fit weights must be finite and non-negative"));
    }
    let support = weights.iter().filter(|&&w| w > tol::MIN_EFFECTIVE_WEIGHT).count();
    if support < tol::MIN_PLANE_SUPPORT {
        return Err(GeomError::degenerate(format!(
            "plane fit needs {} weighted points, got {support}",
            tol::MIN_PLANE_SUPPORT
        )));
    }
    let total: f64 = weights.iter().sum();
    let centroid = points
        .iter()
        .zip(weights)
        .fold(Vec3::zeros(), |acc, (p, w)| acc + p * (w / total));
    let scatter = points.iter().zip(weights).fold(Mat3::zeros(), |acc, (p, w)| {
        let d = p - centroid;
        acc + d * d.transpose() * (w / total)
    });

    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, largest) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if largest <= 0.0 || mid <= tol::RANK_DEFICIENT * largest {
        return Err(GeomError::degenerate("plane support is collinear or coincident"));
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).normalize();
    if normal.dot(orientation) < 0.0 {
        normal = -normal;
    }
    Ok(PlaneParams { normal, distance: normal.dot(&centroid) })
}

/// Ground-truth distance of `p` to `face`, measured inward along the face
/// normal in the canonical frame: `s[i]/2 − sign(i)·(Rᵀ(p − t))[i]`.
pub fn face_distance(p: &Vec3, face: FaceId, gt: &Pose) -> f64 {
    let q = gt.to_canonical(p);
    0.5 * gt.size()[face.axis()] - face.sign() * q[face.axis()]
}

/// Supervision target for a vote's confidence,
/// `exp(−|d·n − f·r_gt| / k2)` with `f` from [`face_distance`] and `r_gt`
/// the outward ground-truth face normal.
pub fn vote_confidence_target(distance: f64, direction: &Vec3, p: &Vec3, face: FaceId, gt: &Pose, k2: f64) -> f64 {
    let f = face_distance(p, face, gt);
    let residual = (direction * distance - face.normal_in(gt) * f).norm();
    (-residual / k2).exp().clamp(f64::MIN_POSITIVE, 1.0)
}

/// Oriented box recovered from six face planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxEstimate {
    pub center: Vec3,
    pub extents: Vec3,
    /// Columns are the x, y, z box axes.
    pub axes: Mat3,
}

impl BoxEstimate {
    pub fn to_pose(&self) -> Result<Pose> {
        Pose::new(self.axes, self.center, self.extents)
    }
}

/// Center, extents and axes of the box bounded by six face planes.
///
/// Per axis the two opposite normals are averaged into one direction `n`;
/// the extent is the gap between the faces along `n` and the mid-plane sits
/// halfway. The center is the intersection of the three mid-planes and the
/// axes are the averaged normals projected onto SO(3).
pub fn recover_box(planes: &FacePlanes) -> Result<BoxEstimate> {
    let max_angle = tol::OPPOSITE_FACE_ANGLE_DEG.to_radians();
    let mut normals = [Vec3::zeros(); 3];
    let mut mids = Vec3::zeros();
    let mut extents = Vec3::zeros();
    for axis in 0..3 {
        let plus = planes.get(FaceId::positive(axis));
        let minus = planes.get(FaceId::negative(axis));
        let cos = -plus.normal.dot(&minus.normal);
        if cos < max_angle.cos() {
            return Err(GeomError::degenerate(format!(
                "faces {} and {} are not opposite (angle {:.2}°)",
                FaceId::positive(axis),
                FaceId::negative(axis),
                (-cos).clamp(-1.0, 1.0).acos().to_degrees()
            )));
        }
        normals[axis] = (plus.normal - minus.normal).normalize();
        // plus: n·x = D+ ; minus written along n: n·x = −D−
        extents[axis] = (plus.distance + minus.distance).abs();
        mids[axis] = 0.5 * (plus.distance - minus.distance);
    }
    let rows = Mat3::from_rows(&[normals[0].transpose(), normals[1].transpose(), normals[2].transpose()]);
    let det = rows.determinant();
    if det.abs() < 1e-3 {
        return Err(GeomError::degenerate("box mid-planes are nearly parallel"));
    }
    if det < 0.0 {
        return Err(GeomError::degenerate("face normals form a left-handed frame"));
    }
    let center = rows
        .lu()
        .solve(&mids)
        .ok_or_else(|| GeomError::degenerate("mid-plane intersection is singular"))?;
    let axes = orthonormalize(&Mat3::from_columns(&normals))?;
    if extents.iter().any(|&e| !(e > 0.0)) {
        return Err(GeomError::degenerate("recovered box has zero extent"));
    }
    Ok(BoxEstimate { center, extents, axes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::axis_angle_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn unit_cube() -> Pose {
        Pose::new(Mat3::identity(), Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn face_labels_round_trip() {
        for f in FaceId::ALL {
            assert_eq!(f.label().parse::<FaceId>().unwrap(), f);
            assert_eq!(f.opposite().opposite(), f);
            assert_eq!(FaceId::ALL[f.index()], f);
        }
        assert!("w+".parse::<FaceId>().is_err());
    }

    #[test]
    fn projection_examples() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        let mk = |d| Vote { direction: Vec3::y(), distance: d, confidence: 1.0 };
        let votes = FaceVoteSet::new(std::array::from_fn(|_| vec![mk(0.5), mk(0.0)])).unwrap();
        let projected = project_votes(&cloud, &votes, FaceId::YPos).unwrap();
        assert_eq!(projected[0], Vec3::new(0.0, 0.5, 0.0));
        assert_eq!(projected[1], cloud.points()[1]);

        let short = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(project_votes(&short, &votes, FaceId::YPos).is_err());
    }

    #[test]
    fn exact_plane_and_zero_weight_outlier() {
        let pts = vec![
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        let plane = fit_plane_weighted(&pts, &[1.0; 4], &Vec3::y()).unwrap();
        assert!((plane.normal - Vec3::y()).amax() < 1e-12);
        assert!((plane.distance - 1.0).abs() < 1e-12);

        let mut with_outlier = pts.clone();
        with_outlier.push(Vec3::new(0.0, 5.0, 0.0));
        let same = fit_plane_weighted(&with_outlier, &[1.0, 1.0, 1.0, 1.0, 0.0], &Vec3::y()).unwrap();
        assert!((same.normal - plane.normal).amax() <= 1e-12);
        assert!((same.distance - plane.distance).abs() <= 1e-12);
    }

    #[test]
    fn orientation_hint_sets_sign() {
        let pts = [Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 1.0)];
        let down = fit_plane_weighted(&pts, &[1.0; 3], &-Vec3::y()).unwrap();
        assert!((down.normal + Vec3::y()).amax() < 1e-12);
        assert!((down.distance + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_supports_rejected() {
        let line = [Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0, Vec3::x() * 3.0];
        assert!(matches!(fit_plane_weighted(&line, &[1.0; 4], &Vec3::y()), Err(GeomError::Degenerate(_))));
        let pts = [Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let weights = [1.0, 1.0, 1e-9, 0.0];
        assert!(matches!(fit_plane_weighted(&pts, &weights, &Vec3::y()), Err(GeomError::Degenerate(_))));
        assert!(fit_plane_weighted(&pts, &[1.0, -1.0, 1.0, 1.0], &Vec3::y()).is_err());
        assert!(fit_plane_weighted(&pts, &[1.0; 3], &Vec3::y()).is_err());
    }

    /// Oracle: SVD of the √w-scaled centered data matrix. The right
    /// singular vector of the smallest singular value is the TLS normal.
    fn svd_oracle(points: &[Vec3], weights: &[f64]) -> (Vec3, f64) {
        let total: f64 = weights.iter().sum();
        let mut c = Vec3::zeros();
        for (p, w) in points.iter().zip(weights) {
            c += p * *w;
        }
        c /= total;
        let data = nalgebra::DMatrix::from_fn(points.len(), 3, |r, k| weights[r].sqrt() * (points[r][k] - c[k]));
        let svd = data.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |a, (i, &s)| if s < a.1 { (i, s) } else { a });
        let n = Vec3::new(v_t[(imin, 0)], v_t[(imin, 1)], v_t[(imin, 2)]).normalize();
        (n, n.dot(&c))
    }

    fn noisy_plane(seed: u64) -> (Vec<Vec3>, Vec<f64>, Vec3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5).normalize();
        let d = rng.random::<f64>() - 0.5;
        let u = normal.cross(&Vec3::new(0.3, 0.7, -0.2)).normalize();
        let v = normal.cross(&u);
        let noise = Normal::new(0.0, 1e-3).unwrap();
        let pts = (0..200)
            .map(|_| {
                normal * (d + noise.sample(&mut rng))
                    + u * (rng.random::<f64>() - 0.5) * 0.3
                    + v * (rng.random::<f64>() - 0.5) * 0.2
            })
            .collect();
        let weights = (0..200).map(|_| rng.random::<f64>()).collect();
        (pts, weights, normal)
    }

    #[test]
    fn weighted_fit_matches_svd_oracle() {
        for seed in 0..20 {
            let (pts, w, truth) = noisy_plane(seed);
            let fit = fit_plane_weighted(&pts, &w, &truth).unwrap();
            let (mut n, mut d) = svd_oracle(&pts, &w);
            if n.dot(&truth) < 0.0 {
                n = -n;
                d = -d;
            }
            assert!((fit.normal - n).amax() < 1e-6, "seed {seed}");
            assert!((fit.distance - d).abs() < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn noiseless_fit_has_negligible_residual() {
        let pose = Pose::new(
            axis_angle_matrix(&Vec3::new(0.2, 0.5, 1.0).normalize(), 0.8).unwrap(),
            Vec3::new(0.1, 0.0, 0.7),
            Vec3::new(0.2, 0.1, 0.3),
        )
        .unwrap();
        let plane = PlaneParams::of_box_face(&pose, FaceId::ZNeg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..100)
            .map(|_| pose.to_camera(&Vec3::new(rng.random::<f64>() * 0.2 - 0.1, rng.random::<f64>() * 0.1 - 0.05, -0.15)))
            .collect();
        let w: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let fit = fit_plane_weighted(&pts, &w, &plane.normal).unwrap();
        assert!((fit.normal - plane.normal).amax() < 1e-9);
        assert!((fit.distance - plane.distance).abs() < 1e-9);
        let residual: f64 = pts.iter().zip(&w).map(|(p, w)| w * fit.signed_distance(p).powi(2)).sum();
        assert!(residual < 1e-18);
    }

    #[test]
    fn confidence_target_values() {
        let gt = Pose::new(Mat3::identity(), Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let p = Vec3::new(0.1, 0.2, 0.0);
        // f = 0.5 − 0.2 along +y
        let perfect = vote_confidence_target(0.3, &Vec3::y(), &p, FaceId::YPos, &gt, 1.0 / 303.5);
        assert!((perfect - 1.0).abs() < 1e-12);
        let off = vote_confidence_target(0.31, &Vec3::y(), &p, FaceId::YPos, &gt, 1.0 / 303.5);
        assert!((off - (-3.035f64).exp()).abs() < 1e-12);
        assert!((off - 0.0481).abs() < 5e-5);
        let far = vote_confidence_target(100.0, &Vec3::y(), &p, FaceId::YPos, &gt, 1.0 / 303.5);
        assert!(far > 0.0);
    }

    #[test]
    fn confidence_target_decreases_with_residual() {
        let gt = unit_cube();
        let p = Vec3::new(0.0, -0.1, 0.2);
        let exact = face_distance(&p, FaceId::ZNeg, &gt);
        let mut last = 2.0;
        for k in 0..50 {
            let c = vote_confidence_target(exact + k as f64 * 1e-3, &-Vec3::z(), &p, FaceId::ZNeg, &gt, 1.0 / 303.5);
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn unit_cube_planes_recover_canonical_box() {
        let b = recover_box(&FacePlanes::of_pose(&unit_cube())).unwrap();
        assert!(b.center.amax() < 1e-15);
        assert!((b.extents - Vec3::new(1.0, 1.0, 1.0)).amax() < 1e-15);
        assert!((b.axes - Mat3::identity()).amax() < 1e-15);
    }

    #[test]
    fn rotated_box_recovers_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let axis = Vec3::from_fn(|_, _| rng.random::<f64>() - 0.5).normalize();
            let pose = Pose::new(
                axis_angle_matrix(&axis, rng.random::<f64>() * 3.0).unwrap(),
                Vec3::from_fn(|_, _| rng.random::<f64>()),
                Vec3::from_fn(|_, _| 0.05 + rng.random::<f64>() * 0.3),
            )
            .unwrap();
            let b = recover_box(&FacePlanes::of_pose(&pose)).unwrap();
            assert!((b.axes - pose.rotation()).amax() < 1e-9);
            assert!((b.center - pose.translation()).amax() < 1e-9);
            assert!((b.extents - pose.size()).amax() < 1e-9);
        }
    }

    #[test]
    fn inconsistent_planes_rejected() {
        let mut planes = FacePlanes::of_pose(&unit_cube());
        planes.set(FaceId::XNeg, PlaneParams::new(Vec3::x(), 0.5).unwrap());
        assert!(matches!(recover_box(&planes), Err(GeomError::Degenerate(_))));
        let partial = FacePlanes::of_pose(&unit_cube()).iter().skip(1).map(|(f, p)| (f, *p)).collect::<Vec<_>>();
        assert!(FacePlanes::from_pairs(partial).is_err());
    }

    proptest::proptest! {
        #[test]
        fn fit_is_invariant_to_weight_scale(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let (pts, w, truth) = noisy_plane(seed);
            let a = fit_plane_weighted(&pts, &w, &truth).unwrap();
            let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
            let b = fit_plane_weighted(&pts, &scaled, &truth).unwrap();
            proptest::prop_assert!((a.normal - b.normal).amax() < 1e-12);
            proptest::prop_assert!((a.distance - b.distance).abs() < 1e-12);
        }

        #[test]
        fn zero_weight_point_never_changes_fit(seed in 0u64..1000, extra in proptest::array::uniform3(-10.0f64..10.0)) {
            let (mut pts, mut w, truth) = noisy_plane(seed);
            let a = fit_plane_weighted(&pts, &w, &truth).unwrap();
            pts.push(Vec3::from(extra));
            w.push(0.0);
            let b = fit_plane_weighted(&pts, &w, &truth).unwrap();
            proptest::prop_assert!((a.normal - b.normal).amax() <= 1e-12);
            proptest::prop_assert!((a.distance - b.distance).abs() <= 1e-12);
        }
    }
}
