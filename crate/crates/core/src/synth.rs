//! Synthetic scenes and prediction bundles.
//!
//! A scene is a partial, camera-frame point cloud of a posed object with
//! exact canonical correspondences, an outlier mask and the set of bounding
//! box faces that face the viewer. A prediction bundle holds what a pose
//! network would emit for that scene; [`exact_bundle`] builds the perfect
//! one and [`corrupt_bundle`] degrades it in a seeded way.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{is_finite_vec, CategoryPrior, PointCloud, Pose, RotationPrediction, Vec3};
use crate::symmetry::{symmetry_map, SymmetryType};
use crate::voting::{face_distance, FaceId, FaceVoteSet, Vote};

/// Points sampled per scene unless a spec says otherwise.
pub const DEFAULT_POINTS: usize = 1028;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Cylinder,
    /// Base plate and a lid hinged at 90°, forming an L inside the box.
    Laptop,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Box, Shape::Cylinder, Shape::Laptop];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Box => "box",
            Shape::Cylinder => "cylinder",
            Shape::Laptop => "laptop",
        }
    }

    pub fn default_symmetry(self) -> SymmetryType {
        match self {
            Shape::Box => SymmetryType::None,
            Shape::Cylinder => SymmetryType::Rotational { axis: Vec3::y() },
            Shape::Laptop => SymmetryType::Reflection { normal: Vec3::x() },
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| GeomError::invalid(format!("unknown shape `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseSpec {
    Fixed(Pose),
    /// Uniform rotation; translation in front of the camera. Drawn from the
    /// scene seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub shape: Shape,
    /// Full extents of the object's bounding box.
    pub size: Vec3,
    pub pose: PoseSpec,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Direction from the object toward the viewer, camera frame. Defaults
    /// to the direction of the camera origin.
    pub view_dir: Option<Vec3>,
    pub seed: u64,
    /// Category prior; defaults to the scene's own size and the shape's
    /// symmetry.
    pub prior: Option<CategoryPrior>,
}

impl SceneSpec {
    pub fn new(shape: Shape, size: Vec3, seed: u64) -> Self {
        SceneSpec {
            shape,
            size,
            pose: PoseSpec::Random,
            n_points: DEFAULT_POINTS,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            view_dir: None,
            seed,
            prior: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(GeomError::invalid("n_points must be positive"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(GeomError::invalid(format!("outlier_fraction {} outside [0, 1)", self.outlier_fraction)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GeomError::invalid("noise_sigma must be finite and non-negative"));
        }
        if !is_finite_vec(&self.size) || self.size.iter().any(|&s| s <= 0.0) {
            return Err(GeomError::InvalidSize(format!("scene size {:?}", self.size.as_slice())));
        }
        if self.shape == Shape::Cylinder && (self.size.x - self.size.z).abs() > 1e-12 * self.size.x {
            return Err(GeomError::invalid("cylinder size needs equal x and z extents (diameter)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub shape: Shape,
    pub seed: u64,
    /// Camera-frame points with canonical correspondences `Rᵀ(p − t)`.
    pub cloud: PointCloud,
    pub outlier: Vec<bool>,
    pub gt: Pose,
    pub prior: CategoryPrior,
    pub visible_faces: Vec<FaceId>,
    pub view_dir: Vec3,
}

impl Scene {
    pub fn symmetry(&self) -> &SymmetryType {
        self.prior.symmetry()
    }

    pub fn outlier_count(&self) -> usize {
        self.outlier.iter().filter(|&&o| o).count()
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q)).to_rotation_matrix().into_inner()
}

/// Random pose of an object of the given size, 0.6–1.2 m in front of the
/// camera.
pub fn random_pose(rng: &mut impl Rng, size: Vec3) -> Result<Pose> {
    let t = Vec3::new(
        rng.random_range(-0.15..0.15),
        rng.random_range(-0.15..0.15),
        rng.random_range(0.6..1.2),
    );
    Pose::new(random_rotation(rng), t, size)
}

/// Axis-aligned solid in the canonical frame.
#[derive(Debug, Clone, Copy)]
struct Slab {
    lo: Vec3,
    hi: Vec3,
}

impl Slab {
    fn contains_strictly(&self, q: &Vec3, margin: f64) -> bool {
        (0..3).all(|i| q[i] > self.lo[i] + margin && q[i] < self.hi[i] - margin)
    }

    /// Whether the ray `origin + τ·dir`, τ > 0, passes through the slab.
    fn hit_by_ray(&self, origin: &Vec3, dir: &Vec3) -> bool {
        let (mut t0, mut t1) = (1e-9_f64, f64::INFINITY);
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] <= self.lo[i] || origin[i] >= self.hi[i] {
                    return false;
                }
                continue;
            }
            let a = (self.lo[i] - origin[i]) / dir[i];
            let b = (self.hi[i] - origin[i]) / dir[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        t0 < t1
    }

    fn area(&self) -> [f64; 6] {
        let e = self.hi - self.lo;
        [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y]
    }

    /// Uniform point on face `k` (x+, x−, y+, y−, z+, z−) and its normal.
    fn sample_face(&self, k: usize, rng: &mut impl Rng) -> (Vec3, Vec3) {
        let axis = k / 2;
        let positive = k.is_multiple_of(2);
        let mut q = Vec3::from_fn(|i, _| rng.random_range(self.lo[i]..=self.hi[i]));
        q[axis] = if positive { self.hi[axis] } else { self.lo[axis] };
        let mut n = Vec3::zeros();
        n[axis] = if positive { 1.0 } else { -1.0 };
        (q, n)
    }
}

/// Surface sampler in the canonical frame: returns a point and whether it
/// is visible from canonical view direction `view`.
trait Surface {
    fn sample(&self, rng: &mut impl Rng, view: &Vec3) -> (Vec3, bool);
}

struct BoxSurface(Slab);

impl Surface for BoxSurface {
    fn sample(&self, rng: &mut impl Rng, view: &Vec3) -> (Vec3, bool) {
        let areas = self.0.area();
        let k = pick_weighted(&areas, rng);
        let (q, n) = self.0.sample_face(k, rng);
        (q, n.dot(view) > 0.0)
    }
}

struct CylinderSurface {
    radius: f64,
    half_height: f64,
}

impl Surface for CylinderSurface {
    fn sample(&self, rng: &mut impl Rng, view: &Vec3) -> (Vec3, bool) {
        let lateral = TAU * self.radius * 2.0 * self.half_height;
        let cap = std::f64::consts::PI * self.radius * self.radius;
        match pick_weighted(&[lateral, cap, cap], rng) {
            0 => {
                let a = rng.random::<f64>() * TAU;
                let q = Vec3::new(self.radius * a.cos(), rng.random_range(-self.half_height..=self.half_height), self.radius * a.sin());
                let n = Vec3::new(a.cos(), 0.0, a.sin());
                (q, n.dot(view) > 0.0)
            }
            k => {
                let r = self.radius * rng.random::<f64>().sqrt();
                let a = rng.random::<f64>() * TAU;
                let sign = if k == 1 { 1.0 } else { -1.0 };
                let q = Vec3::new(r * a.cos(), sign * self.half_height, r * a.sin());
                (q, sign * view.y > 0.0)
            }
        }
    }
}

struct LaptopSurface {
    base: Slab,
    lid: Slab,
}

impl LaptopSurface {
    fn new(half: Vec3) -> Self {
        let thickness = 0.1 * half.y.min(half.z) * 2.0;
        LaptopSurface {
            base: Slab { lo: -half, hi: Vec3::new(half.x, -half.y + thickness, half.z) },
            lid: Slab { lo: -half, hi: Vec3::new(half.x, half.y, -half.z + thickness) },
        }
    }
}

impl Surface for LaptopSurface {
    fn sample(&self, rng: &mut impl Rng, view: &Vec3) -> (Vec3, bool) {
        let (a, b) = (self.base.area(), self.lid.area());
        let areas: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
        let k = pick_weighted(&areas, rng);
        let (this, other) = if k < 6 { (&self.base, &self.lid) } else { (&self.lid, &self.base) };
        let (q, n) = this.sample_face(k % 6, rng);
        let on_union_surface = !other.contains_strictly(&q, 1e-12);
        let visible = on_union_surface && n.dot(view) > 0.0 && !other.hit_by_ray(&q, view);
        (q, visible)
    }
}

fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Bounding-box faces whose outward normal points toward the viewer.
pub fn visible_faces(pose: &Pose, view_dir: &Vec3) -> Vec<FaceId> {
    FaceId::ALL.into_iter().filter(|f| f.normal_in(pose).dot(view_dir) > 1e-9).collect()
}

/// Samples a scene. Deterministic in `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gt = match spec.pose {
        PoseSpec::Fixed(p) => Pose::new(*p.rotation(), *p.translation(), spec.size)?,
        PoseSpec::Random => random_pose(&mut rng, spec.size)?,
    };
    let view_dir = match spec.view_dir {
        Some(v) if v.norm() > 0.0 && is_finite_vec(&v) => v.normalize(),
        Some(_) => return Err(GeomError::invalid("view direction must be a finite non-zero vector")),
        None if gt.translation().norm() > 0.0 => -gt.translation().normalize(),
        None => return Err(GeomError::invalid("object at the camera center; give an explicit view direction")),
    };
    let view_canonical = gt.rotation().tr_mul(&view_dir);
    let half = spec.size * 0.5;

    let n_outliers = (spec.outlier_fraction * spec.n_points as f64).round() as usize;
    let n_inliers = spec.n_points - n_outliers;
    let max_attempts = 1000 * spec.n_points.max(1000);
    let mut canonical = Vec::with_capacity(spec.n_points);
    let mut attempts = 0;
    let draw = |rng: &mut ChaCha8Rng| -> (Vec3, bool) {
        match spec.shape {
            Shape::Box => BoxSurface(Slab { lo: -half, hi: half }).sample(rng, &view_canonical),
            Shape::Cylinder => CylinderSurface { radius: half.x, half_height: half.y }.sample(rng, &view_canonical),
            Shape::Laptop => LaptopSurface::new(half).sample(rng, &view_canonical),
        }
    };
    while canonical.len() < n_inliers {
        attempts += 1;
        if attempts > max_attempts {
            return Err(GeomError::invalid("no visible surface from the requested viewpoint"));
        }
        let (q, visible) = draw(&mut rng);
        if visible {
            canonical.push(q);
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| GeomError::invalid(e.to_string()))?;
    let mut entries: Vec<(Vec3, bool)> = canonical
        .iter()
        .map(|q| {
            let mut p = gt.to_camera(q);
            if spec.noise_sigma > 0.0 {
                p += Vec3::from_fn(|_, _| noise.sample(&mut rng));
            }
            (p, false)
        })
        .collect();
    let inflated = half * 1.5;
    for _ in 0..n_outliers {
        let q = Vec3::from_fn(|i, _| rng.random_range(-inflated[i]..=inflated[i]));
        entries.push((gt.to_camera(&q), true));
    }
    if n_outliers > 0 {
        entries.shuffle(&mut rng);
    }

    let points: Vec<Vec3> = entries.iter().map(|e| e.0).collect();
    let correspondences = points.iter().map(|p| gt.to_canonical(p)).collect();
    let prior = match spec.prior {
        Some(p) => p,
        None => CategoryPrior::new(spec.size, spec.shape.default_symmetry())?,
    };
    Ok(Scene {
        shape: spec.shape,
        seed: spec.seed,
        cloud: PointCloud::with_canonical(points, correspondences)?,
        outlier: entries.iter().map(|e| e.1).collect(),
        gt,
        prior,
        visible_faces: visible_faces(&gt, &view_dir),
        view_dir,
    })
}

/// How ground-truth vote confidences are assigned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceMode {
    /// Every exact inlier vote gets confidence 1.
    Exact,
    /// `exp(−f/k2)` with `f` the point's distance to the face; points near
    /// a face vote for it with more confidence.
    DistanceShaped { k2: f64 },
}

/// Exact votes toward the ground-truth box faces. Outliers keep their
/// geometric vote but get zero confidence.
pub fn ground_truth_votes(scene: &Scene, mode: ConfidenceMode) -> Result<FaceVoteSet> {
    let votes = FaceId::ALL.map(|face| {
        let normal = face.normal_in(&scene.gt);
        scene
            .cloud
            .points()
            .iter()
            .zip(&scene.outlier)
            .map(|(p, &outlier)| {
                let f = face_distance(p, face, &scene.gt);
                let (direction, distance) = if f >= 0.0 { (normal, f) } else { (-normal, -f) };
                let confidence = if outlier {
                    0.0
                } else {
                    match mode {
                        ConfidenceMode::Exact => 1.0,
                        ConfidenceMode::DistanceShaped { k2 } => (-distance / k2).exp(),
                    }
                };
                Vote { direction, distance, confidence }
            })
            .collect()
    });
    FaceVoteSet::new(votes)
}

/// What a pose network emits for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub rotation: RotationPrediction,
    /// Residual translation, added to the cloud mean.
    pub t_res: Vec3,
    /// Residual size, added to the category mean size.
    pub s_res: Vec3,
    pub votes: FaceVoteSet,
    /// Symmetry-aware reconstruction of the input cloud.
    pub reconstruction: PointCloud,
}

/// The bundle a perfect network would produce for `scene`.
pub fn exact_bundle(scene: &Scene) -> Result<PredictionBundle> {
    let r = scene.gt.rotation();
    Ok(PredictionBundle {
        rotation: RotationPrediction::new(r.column(0).into_owned(), r.column(1).into_owned(), 1.0, 1.0)?,
        t_res: scene.gt.translation() - scene.cloud.mean(),
        s_res: scene.gt.size() - scene.prior.mean_size(),
        votes: ground_truth_votes(scene, ConfidenceMode::Exact)?,
        reconstruction: symmetry_map(&scene.cloud, &scene.gt, &scene.gt, scene.symmetry())?,
    })
}

/// Per-field corruption of a prediction bundle. All sigmas default to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-component Gaussian noise on both rotation normals (then
    /// renormalized).
    pub normal_sigma: f64,
    /// Confidences assigned to the two normals; `None` keeps them.
    pub normal_confidence: Option<[f64; 2]>,
    pub t_sigma: f64,
    pub s_sigma: f64,
    /// Per-component Gaussian noise on vote directions (then renormalized).
    pub vote_dir_sigma: f64,
    /// Gaussian noise on vote distances.
    pub vote_dist_sigma: f64,
    /// Isotropic Gaussian noise on the voted face point `p + n·d`.
    pub vote_endpoint_sigma: f64,
    /// Fraction of points whose votes for every face become random junk.
    pub outlier_vote_fraction: f64,
    /// Junk vote confidences are drawn from `U(0, outlier_vote_confidence)`.
    pub outlier_vote_confidence: f64,
    pub recon_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            normal_sigma: 0.0,
            normal_confidence: None,
            t_sigma: 0.0,
            s_sigma: 0.0,
            vote_dir_sigma: 0.0,
            vote_dist_sigma: 0.0,
            vote_endpoint_sigma: 0.0,
            outlier_vote_fraction: 0.0,
            outlier_vote_confidence: OUTLIER_VOTE_CONFIDENCE,
            recon_sigma: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.normal_sigma,
            self.t_sigma,
            self.s_sigma,
            self.vote_dir_sigma,
            self.vote_dist_sigma,
            self.vote_endpoint_sigma,
            self.recon_sigma,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(GeomError::invalid("noise sigmas must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.outlier_vote_fraction) {
            return Err(GeomError::invalid("outlier_vote_fraction outside [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.outlier_vote_confidence) {
            return Err(GeomError::invalid("outlier_vote_confidence outside [0, 1]"));
        }
        if let Some(c) = self.normal_confidence {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(GeomError::invalid("normal confidences outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Default upper bound on junk vote confidence.
pub const OUTLIER_VOTE_CONFIDENCE: f64 = 1e-3;

fn gaussian_vec(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    Vec3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Seeded corruption of `bundle`. A zero spec returns it unchanged.
pub fn corrupt_bundle(bundle: &PredictionBundle, noise: &NoiseSpec, seed: u64) -> Result<PredictionBundle> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = bundle.clone();

    let (mut r_x, mut r_y) = (*bundle.rotation.r_x(), *bundle.rotation.r_y());
    if noise.normal_sigma > 0.0 {
        r_x += gaussian_vec(&mut rng, noise.normal_sigma);
        r_y += gaussian_vec(&mut rng, noise.normal_sigma);
    }
    let [c_x, c_y] = noise.normal_confidence.unwrap_or([bundle.rotation.c_x(), bundle.rotation.c_y()]);
    if noise.normal_sigma > 0.0 || noise.normal_confidence.is_some() {
        out.rotation = RotationPrediction::new(r_x, r_y, c_x, c_y)?;
    }
    if noise.t_sigma > 0.0 {
        out.t_res += gaussian_vec(&mut rng, noise.t_sigma);
    }
    if noise.s_sigma > 0.0 {
        out.s_res += gaussian_vec(&mut rng, noise.s_sigma);
    }

    let vote_noise = noise.vote_dir_sigma > 0.0 || noise.vote_dist_sigma > 0.0 || noise.vote_endpoint_sigma > 0.0;
    let n = bundle.votes.len();
    let n_junk = (noise.outlier_vote_fraction * n as f64).round() as usize;
    if vote_noise || n_junk > 0 {
        let mut votes = bundle.votes.clone().into_inner();
        if vote_noise {
            for list in votes.iter_mut() {
                for v in list.iter_mut() {
                    let mut dir = v.direction;
                    let mut dist = v.distance;
                    if noise.vote_dir_sigma > 0.0 {
                        dir = (dir + gaussian_vec(&mut rng, noise.vote_dir_sigma)).normalize();
                    }
                    if noise.vote_dist_sigma > 0.0 {
                        dist += noise.vote_dist_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                    let mut offset = dir * dist;
                    if noise.vote_endpoint_sigma > 0.0 {
                        offset += gaussian_vec(&mut rng, noise.vote_endpoint_sigma);
                    }
                    let len = offset.norm();
                    if len > 0.0 {
                        v.direction = offset / len;
                        v.distance = len;
                    } else {
                        v.direction = dir;
                        v.distance = 0.0;
                    }
                }
            }
        }
        if n_junk > 0 {
            let chosen = rand::seq::index::sample(&mut rng, n, n_junk);
            for j in chosen {
                for list in votes.iter_mut() {
                    let dir = loop {
                        let g = gaussian_vec(&mut rng, 1.0);
                        if g.norm() > 1e-9 {
                            break g.normalize();
                        }
                    };
                    list[j] = Vote {
                        direction: dir,
                        distance: rng.random_range(0.0..0.3),
                        confidence: rng.random_range(0.0..=noise.outlier_vote_confidence),
                    };
                }
            }
        }
        out.votes = FaceVoteSet::new(votes)?;
    }

    if noise.recon_sigma > 0.0 {
        let pts = bundle.reconstruction.points().iter().map(|p| p + gaussian_vec(&mut rng, noise.recon_sigma)).collect();
        out.reconstruction = PointCloud::new(pts)?;
    }
    Ok(out)
}
