//! Geometric consistency losses between a pose, the observed point cloud
//! and the voted bounding-box planes, plus the combined objective.
//!
//! Gradients are taken with respect to a left-multiplied rotation
//! perturbation `R ← exp([ω]×)·R`, the translation and the full extents.
//! L1 kinks use the zero sub-gradient.

use std::ops::{Add, AddAssign, Mul};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{PointCloud, Pose, RotationPrediction, Vec3};
use crate::rotation::rotation_confidence_target;
use crate::symmetry::{symmetry_reconstruction_loss, SymmetryType};
use crate::voting::{vote_confidence_target, FaceId, FacePlanes, FaceVoteSet};

/// How the size-probability product is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `min(1, max(0, ·))`; the loss vanishes at well-supported sizes.
    #[default]
    Clamp,
    /// `min(0, ·)` taken literally, which keeps the score non-positive.
    LiteralMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeScoreParams {
    pub k_s: f64,
    pub k_n: f64,
    pub k_p: f64,
    pub bin_count: usize,
    /// Maximum samples kept per bin.
    pub bin_cap: usize,
    pub mode: ScoreMode,
}

impl Default for SizeScoreParams {
    fn default() -> Self {
        SizeScoreParams { k_s: 10.0, k_n: 0.5, k_p: 1.0, bin_count: 64, bin_cap: 5, mode: ScoreMode::Clamp }
    }
}

impl SizeScoreParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_s", self.k_s), ("k_n", self.k_n), ("k_p", self.k_p)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeomError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bin_count == 0 || self.bin_cap == 0 {
            return Err(GeomError::invalid("bin_count and bin_cap must be at least 1"));
        }
        Ok(())
    }
}

/// Term weights λ1..λ8 and the three group weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: [f64; 8],
    pub basic: f64,
    pub bb: f64,
    pub pc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: [1.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            basic: 8.0,
            bb: 1.0,
            pc: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.lambda.iter().chain([&self.basic, &self.bb, &self.pc]);
        if all.into_iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GeomError::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    /// λ1..λ8 by their one-based index.
    pub fn l(&self, i: usize) -> f64 {
        self.lambda[i - 1]
    }
}

/// Unweighted value of every named term plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub basic_rot_conf: f64,
    pub basic_sym: f64,
    pub basic_vote_conf: f64,
    pub pc_rt: f64,
    pub pc_s: f64,
    pub bb_r: f64,
    pub bb_t: f64,
    pub bb_s: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn basic(&self, w: &LossWeights) -> f64 {
        w.l(1) * self.basic_rot_conf + w.l(2) * self.basic_sym + w.l(3) * self.basic_vote_conf
    }

    pub fn pc(&self, w: &LossWeights) -> f64 {
        w.l(4) * self.pc_rt + w.l(5) * self.pc_s
    }

    pub fn bb(&self, w: &LossWeights) -> f64 {
        w.l(6) * self.bb_r + w.l(7) * self.bb_t + w.l(8) * self.bb_s
    }

    /// Recomputes `total` from the components.
    pub fn with_total(mut self, w: &LossWeights) -> Self {
        self.total = w.basic * self.basic(w) + w.bb * self.bb(w) + w.pc * self.pc(w);
        self
    }

    pub fn named_terms(&self) -> [(&'static str, f64); 8] {
        [
            ("basic_rot_conf", self.basic_rot_conf),
            ("basic_sym", self.basic_sym),
            ("basic_vote_conf", self.basic_vote_conf),
            ("pc_rt", self.pc_rt),
            ("pc_s", self.pc_s),
            ("bb_r", self.bb_r),
            ("bb_t", self.bb_t),
            ("bb_s", self.bb_s),
        ]
    }
}

/// Gradient of a scalar loss with respect to the pose parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGradient {
    pub rotation: Vec3,
    pub translation: Vec3,
    pub size: Vec3,
}

impl PoseGradient {
    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(self.rotation.as_slice());
        out[3..6].copy_from_slice(self.translation.as_slice());
        out[6..].copy_from_slice(self.size.as_slice());
        out
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        PoseGradient {
            rotation: Vec3::new(a[0], a[1], a[2]),
            translation: Vec3::new(a[3], a[4], a[5]),
            size: Vec3::new(a[6], a[7], a[8]),
        }
    }
}

impl Add for PoseGradient {
    type Output = PoseGradient;

    fn add(self, o: PoseGradient) -> PoseGradient {
        PoseGradient {
            rotation: self.rotation + o.rotation,
            translation: self.translation + o.translation,
            size: self.size + o.size,
        }
    }
}

impl AddAssign for PoseGradient {
    fn add_assign(&mut self, o: PoseGradient) {
        *self = *self + o;
    }
}

impl Mul<f64> for PoseGradient {
    type Output = PoseGradient;

    fn mul(self, k: f64) -> PoseGradient {
        PoseGradient { rotation: self.rotation * k, translation: self.translation * k, size: self.size * k }
    }
}

/// Sub-gradient of |x| with 0 at the kink.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Elementwise residual penalty of the geometric terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Penalty {
    #[default]
    L1,
    /// Quadratic within `delta` of zero, `|x| − delta/2` outside.
    Huber { delta: f64 },
}

impl Penalty {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Penalty::L1 => x.abs(),
            Penalty::Huber { delta } if x.abs() <= delta => 0.5 * x * x / delta,
            Penalty::Huber { delta } => x.abs() - 0.5 * delta,
        }
    }

    pub fn slope(self, x: f64) -> f64 {
        match self {
            Penalty::L1 => sgn(x),
            Penalty::Huber { delta } => (x / delta).clamp(-1.0, 1.0),
        }
    }

    fn sum(self, v: &Vec3) -> f64 {
        v.iter().map(|&x| self.value(x)).sum()
    }

    fn slopes(self, v: &Vec3) -> Vec3 {
        v.map(|x| self.slope(x))
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Penalty::Huber { delta } if !(delta > 0.0 && delta.is_finite()) => {
                Err(GeomError::invalid(format!("Huber delta must be positive, got {delta}")))
            }
            _ => Ok(()),
        }
    }
}

fn correspondences(cloud: &PointCloud) -> Result<&[Vec3]> {
    cloud
        .canonical()
        .ok_or_else(|| GeomError::invalid("point cloud carries no canonical correspondences"))
}

/// `Σ_p |Rᵀ(p − t) − p^c|₁`.
pub fn pc_pose_loss(cloud: &PointCloud, pred: &Pose) -> Result<f64> {
    let canonical = correspondences(cloud)?;
    Ok(cloud
        .points()
        .iter()
        .zip(canonical)
        .map(|(p, pc)| (pred.to_canonical(p) - pc).abs().sum())
        .sum())
}

/// [`pc_pose_loss`] with its gradient.
pub fn pc_pose_loss_grad(cloud: &PointCloud, pred: &Pose) -> Result<(f64, PoseGradient)> {
    pc_pose_loss_grad_with(cloud, pred, Penalty::L1)
}

/// [`pc_pose_loss_grad`] under an arbitrary residual penalty.
pub fn pc_pose_loss_grad_with(cloud: &PointCloud, pred: &Pose, penalty: Penalty) -> Result<(f64, PoseGradient)> {
    let canonical = correspondences(cloud)?;
    let r = pred.rotation();
    let mut loss = 0.0;
    let mut grad = PoseGradient::default();
    for (p, pc) in cloud.points().iter().zip(canonical) {
        let v = p - pred.translation();
        let residual = r.tr_mul(&v) - pc;
        loss += penalty.sum(&residual);
        let back = r * penalty.slopes(&residual);
        // d residual/dt = −R ;  d residual/dω = Rᵀ[v]×
        grad.translation -= back;
        grad.rotation += back.cross(&v);
    }
    Ok((loss, grad))
}

/// Signed canonical coordinates of the cloud along `face`'s outward axis.
pub fn axis_coordinates(cloud: &PointCloud, face: FaceId, pred: &Pose) -> Vec<f64> {
    cloud
        .points()
        .iter()
        .map(|p| face.sign() * pred.to_canonical(p)[face.axis()])
        .collect()
}

/// Histogram-equalizes the axis coordinates: the range is split into
/// `bins` equal bins and any bin holding more than `cap` samples is
/// uniformly subsampled to `cap`. Output is ordered by bin, then by
/// original index.
pub fn bin_sample(cloud: &PointCloud, face: FaceId, pred: &Pose, bins: usize, cap: usize, seed: u64) -> Result<Vec<f64>> {
    bin_sample_values(&axis_coordinates(cloud, face, pred), bins, cap, seed)
}

pub fn bin_sample_values(coords: &[f64], bins: usize, cap: usize, seed: u64) -> Result<Vec<f64>> {
    if coords.is_empty() {
        return Err(GeomError::invalid("cannot bin-sample an empty cloud"));
    }
    if bins == 0 || cap == 0 {
        return Err(GeomError::invalid("bins and cap must be at least 1"));
    }
    let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &c) in coords.iter().enumerate() {
        let b = if width > 0.0 { (((c - lo) / width) as usize).min(bins - 1) } else { 0 };
        buckets[b].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(coords.len().min(bins * cap));
    for bucket in &buckets {
        if bucket.len() <= cap {
            out.extend(bucket.iter().map(|&i| coords[i]));
        } else {
            let mut picked = sample(&mut rng, bucket.len(), cap).into_vec();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|k| coords[bucket[k]]));
        }
    }
    Ok(out)
}

/// Unbounded size probability `(k_p/|P|)·f_p(s)·f_d(s)` for a half-extent
/// candidate `s_half`, where
/// `f_p = exp((k_n/|P|)·Σ(α + 1))`, `f_d = Σ α·exp(−k_s(s − p)²)` and
/// `α = +1` for `p ≤ s`, `−1` otherwise.
pub fn size_score_raw(samples: &[f64], s_half: f64, params: &SizeScoreParams) -> f64 {
    let n = samples.len() as f64;
    let mut alpha_sum = 0.0;
    let mut f_d = 0.0;
    for &p in samples {
        let alpha = if p <= s_half { 1.0 } else { -1.0 };
        alpha_sum += alpha + 1.0;
        f_d += alpha * (-params.k_s * (s_half - p).powi(2)).exp();
    }
    let f_p = (params.k_n / n * alpha_sum).exp();
    params.k_p / n * f_p * f_d
}

/// Bounded size probability according to `params.mode`.
pub fn size_score(samples: &[f64], s_half: f64, params: &SizeScoreParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(GeomError::invalid("size score needs at least one sample"));
    }
    if !(s_half > 0.0) {
        return Err(GeomError::invalid(format!("half extent must be positive, got {s_half}")));
    }
    let raw = size_score_raw(samples, s_half, params);
    Ok(match params.mode {
        ScoreMode::Clamp => raw.clamp(0.0, 1.0),
        ScoreMode::LiteralMin => raw.min(0.0),
    })
}

/// The face used to score each axis: the positive face when visible,
/// otherwise the negative one, otherwise none.
pub fn scored_faces(visible: &[FaceId]) -> impl Iterator<Item = FaceId> + '_ {
    (0..3).filter_map(move |axis| {
        [FaceId::positive(axis), FaceId::negative(axis)]
            .into_iter()
            .find(|f| visible.contains(f))
    })
}

/// `Σ_axis |1 − f(s_axis/2)|` over axes with a visible face; occluded axes
/// contribute nothing.
pub fn pc_size_loss(cloud: &PointCloud, pred: &Pose, visible: &[FaceId], params: &SizeScoreParams, seed: u64) -> Result<f64> {
    let mut loss = 0.0;
    for face in scored_faces(visible) {
        let samples = bin_sample(cloud, face, pred, params.bin_count, params.bin_cap, seed)?;
        let f = size_score(&samples, 0.5 * pred.size()[face.axis()], params)?;
        loss += (1.0 - f).abs();
    }
    Ok(loss)
}

/// The three box/pose consistency terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxPoseLoss {
    pub rotation: f64,
    pub translation: f64,
    pub size: f64,
}

/// Box/pose consistency of `pred` against six voted planes.
///
/// - translation: `Σ_axis ||N+·t − D+| − |N−·t − D−||`
/// - size: `Σ_face |s_axis/2 − |N·t − D||` (plane distances are half extents)
/// - rotation: `|r_y − N_y+|₁ + |r_x − N_x+|₁`
pub fn bb_pose_loss(pred: &Pose, planes: &FacePlanes) -> BoxPoseLoss {
    bb_pose_loss_grad(pred, planes).0
}

/// [`bb_pose_loss`] with per-term gradients.
pub fn bb_pose_loss_grad(pred: &Pose, planes: &FacePlanes) -> (BoxPoseLoss, [PoseGradient; 3]) {
    bb_pose_loss_grad_with(pred, planes, Penalty::L1)
}

/// [`bb_pose_loss_grad`] under an arbitrary residual penalty.
pub fn bb_pose_loss_grad_with(pred: &Pose, planes: &FacePlanes, penalty: Penalty) -> (BoxPoseLoss, [PoseGradient; 3]) {
    let t = pred.translation();
    let mut loss = BoxPoseLoss::default();
    let (mut g_r, mut g_t, mut g_s) = (PoseGradient::default(), PoseGradient::default(), PoseGradient::default());

    for axis in 0..3 {
        let plus = planes.get(FaceId::positive(axis));
        let minus = planes.get(FaceId::negative(axis));
        let a = plus.signed_distance(t);
        let b = minus.signed_distance(t);
        let u = a.abs() - b.abs();
        loss.translation += penalty.value(u);
        g_t.translation += (plus.normal * sgn(a) - minus.normal * sgn(b)) * penalty.slope(u);
    }

    for (face, plane) in planes.iter() {
        let e = plane.signed_distance(t);
        let v = 0.5 * pred.size()[face.axis()] - e.abs();
        loss.size += penalty.value(v);
        g_s.size[face.axis()] += 0.5 * penalty.slope(v);
        g_s.translation -= plane.normal * (penalty.slope(v) * sgn(e));
    }

    for face in [FaceId::YPos, FaceId::XPos] {
        let r = pred.rotation().column(face.axis()).into_owned();
        let diff = r - planes.get(face).normal;
        loss.rotation += penalty.sum(&diff);
        // d r/dω = −[r]×
        g_r.rotation += r.cross(&penalty.slopes(&diff));
    }
    (loss, [g_r, g_t, g_s])
}

/// Hyperparameters consumed by [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    pub k1: f64,
    pub k2: f64,
    pub size: SizeScoreParams,
    pub weights: LossWeights,
    /// Seed for the bin subsampling inside the size term.
    pub bin_seed: u64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            k1: 13.7,
            k2: 1.0 / 303.5,
            size: SizeScoreParams::default(),
            weights: LossWeights::default(),
            bin_seed: 0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(self.k2 > 0.0 && self.k2.is_finite()) {
            return Err(GeomError::invalid("k1 and k2 must be positive"));
        }
        self.size.validate()?;
        self.weights.validate()
    }
}

/// Network-side predictions that feed the supervised terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasicInputs<'a> {
    pub gt: Option<&'a Pose>,
    pub rotation: Option<&'a RotationPrediction>,
    pub votes: Option<&'a FaceVoteSet>,
    pub reconstruction: Option<&'a PointCloud>,
    pub symmetry: SymmetryType,
}

/// Everything the combined objective looks at for one scene.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub cloud: &'a PointCloud,
    pub pred: &'a Pose,
    pub planes: &'a FacePlanes,
    pub visible: &'a [FaceId],
    pub basic: BasicInputs<'a>,
}

/// Supervised terms; each is zero when its prediction or the ground truth
/// is absent.
fn basic_terms(inputs: &LossInputs<'_>, params: &LossParams) -> Result<(f64, f64, f64)> {
    let Some(gt) = inputs.basic.gt else {
        return Ok((0.0, 0.0, 0.0));
    };
    let rot_conf = match inputs.basic.rotation {
        Some(r) => {
            let r_x_gt = gt.rotation().column(0).into_owned();
            let r_y_gt = gt.rotation().column(1).into_owned();
            (r.c_x() - rotation_confidence_target(r.r_x(), &r_x_gt, params.k1)).abs()
                + (r.c_y() - rotation_confidence_target(r.r_y(), &r_y_gt, params.k1)).abs()
        }
        None => 0.0,
    };
    let sym = match inputs.basic.reconstruction {
        Some(rec) => symmetry_reconstruction_loss(rec, inputs.cloud, inputs.pred, gt, &inputs.basic.symmetry, 1.0)?,
        None => 0.0,
    };
    let vote_conf = match inputs.basic.votes {
        Some(votes) => {
            if votes.len() != inputs.cloud.len() {
                return Err(GeomError::invalid("vote set does not match the point cloud"));
            }
            let mut acc = 0.0;
            for face in FaceId::ALL {
                for (p, v) in inputs.cloud.points().iter().zip(votes.face(face)) {
                    let target = vote_confidence_target(v.distance, &v.direction, p, face, gt, params.k2);
                    acc += (v.confidence - target).abs();
                }
            }
            acc
        }
        None => 0.0,
    };
    Ok((rot_conf, sym, vote_conf))
}

/// Every named term and the weighted total
/// `λ_Basic·L_Basic + λ_BB·L_BB + λ_PC·L_PC`.
pub fn total_loss(inputs: &LossInputs<'_>, params: &LossParams) -> Result<LossBreakdown> {
    params.validate()?;
    let (basic_rot_conf, basic_sym, basic_vote_conf) = basic_terms(inputs, params)?;
    let bb = bb_pose_loss(inputs.pred, inputs.planes);
    let breakdown = LossBreakdown {
        basic_rot_conf,
        basic_sym,
        basic_vote_conf,
        pc_rt: pc_pose_loss(inputs.cloud, inputs.pred)?,
        pc_s: pc_size_loss(inputs.cloud, inputs.pred, inputs.visible, &params.size, params.bin_seed)?,
        bb_r: bb.rotation,
        bb_t: bb.translation,
        bb_s: bb.size,
        total: 0.0,
    };
    Ok(breakdown.with_total(&params.weights))
}

/// Only the pose-dependent geometric terms, `λ_PC·L_PC + λ_BB·L_BB`.
pub fn geometric_loss(cloud: &PointCloud, pred: &Pose, planes: &FacePlanes, visible: &[FaceId], params: &LossParams) -> Result<LossBreakdown> {
    let inputs = LossInputs { cloud, pred, planes, visible, basic: BasicInputs::default() };
    total_loss(&inputs, params)
}

/// Analytic gradient of the differentiable geometric terms
/// `λ_PC·λ4·L_PC(R,t) + λ_BB·(λ6·L_R + λ7·L_t + λ8·L_s)`.
pub fn smooth_geometric_gradient(cloud: &PointCloud, pred: &Pose, planes: &FacePlanes, w: &LossWeights) -> Result<PoseGradient> {
    let (_, g_pc) = pc_pose_loss_grad(cloud, pred)?;
    let (_, [g_r, g_t, g_s]) = bb_pose_loss_grad(pred, planes);
    Ok(g_pc * (w.pc * w.l(4)) + (g_r * w.l(6) + g_t * w.l(7) + g_s * w.l(8)) * w.bb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{axis_angle_matrix, exp_so3, Mat3};
    use crate::voting::PlaneParams;
    use rand::{Rng, SeedableRng};

    fn box_pose() -> Pose {
        Pose::new(
            axis_angle_matrix(&Vec3::new(0.3, 1.0, -0.2).normalize(), 0.6).unwrap(),
            Vec3::new(0.05, -0.02, 0.8),
            Vec3::new(0.2, 0.12, 0.16),
        )
        .unwrap()
    }

    /// Points on the three faces x+, y+, z+ of the box, with correspondences.
    fn box_cloud(pose: &Pose, n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = pose.size() * 0.5;
        let mut canonical = Vec::with_capacity(n);
        for k in 0..n {
            let axis = k % 3;
            let mut q = Vec3::from_fn(|i, _| (rng.random::<f64>() * 2.0 - 1.0) * h[i]);
            q[axis] = h[axis];
            canonical.push(q);
        }
        let points = canonical.iter().map(|q| pose.to_camera(q)).collect();
        PointCloud::with_canonical(points, canonical).unwrap()
    }

    #[test]
    fn pc_loss_zero_at_truth_and_translation_closed_form() {
        let pose = box_pose();
        let cloud = box_cloud(&pose, 300, 1);
        assert!(pc_pose_loss(&cloud, &pose).unwrap() < 1e-12);
        let delta = Vec3::new(0.01, -0.02, 0.005);
        let shifted = pose.with_translation(pose.translation() + delta).unwrap();
        let expected = 300.0 * pose.rotation().tr_mul(&delta).abs().sum();
        assert!((pc_pose_loss(&cloud, &shifted).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn pc_loss_matches_direct_reevaluation_under_rotation() {
        let pose = box_pose();
        let cloud = box_cloud(&pose, 200, 2);
        let perturbed = pose
            .with_rotation(axis_angle_matrix(&Vec3::new(1.0, 1.0, 0.0).normalize(), 5f64.to_radians()).unwrap() * pose.rotation())
            .unwrap();
        let r = perturbed.rotation();
        let t = perturbed.translation();
        let mut oracle = 0.0;
        for (p, q) in cloud.points().iter().zip(cloud.canonical().unwrap()) {
            let d = p - t;
            for i in 0..3 {
                let row = r[(0, i)] * d[0] + r[(1, i)] * d[1] + r[(2, i)] * d[2];
                oracle += (row - q[i]).abs();
            }
        }
        assert!((pc_pose_loss(&cloud, &perturbed).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn pc_loss_requires_correspondences() {
        let cloud = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(pc_pose_loss(&cloud, &box_pose()).is_err());
    }

    #[test]
    fn pc_loss_grows_along_translation_ray() {
        let pose = box_pose();
        let cloud = box_cloud(&pose, 100, 3);
        let dir = Vec3::new(0.3, -0.4, 0.2);
        let mut last = -1.0;
        for k in 0..20 {
            let p = pose.with_translation(pose.translation() + dir * (k as f64 * 0.01)).unwrap();
            let loss = pc_pose_loss(&cloud, &p).unwrap();
            assert!(loss > last);
            last = loss;
        }
    }

    #[test]
    fn bin_sample_caps() {
        let pose = Pose::new(Mat3::identity(), Vec3::zeros(), Vec3::new(2.0, 2.0, 2.0)).unwrap();
        let uniform: Vec<Vec3> = (0..64).map(|k| Vec3::new(k as f64 / 64.0, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(uniform).unwrap();
        let out = bin_sample(&cloud, FaceId::XPos, &pose, 64, 5, 0).unwrap();
        assert_eq!(out.len(), 64);

        let clump = PointCloud::new(vec![Vec3::new(0.3, 0.0, 0.0); 40]).unwrap();
        assert_eq!(bin_sample(&clump, FaceId::XPos, &pose, 64, 5, 0).unwrap().len(), 5);
        assert!(bin_sample_values(&[], 64, 5, 0).is_err());
    }

    #[test]
    fn bin_sample_equalizes_clustered_clouds() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coords: Vec<f64> = (0..1000)
                .map(|_| if rng.random::<f64>() < 0.7 { 0.5 + 0.01 * rng.random::<f64>() } else { rng.random::<f64>() })
                .collect();
            let out = bin_sample_values(&coords, 16, 8, seed).unwrap();
            let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut hist = [0usize; 16];
            for c in &out {
                hist[(((c - lo) / (hi - lo) * 16.0) as usize).min(15)] += 1;
            }
            let max = *hist.iter().max().unwrap();
            let min = *hist.iter().filter(|&&h| h > 0).min().unwrap();
            assert!(max <= 8 && max / min <= 8, "{hist:?}");
        }
    }

    #[test]
    fn size_score_without_boundary_support_is_zero() {
        // all samples deep inside and a huge k_s: no kernel mass near s
        let params = SizeScoreParams { k_s: 1e4, ..Default::default() };
        let samples: Vec<f64> = (0..300).map(|k| -0.1 + 0.1 * k as f64 / 300.0).collect();
        assert!(size_score(&samples, 1.0, &params).unwrap() < 1e-12);
        assert!(size_score(&samples, 0.0, &params).is_err());
        assert!(size_score(&[], 0.1, &params).is_err());
    }

    #[test]
    fn literal_min_mode_is_never_positive() {
        let samples: Vec<f64> = (0..300).map(|k| 0.1 * k as f64 / 300.0).collect();
        let params = SizeScoreParams { mode: ScoreMode::LiteralMin, ..Default::default() };
        assert_eq!(size_score(&samples, 0.1, &params).unwrap(), 0.0);
        assert!(size_score(&samples, 0.05, &params).unwrap() <= 0.0);
    }

    /// Oracle: evaluate the raw score on a grid and take the first maximum.
    fn grid_argmax(samples: &[f64], params: &SizeScoreParams, lo: f64, hi: f64, step: f64) -> f64 {
        let mut best = (f64::NEG_INFINITY, lo);
        let mut s = lo;
        while s <= hi {
            let f = size_score_raw(samples, s, params);
            if f > best.0 {
                best = (f, s);
            }
            s += step;
        }
        best.1
    }

    #[test]
    fn size_score_peaks_at_true_half_extent() {
        let pose = box_pose();
        let cloud = box_cloud(&pose, 1028, 5);
        let params = SizeScoreParams::default();
        let step = 1e-3;
        for face in [FaceId::XPos, FaceId::YPos, FaceId::ZPos] {
            let samples = bin_sample(&cloud, face, &pose, 64, 5, 1).unwrap();
            let truth = 0.5 * pose.size()[face.axis()];
            let best = grid_argmax(&samples, &params, step, 0.5, step);
            assert!((best - truth).abs() <= step + 1e-12, "{face}: {best} vs {truth}");
        }
    }

    #[test]
    fn size_loss_behaviour() {
        let pose = box_pose();
        let cloud = box_cloud(&pose, 1028, 6);
        let params = SizeScoreParams::default();
        assert_eq!(pc_size_loss(&cloud, &pose, &[], &params, 0).unwrap(), 0.0);
        let visible = [FaceId::XPos, FaceId::YPos, FaceId::ZPos];
        let at_truth = pc_size_loss(&cloud, &pose, &visible, &params, 0).unwrap();
        assert!(at_truth < 0.1);
        let doubled = pose.with_size(pose.size() * 2.0).unwrap();
        // the clamp saturates on small boxes; drop k_p so the score is informative
        let tight = SizeScoreParams { k_p: 0.3, ..params };
        let truth_tight = pc_size_loss(&cloud, &pose, &visible, &tight, 0).unwrap();
        let doubled_tight = pc_size_loss(&cloud, &doubled, &visible, &tight, 0).unwrap();
        assert!(doubled_tight > truth_tight, "{doubled_tight} vs {truth_tight}");
    }

    #[test]
    fn bb_loss_examples() {
        let cube = Pose::new(Mat3::identity(), Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let planes = FacePlanes::of_pose(&cube);
        let zero = bb_pose_loss(&cube, &planes);
        assert!(zero.rotation < 1e-12 && zero.translation < 1e-12 && zero.size < 1e-12);

        let shifted = cube.with_translation(Vec3::new(0.0, 0.1, 0.0)).unwrap();
        let l = bb_pose_loss(&shifted, &planes);
        assert!((l.translation - 0.2).abs() < 1e-12);

        let flipped_y = Mat3::from_columns(&[-Vec3::x(), -Vec3::y(), Vec3::z()]);
        let l = bb_pose_loss(&cube.with_rotation(flipped_y).unwrap(), &planes);
        // both r_x and r_y flipped: each contributes |2N|₁ = 2
        assert!((l.rotation - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bb_loss_sign_relabeling() {
        let pose = box_pose();
        let mut planes = FacePlanes::of_pose(&pose);
        let perturbed = pose
            .with_translation(pose.translation() + Vec3::new(0.01, 0.02, -0.01))
            .unwrap()
            .with_size(pose.size() * 1.1)
            .unwrap();
        let before = bb_pose_loss(&perturbed, &planes);
        for face in [FaceId::YPos, FaceId::XPos, FaceId::ZNeg] {
            let p = *planes.get(face);
            planes.set(face, p.flipped());
        }
        let after = bb_pose_loss(&perturbed, &planes);
        assert!((before.translation - after.translation).abs() < 1e-15);
        assert!((before.size - after.size).abs() < 1e-15);
        assert!((before.rotation - after.rotation).abs() > 1.0);
    }

    #[test]
    fn breakdown_total_is_weighted_sum() {
        let pose = box_pose();
        let cloud = box_cloud(&pose, 300, 9);
        let planes = FacePlanes::of_pose(&pose);
        let visible = [FaceId::XPos, FaceId::YPos, FaceId::ZPos];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = LossParams::default();
        for _ in 0..10 {
            let omega = Vec3::from_fn(|_, _| rng.random::<f64>() * 0.2 - 0.1);
            let pred = Pose::new(
                exp_so3(&omega) * pose.rotation(),
                pose.translation() + Vec3::from_fn(|_, _| rng.random::<f64>() * 0.04 - 0.02),
                pose.size() + Vec3::from_fn(|_, _| rng.random::<f64>() * 0.02),
            )
            .unwrap();
            let b = geometric_loss(&cloud, &pred, &planes, &visible, &params).unwrap();
            let w = params.weights;
            let manual = w.basic * (w.lambda[0] * b.basic_rot_conf + w.lambda[1] * b.basic_sym + w.lambda[2] * b.basic_vote_conf)
                + w.bb * (w.lambda[5] * b.bb_r + w.lambda[6] * b.bb_t + w.lambda[7] * b.bb_s)
                + w.pc * (w.lambda[3] * b.pc_rt + w.lambda[4] * b.pc_s);
            assert!((b.total - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_components_give_zero_total() {
        assert_eq!(LossBreakdown::default().with_total(&LossWeights::default()).total, 0.0);
    }

    #[test]
    fn default_weights_follow_published_list() {
        let w = LossWeights::default();
        let listed = [1.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0, 1.0, 1.0, 1.0, 1.0, 1.0, 8.0, 1.0, 1.0];
        let ours: Vec<f64> = w.lambda.iter().copied().chain([w.basic, w.bb, w.pc]).collect();
        assert_eq!(ours, listed);
        let p = LossParams::default();
        assert_eq!(p.k1, 13.7);
        assert_eq!(p.k2, 1.0 / 303.5);
        assert_eq!((p.size.k_s, p.size.k_n, p.size.k_p, p.size.bin_count), (10.0, 0.5, 1.0, 64));
    }

    #[test]
    fn planes_missing_face_is_an_error() {
        let pairs = vec![(FaceId::XPos, PlaneParams::new(Vec3::x(), 1.0).unwrap())];
        assert!(FacePlanes::from_pairs(pairs).is_err());
    }
}
