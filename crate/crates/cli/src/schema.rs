//! On-disk formats. Lengths are meters, angles radians unless a field name
//! says otherwise; rotations are row-major with the box axes as columns.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use gpv_core::geom::{mat3_from_rows, mat3_rows};
use gpv_core::synth::{Scene, Shape};
use gpv_core::{CategoryPrior, FaceId, FaceVoteSet, PointCloud, Pose, Vec3, Vote};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SymmetryConfig;
use crate::error::CliError;

/// Bumped on any incompatible change to a file written by the tool.
pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    /// Full extents.
    pub size: [f64; 3],
}

impl PoseJson {
    pub fn from_pose(p: &Pose) -> Self {
        PoseJson { rotation: mat3_rows(p.rotation()), translation: (*p.translation()).into(), size: (*p.size()).into() }
    }

    pub fn to_pose(self) -> gpv_core::Result<Pose> {
        Pose::new(mat3_from_rows(self.rotation)?, Vec3::from(self.translation), Vec3::from(self.size))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub length: String,
    pub angle: String,
}

impl Default for Units {
    fn default() -> Self {
        Units { length: "m".into(), angle: "rad".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorJson {
    pub mean_size: [f64; 3],
    pub symmetry: SymmetryConfig,
}

/// One synthetic object observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub format_version: u32,
    pub units: Units,
    pub shape: Shape,
    pub seed: u64,
    pub pose: PoseJson,
    pub prior: PriorJson,
    /// Toward the viewer, camera frame.
    pub view_dir: [f64; 3],
    pub visible_faces: Vec<String>,
    /// Camera-frame points.
    pub points: Vec<[f64; 3]>,
    /// Canonical-frame correspondence of every point.
    pub canonical: Vec<[f64; 3]>,
    pub outlier: Vec<bool>,
    /// Per face label, one `[dx, dy, dz, distance, confidence]` per point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<BTreeMap<String, Vec<[f64; 5]>>>,
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, votes: Option<&FaceVoteSet>) -> Self {
        let v3 = |v: &Vec3| -> [f64; 3] { (*v).into() };
        SceneFile {
            format_version: FORMAT_VERSION,
            units: Units::default(),
            shape: scene.shape,
            seed: scene.seed,
            pose: PoseJson::from_pose(&scene.gt),
            prior: PriorJson {
                mean_size: v3(scene.prior.mean_size()),
                symmetry: SymmetryConfig::from_core(scene.prior.symmetry()),
            },
            view_dir: v3(&scene.view_dir),
            visible_faces: scene.visible_faces.iter().map(|f| f.label().to_string()).collect(),
            points: scene.cloud.points().iter().map(v3).collect(),
            canonical: scene.cloud.canonical().unwrap_or_default().iter().map(v3).collect(),
            outlier: scene.outlier.clone(),
            votes: votes.map(|set| {
                FaceId::ALL
                    .iter()
                    .map(|&f| {
                        let rows = set
                            .face(f)
                            .iter()
                            .map(|v| [v.direction.x, v.direction.y, v.direction.z, v.distance, v.confidence])
                            .collect();
                        (f.label().to_string(), rows)
                    })
                    .collect()
            }),
        }
    }

    /// Rebuilds the scene and its stored votes, checking every invariant the
    /// core types enforce.
    pub fn to_scene(&self) -> Result<(Scene, Option<FaceVoteSet>), CliError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CliError::runtime(format!(
                "scene format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.units != Units::default() {
            return Err(CliError::runtime("scene units must be meters and radians"));
        }
        let points: Vec<Vec3> = self.points.iter().map(|p| Vec3::from(*p)).collect();
        let canonical: Vec<Vec3> = self.canonical.iter().map(|p| Vec3::from(*p)).collect();
        if self.outlier.len() != points.len() {
            return Err(CliError::runtime("outlier flags and points differ in length"));
        }
        let prior = CategoryPrior::new(Vec3::from(self.prior.mean_size), self.prior.symmetry.to_core()?)?;
        let visible_faces = self
            .visible_faces
            .iter()
            .map(|s| s.parse::<FaceId>())
            .collect::<gpv_core::Result<Vec<_>>>()?;
        let scene = Scene {
            shape: self.shape,
            seed: self.seed,
            cloud: PointCloud::with_canonical(points, canonical)?,
            outlier: self.outlier.clone(),
            gt: self.pose.to_pose()?,
            prior,
            visible_faces,
            view_dir: Vec3::from(self.view_dir),
        };
        let votes = match &self.votes {
            None => None,
            Some(map) => {
                let mut lists: [Vec<Vote>; 6] = Default::default();
                for (slot, face) in lists.iter_mut().zip(FaceId::ALL) {
                    let rows = map
                        .get(face.label())
                        .ok_or_else(|| CliError::runtime(format!("votes missing face {face}")))?;
                    *slot = rows
                        .iter()
                        .map(|r| Vote { direction: Vec3::new(r[0], r[1], r[2]), distance: r[3], confidence: r[4] })
                        .collect();
                }
                if map.len() != 6 {
                    return Err(CliError::runtime("votes carry an unknown face label"));
                }
                let set = FaceVoteSet::new(lists)?;
                if set.len() != scene.cloud.len() {
                    return Err(CliError::runtime("vote count differs from point count"));
                }
                Some(set)
            }
        };
        Ok((scene, votes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub shape: Shape,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub scenes: Vec<ManifestEntry>,
}

/// Aggregates for one recovery method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenes: usize,
    /// Scenes where the method returned an error; they count as misses.
    pub failures: usize,
    /// Fraction with IoU ≥ threshold, keyed `iou_25` etc.
    pub iou: BTreeMap<String, f64>,
    /// Fraction strictly under both thresholds, keyed `5deg_2cm` etc.
    pub pose: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub noise_profile: String,
    pub refine: bool,
    pub iou_samples: usize,
    pub scenes: usize,
    pub methods: BTreeMap<String, MethodSummary>,
    /// Per-scene rows, relative to the report.
    pub rows_csv: String,
}

/// One row per (scene, method). Failed methods carry infinite errors and
/// zero IoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub format_version: u32,
    pub scene: String,
    pub shape: Shape,
    pub seed: u64,
    pub method: String,
    pub ok: bool,
    pub rotation_deg: f64,
    pub translation_m: f64,
    pub iou: f64,
    pub iou_std_err: f64,
    pub error: String,
}

pub fn iou_key(t: f64) -> String {
    format!("iou_{}", (t * 100.0).round())
}

pub fn pose_key(deg: f64, cm: f64) -> String {
    format!("{deg}deg_{cm}cm")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let ctx = |e: std::io::Error| CliError::runtime(format!("writing {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(ctx)?;
    tmp.write_all(bytes).map_err(ctx)?;
    tmp.as_file().sync_all().map_err(ctx)?;
    tmp.persist(path).map_err(|e| ctx(e.error))?;
    Ok(())
}

pub fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("schema types serialize");
    bytes.push(b'\n');
    bytes
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::runtime(format!("reading {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::runtime(format!("parsing {}: {e}", path.display())))
}
