use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gpv_core::gradcheck::{grad_check, perturb, GradCheckReport};
use gpv_core::losses::{
    bb_pose_loss, bb_pose_loss_grad, pc_pose_loss, pc_pose_loss_grad, total_loss, BasicInputs, LossBreakdown,
    LossInputs,
};
use gpv_core::metrics::{
    iou_precision, pose_accuracy, pose_error, symmetric_iou, IouEstimate, PoseError, IOU_THRESHOLDS, POSE_THRESHOLDS,
};
use gpv_core::solver::{fit_face_planes, recover_box_from_votes, recover_pose, refine_pose};
use gpv_core::synth::{
    corrupt_bundle, exact_bundle, generate_scene, ground_truth_votes, ConfidenceMode, PredictionBundle, Scene,
    SceneSpec, Shape,
};
use gpv_core::{FacePlanes, Pose, SymmetryType, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::Config;
use crate::error::CliError;
use crate::schema::{
    iou_key, pose_key, read_json, sha256_hex, to_json, write_atomic, CsvRow, Manifest, ManifestEntry, MethodSummary,
    PoseJson, Report, SceneFile, FORMAT_VERSION, MANIFEST_NAME, TOOL_VERSION,
};

/// Seed of scene `i` in a run seeded with `seed`.
pub fn scene_seed(seed: u64, i: u64) -> u64 {
    seed ^ (i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const SIZE_SALT: u64 = 0x5157_0000_0000_0001;
const NOISE_SALT: u64 = 0x5157_0000_0000_0002;

/// Category mean times `U(1 − j, 1 + j)` per axis; cylinders keep x = z.
fn jittered_size(mean: &Vec3, jitter: f64, shape: Shape, seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SIZE_SALT);
    let mut f = || if jitter > 0.0 { rng.random_range(1.0 - jitter..1.0 + jitter) } else { 1.0 };
    let mut s = Vec3::new(mean.x * f(), mean.y * f(), mean.z * f());
    if shape == Shape::Cylinder {
        s.z = s.x;
    }
    s
}

fn build_scene(config: &Config, shape_name: &str, seed: u64) -> Result<Scene, CliError> {
    let shape: Shape = shape_name.parse().map_err(|e| CliError::usage(format!("gen.shapes: {e}")))?;
    let prior = config.prior(shape_name)?;
    let mut spec = SceneSpec::new(shape, jittered_size(prior.mean_size(), config.gen.size_jitter, shape, seed), seed);
    spec.n_points = config.gen.n_points;
    spec.noise_sigma = config.gen.noise_sigma;
    spec.outlier_fraction = config.gen.outlier_fraction;
    spec.prior = Some(prior);
    Ok(generate_scene(&spec)?)
}

pub fn gen(config: &Config, seed: u64, out: &Path) -> Result<Value, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("creating {}: {e}", out.display())))?;
    let entries = (0..config.gen.n)
        .into_par_iter()
        .map(|i| {
            let shape = &config.gen.shapes[i % config.gen.shapes.len()];
            let s = scene_seed(seed, i as u64);
            let scene = build_scene(config, shape, s)?;
            let votes = if config.gen.votes { Some(ground_truth_votes(&scene, ConfidenceMode::Exact)?) } else { None };
            let bytes = to_json(&SceneFile::from_scene(&scene, votes.as_ref()));
            let file = format!("scene_{i:05}.json");
            write_atomic(&out.join(&file), &bytes)?;
            Ok(ManifestEntry { file, shape: scene.shape, seed: s, sha256: sha256_hex(&bytes) })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool_version: TOOL_VERSION.into(),
        config_hash: config.hash(),
        seed,
        scenes: entries,
    };
    let bytes = to_json(&manifest);
    write_atomic(&out.join(MANIFEST_NAME), &bytes)?;
    Ok(json!({
        "out": out.display().to_string(),
        "scenes": manifest.scenes.len(),
        "manifest_sha256": sha256_hex(&bytes),
        "config_hash": manifest.config_hash,
    }))
}

/// Scene files of a directory: the manifest's list (hashes checked) when
/// present, otherwise every `*.json` in name order.
fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.exists() {
        let manifest: Manifest = read_json(&manifest_path)?;
        return manifest
            .scenes
            .iter()
            .map(|e| {
                let path = dir.join(&e.file);
                let bytes =
                    std::fs::read(&path).map_err(|err| CliError::runtime(format!("reading {}: {err}", path.display())))?;
                if sha256_hex(&bytes) != e.sha256 {
                    return Err(CliError::runtime(format!("{} does not match its manifest hash", path.display())));
                }
                Ok(path)
            })
            .collect();
    }
    let read = std::fs::read_dir(dir).map_err(|e| CliError::runtime(format!("reading {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in read {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub struct MethodOutcome {
    pub method: &'static str,
    pub result: Result<(Pose, PoseError, IouEstimate), String>,
}

/// The prediction bundle a scene stands in for: exact, with stored votes
/// when the file has them, then corrupted by the noise profile.
fn scene_bundle(scene: &Scene, votes: Option<gpv_core::FaceVoteSet>, config: &Config, profile: &str) -> Result<PredictionBundle, CliError> {
    let mut bundle = exact_bundle(scene)?;
    if let Some(v) = votes {
        bundle.votes = v;
    }
    let noise = config.noise_profile(profile)?;
    Ok(corrupt_bundle(&bundle, &noise, scene.seed ^ NOISE_SALT)?)
}

pub fn recover_scene(scene: &Scene, bundle: &PredictionBundle, config: &Config, refine: bool) -> Vec<MethodOutcome> {
    let sym = *scene.symmetry();
    let score = |pose: gpv_core::Result<Pose>| -> Result<(Pose, PoseError, IouEstimate), String> {
        let pose = pose.map_err(|e| e.to_string())?;
        let iou = symmetric_iou(&pose, &scene.gt, &sym, config.eval.iou_samples, scene.seed).map_err(|e| e.to_string())?;
        Ok((pose, pose_error(&pose, &scene.gt, &sym), iou))
    };
    let regression = recover_pose(bundle, &scene.cloud, &scene.prior);
    let mut out = vec![
        MethodOutcome { method: "regression", result: score(regression.clone()) },
        MethodOutcome {
            method: "votes",
            result: score(recover_box_from_votes(bundle, &scene.cloud).and_then(|b| b.to_pose())),
        },
    ];
    if refine {
        let refined = regression.and_then(|init| {
            let planes = fit_face_planes(&scene.cloud, &bundle.votes)?;
            refine_pose(&init, &scene.cloud, &planes, &scene.visible_faces, &config.loss, &config.refine)
                .map(|r| r.pose)
                .map_err(|f| f.error)
        });
        out.push(MethodOutcome { method: "refined", result: score(refined) });
    }
    out
}

fn load_scene(path: &Path) -> Result<(Scene, Option<gpv_core::FaceVoteSet>), CliError> {
    let file: SceneFile = read_json(path)?;
    file.to_scene().map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn rows_for(name: &str, scene: &Scene, outcomes: &[MethodOutcome]) -> Vec<CsvRow> {
    outcomes
        .iter()
        .map(|o| {
            let mut row = CsvRow {
                format_version: FORMAT_VERSION,
                scene: name.to_string(),
                shape: scene.shape,
                seed: scene.seed,
                method: o.method.to_string(),
                ok: o.result.is_ok(),
                rotation_deg: f64::INFINITY,
                translation_m: f64::INFINITY,
                iou: 0.0,
                iou_std_err: 0.0,
                error: String::new(),
            };
            match &o.result {
                Ok((_, e, iou)) => {
                    row.rotation_deg = e.rotation_deg;
                    row.translation_m = e.translation_m;
                    row.iou = iou.iou;
                    row.iou_std_err = iou.std_err;
                }
                Err(msg) => row.error = msg.clone(),
            }
            row
        })
        .collect()
}

/// Aggregates of the rows belonging to one method.
pub fn summarize(rows: &[&CsvRow]) -> Result<MethodSummary, CliError> {
    let ious: Vec<f64> = rows.iter().map(|r| r.iou).collect();
    let errors: Vec<PoseError> =
        rows.iter().map(|r| PoseError { rotation_deg: r.rotation_deg, translation_m: r.translation_m }).collect();
    let mut iou = BTreeMap::new();
    for t in IOU_THRESHOLDS {
        iou.insert(iou_key(t), iou_precision(&ious, t)?);
    }
    let mut pose = BTreeMap::new();
    for (deg, cm) in POSE_THRESHOLDS {
        pose.insert(pose_key(deg, cm), pose_accuracy(&errors, deg, cm)?);
    }
    Ok(MethodSummary { scenes: rows.len(), failures: rows.iter().filter(|r| !r.ok).count(), iou, pose })
}

pub struct EvalArgs<'a> {
    pub scenes: &'a Path,
    pub out: &'a Path,
    pub profile: &'a str,
    pub refine: bool,
}

pub fn eval(config: &Config, seed: u64, args: &EvalArgs<'_>) -> Result<Value, CliError> {
    let files = scene_files(args.scenes)?;
    if files.is_empty() {
        return Err(CliError::runtime(format!("no scene files in {}", args.scenes.display())));
    }
    let rows: Vec<CsvRow> = files
        .par_iter()
        .map(|path| {
            let (scene, votes) = load_scene(path)?;
            let bundle = scene_bundle(&scene, votes, config, args.profile)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(rows_for(&name, &scene, &recover_scene(&scene, &bundle, config, args.refine)))
        })
        .collect::<Result<Vec<_>, CliError>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut methods = BTreeMap::new();
    for method in ["regression", "votes", "refined"] {
        let subset: Vec<&CsvRow> = rows.iter().filter(|r| r.method == method).collect();
        if !subset.is_empty() {
            methods.insert(method.to_string(), summarize(&subset)?);
        }
    }

    let csv_path = args.out.with_extension("csv");
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row).map_err(|e| CliError::runtime(format!("csv: {e}")))?;
    }
    let csv_bytes = writer.into_inner().map_err(|e| CliError::runtime(format!("csv: {e}")))?;

    let report = Report {
        format_version: FORMAT_VERSION,
        tool_version: TOOL_VERSION.into(),
        config_hash: config.hash(),
        seed,
        noise_profile: args.profile.to_string(),
        refine: args.refine,
        iou_samples: config.eval.iou_samples,
        scenes: files.len(),
        methods,
        rows_csv: csv_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(&csv_path, &csv_bytes)?;
    write_atomic(args.out, &to_json(&report))?;
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

pub fn recover(config: &Config, scene_path: &Path, profile: &str, refine: bool) -> Result<Value, CliError> {
    let (scene, votes) = load_scene(scene_path)?;
    let bundle = scene_bundle(&scene, votes, config, profile)?;
    let outcomes = recover_scene(&scene, &bundle, config, refine);
    if outcomes.iter().all(|o| o.result.is_err()) {
        let msgs: Vec<String> = outcomes.iter().filter_map(|o| o.result.as_ref().err().cloned()).collect();
        return Err(CliError::runtime(format!("every recovery failed: {}", msgs.join("; "))));
    }
    let methods: BTreeMap<&str, Value> = outcomes
        .iter()
        .map(|o| {
            let v = match &o.result {
                Ok((pose, e, iou)) => json!({
                    "ok": true,
                    "pose": PoseJson::from_pose(pose),
                    "rotation_deg": e.rotation_deg,
                    "translation_m": e.translation_m,
                    "iou": iou.iou,
                    "iou_std_err": iou.std_err,
                }),
                Err(msg) => json!({ "ok": false, "error": msg }),
            };
            (o.method, v)
        })
        .collect();
    Ok(json!({
        "format_version": FORMAT_VERSION,
        "scene": scene_path.display().to_string(),
        "noise_profile": profile,
        "gt": PoseJson::from_pose(&scene.gt),
        "methods": methods,
    }))
}

pub fn audit_loss(config: &Config, scene_path: &Path, pose_path: Option<&Path>) -> Result<(Value, LossBreakdown), CliError> {
    let (scene, votes) = load_scene(scene_path)?;
    let bundle = scene_bundle(&scene, votes, config, "noiseless")?;
    let pose = match pose_path {
        Some(p) => read_json::<PoseJson>(p)?.to_pose()?,
        None => scene.gt,
    };
    let planes = fit_face_planes(&scene.cloud, &bundle.votes)?;
    let inputs = LossInputs {
        cloud: &scene.cloud,
        pred: &pose,
        planes: &planes,
        visible: &scene.visible_faces,
        basic: BasicInputs {
            gt: Some(&scene.gt),
            rotation: Some(&bundle.rotation),
            votes: Some(&bundle.votes),
            reconstruction: Some(&bundle.reconstruction),
            symmetry: *scene.symmetry(),
        },
    };
    let b = total_loss(&inputs, &config.loss)?;
    let w = &config.loss.weights;
    let terms: BTreeMap<&str, f64> = b.named_terms().into_iter().collect();
    let value = json!({
        "format_version": FORMAT_VERSION,
        "scene": scene_path.display().to_string(),
        "pose": if pose_path.is_some() { "supplied" } else { "gt" },
        "terms": terms,
        "groups": { "basic": b.basic(w), "pc": b.pc(w), "bb": b.bb(w) },
        "weights": w,
        "total": b.total,
    });
    Ok((value, b))
}

pub struct GradCheckArgs {
    pub points: usize,
    pub eps: f64,
    pub tol: f64,
    /// Test hook: scales the analytic pc gradient so the check must fail.
    pub break_gradient: bool,
}

pub const GRADCHECKED: [&str; 4] = ["pc_rt", "bb_r", "bb_t", "bb_s"];

pub fn gradcheck(config: &Config, seed: u64, args: &GradCheckArgs) -> Result<(Value, bool), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    let (mut checked, mut skipped, mut attempt) = (0usize, 0usize, 0u64);
    let max_attempts = 20 * args.points as u64 + 20;
    while checked < args.points && attempt < max_attempts {
        let shape = Shape::ALL[(attempt % 3) as usize];
        let scene = build_scene(config, shape.name(), scene_seed(seed, attempt))?;
        attempt += 1;
        let planes = FacePlanes::of_pose(&scene.gt);
        let step: [f64; 9] = std::array::from_fn(|k| match k {
            0..=2 => rng.random_range(-0.1..0.1),
            3..=5 => rng.random_range(-0.03..0.03),
            _ => rng.random_range(-0.02..0.02),
        });
        let Ok(pose) = perturb(&scene.gt, &step) else { continue };
        let (_, mut g_pc) = pc_pose_loss_grad(&scene.cloud, &pose)?;
        if args.break_gradient {
            g_pc = g_pc * 1.01;
        }
        let (_, [g_r, g_t, g_s]) = bb_pose_loss_grad(&pose, &planes);
        let reports: [GradCheckReport; 4] = [
            grad_check(|p| pc_pose_loss(&scene.cloud, p), &g_pc, &pose, args.eps)?,
            grad_check(|p| Ok(bb_pose_loss(p, &planes).rotation), &g_r, &pose, args.eps)?,
            grad_check(|p| Ok(bb_pose_loss(p, &planes).translation), &g_t, &pose, args.eps)?,
            grad_check(|p| Ok(bb_pose_loss(p, &planes).size), &g_s, &pose, args.eps)?,
        ];
        if reports.iter().any(|r| r.non_smooth) {
            skipped += 1;
            continue;
        }
        checked += 1;
        for (w, r) in worst.iter_mut().zip(&reports) {
            *w = w.max(r.max_rel_error);
        }
    }
    if checked < args.points {
        return Err(CliError::runtime(format!("only {checked} of {} draws were smooth", args.points)));
    }
    let pass = worst.iter().all(|&w| w <= args.tol);
    let losses: BTreeMap<&str, f64> = GRADCHECKED.into_iter().zip(worst).collect();
    let value = json!({
        "points": checked,
        "skipped_non_smooth": skipped,
        "eps": args.eps,
        "tol": args.tol,
        "max_rel_error": losses,
        "pass": pass,
    });
    Ok((value, pass))
}

pub fn iou(a: &Path, b: &Path, axis: Option<[f64; 3]>, samples: usize, seed: u64) -> Result<Value, CliError> {
    let pa = read_json::<PoseJson>(a)?.to_pose()?;
    let pb = read_json::<PoseJson>(b)?.to_pose()?;
    let sym = match axis {
        Some(axis) => SymmetryType::rotational(Vec3::from(axis)).map_err(|e| CliError::usage(format!("--axis: {e}")))?,
        None => SymmetryType::None,
    };
    let est = symmetric_iou(&pa, &pb, &sym, samples, seed)?;
    let err = pose_error(&pa, &pb, &sym);
    Ok(json!({
        "iou": est.iou,
        "std_err": est.std_err,
        "samples": est.samples,
        "seed": seed,
        "rotation_deg": err.rotation_deg,
        "translation_m": err.translation_m,
    }))
}
