//! Run configuration: one TOML file holding every hyperparameter.

use std::collections::BTreeMap;
use std::path::Path;

use gpv_core::losses::LossParams;
use gpv_core::solver::RefineConfig;
use gpv_core::synth::{NoiseSpec, Shape, DEFAULT_POINTS};
use gpv_core::{CategoryPrior, SymmetryType, Vec3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DEFAULT_TOML: &str = include_str!("../../../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub loss: LossParams,
    pub refine: RefineConfig,
    pub gen: GenConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradCheckConfig,
    /// Named bundle corruption profiles.
    pub noise: BTreeMap<String, NoiseSpec>,
    /// Category prior per shape name.
    pub categories: BTreeMap<String, CategoryConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            loss: LossParams::default(),
            refine: RefineConfig::default(),
            gen: GenConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradCheckConfig::default(),
            noise: default_noise(),
            categories: default_categories(),
        }
    }
}

fn default_noise() -> BTreeMap<String, NoiseSpec> {
    let realistic = NoiseSpec {
        normal_sigma: 0.02,
        t_sigma: 0.005,
        s_sigma: 0.005,
        vote_endpoint_sigma: 0.005,
        outlier_vote_fraction: 0.2,
        ..NoiseSpec::default()
    };
    BTreeMap::from([("noiseless".into(), NoiseSpec::default()), ("default".into(), realistic)])
}

fn default_categories() -> BTreeMap<String, CategoryConfig> {
    let cat = |mean_size, symmetry| CategoryConfig { mean_size, symmetry };
    BTreeMap::from([
        ("box".into(), cat([0.2, 0.15, 0.25], SymmetryConfig::None)),
        ("cylinder".into(), cat([0.08, 0.2, 0.08], SymmetryConfig::Rotational { axis: [0.0, 1.0, 0.0] })),
        ("laptop".into(), cat([0.32, 0.22, 0.24], SymmetryConfig::Reflection { normal: [1.0, 0.0, 0.0] })),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub shapes: Vec<String>,
    pub n: usize,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Per-axis size is the category mean times `U(1 − jitter, 1 + jitter)`.
    pub size_jitter: f64,
    pub votes: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            shapes: vec!["box".into(), "cylinder".into(), "laptop".into()],
            n: 100,
            n_points: DEFAULT_POINTS,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            size_jitter: 0.2,
            votes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub noise_profile: String,
    pub iou_samples: usize,
    pub refine: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { noise_profile: "noiseless".into(), iou_samples: 100_000, refine: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub points: usize,
    pub eps: f64,
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { points: 50, eps: 1e-7, tol: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SymmetryConfig {
    None,
    Reflection { normal: [f64; 3] },
    Rotational { axis: [f64; 3] },
}

impl SymmetryConfig {
    pub fn to_core(self) -> gpv_core::Result<SymmetryType> {
        match self {
            SymmetryConfig::None => Ok(SymmetryType::None),
            SymmetryConfig::Reflection { normal } => SymmetryType::reflection(Vec3::from(normal)),
            SymmetryConfig::Rotational { axis } => SymmetryType::rotational(Vec3::from(axis)),
        }
    }

    pub fn from_core(sym: &SymmetryType) -> Self {
        match sym {
            SymmetryType::None => SymmetryConfig::None,
            SymmetryType::Reflection { normal } => SymmetryConfig::Reflection { normal: (*normal).into() },
            SymmetryType::Rotational { axis } => SymmetryConfig::Rotational { axis: (*axis).into() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryConfig {
    /// Full extents, meters.
    pub mean_size: [f64; 3],
    pub symmetry: SymmetryConfig,
}

impl Config {
    /// Parses the file (or the bundled defaults). Callers apply flag
    /// overrides and then [`Config::validate`].
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        Ok(match path {
            None => toml::from_str(DEFAULT_TOML).expect("bundled default config parses"),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
            }
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        fn key(k: &str) -> impl FnOnce(gpv_core::GeomError) -> CliError + '_ {
            move |e| CliError::usage(format!("{k}: {e}"))
        }
        self.loss.validate().map_err(key("loss"))?;
        self.refine.validate().map_err(key("refine"))?;
        for (name, spec) in &self.noise {
            spec.validate().map_err(key(&format!("noise.{name}")))?;
        }
        for name in self.categories.keys() {
            name.parse::<Shape>().map_err(key(&format!("categories.{name}")))?;
            self.prior(name)?;
        }
        for shape in &self.gen.shapes {
            shape.parse::<Shape>().map_err(key("gen.shapes"))?;
            if !self.categories.contains_key(shape) {
                return Err(CliError::usage(format!("gen.shapes: no category entry for `{shape}`")));
            }
        }
        if !(0.0..1.0).contains(&self.gen.size_jitter) {
            return Err(CliError::usage("gen.size_jitter must be in [0, 1)"));
        }
        if !self.noise.contains_key(&self.eval.noise_profile) {
            return Err(CliError::usage(format!("eval.noise_profile: unknown profile `{}`", self.eval.noise_profile)));
        }
        if self.eval.iou_samples == 0 {
            return Err(CliError::usage("eval.iou_samples must be positive"));
        }
        if !(self.gradcheck.eps > 0.0) {
            return Err(CliError::usage(format!("gradcheck.eps must be positive, got {}", self.gradcheck.eps)));
        }
        Ok(())
    }

    pub fn prior(&self, shape: &str) -> Result<CategoryPrior, CliError> {
        let cat = self
            .categories
            .get(shape)
            .ok_or_else(|| CliError::usage(format!("categories: no entry for `{shape}`")))?;
        let sym = cat.symmetry.to_core().map_err(|e| CliError::usage(format!("categories.{shape}.symmetry: {e}")))?;
        CategoryPrior::new(Vec3::from(cat.mean_size), sym).map_err(|e| CliError::usage(format!("categories.{shape}: {e}")))
    }

    pub fn noise_profile(&self, name: &str) -> Result<NoiseSpec, CliError> {
        self.noise
            .get(name)
            .copied()
            .ok_or_else(|| CliError::usage(format!("unknown noise profile `{name}`")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
