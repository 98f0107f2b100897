//! `gpv`: batch front-end for scene generation, evaluation and loss audits.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::commands::{EvalArgs, GradCheckArgs, GRADCHECKED};
use crate::config::Config;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "gpv", version, about = "Geometry-guided pose voting: synthetic scenes, recovery and metrics")]
struct Cli {
    /// TOML configuration; the bundled defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scene files and a manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated shape names (overrides gen.shapes).
        #[arg(long, value_delimiter = ',')]
        shapes: Option<Vec<String>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Recover every scene in a directory and write a report and CSV rows.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        /// Report JSON; the CSV goes next to it with a .csv extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        noise_profile: Option<String>,
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        iou_samples: Option<usize>,
    },
    /// Recover one scene and print the poses and their errors.
    Recover {
        scene: PathBuf,
        #[arg(long)]
        noise_profile: Option<String>,
        #[arg(long)]
        refine: bool,
    },
    /// Print every loss term and the weighted total at a pose.
    AuditLoss {
        scene: PathBuf,
        /// Pose JSON; defaults to the scene's ground truth.
        #[arg(long)]
        pose: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        #[arg(long)]
        points: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        eps: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, hide = true)]
        break_gradient: bool,
    },
    /// Monte-Carlo IoU of two pose files.
    Iou {
        a: PathBuf,
        b: PathBuf,
        /// Rotational symmetry axis, `x,y,z`, in the box frame.
        #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
        axis: Option<Vec<f64>>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn emit(json: bool, value: &Value, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
    } else {
        println!("{}", text());
    }
}

fn num(v: &Value, path: &[&str]) -> f64 {
    path.iter().fold(v, |v, k| &v[*k]).as_f64().unwrap_or(f64::NAN)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut config = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen { shapes, n, n_points, .. } => {
            if let Some(s) = shapes {
                config.gen.shapes = s.clone();
            }
            if let Some(n) = n {
                config.gen.n = *n;
            }
            if let Some(p) = n_points {
                config.gen.n_points = *p;
            }
        }
        Command::Eval { noise_profile, refine, iou_samples, .. } => {
            if let Some(p) = noise_profile {
                config.eval.noise_profile = p.clone();
            }
            config.eval.refine |= refine;
            if let Some(s) = iou_samples {
                config.eval.iou_samples = *s;
            }
        }
        Command::Gradcheck { points, eps, tol, .. } => {
            if let Some(p) = points {
                config.gradcheck.points = *p;
            }
            if let Some(e) = eps {
                config.gradcheck.eps = *e;
            }
            if let Some(t) = tol {
                config.gradcheck.tol = *t;
            }
        }
        _ => {}
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::usage(format!("--jobs: {e}")))?;
    pool.install(|| dispatch(&cli, &config))
}

fn dispatch(cli: &Cli, config: &Config) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Gen { out, .. } => {
            let v = commands::gen(config, cli.seed, out)?;
            emit(cli.json, &v, || {
                format!("wrote {} scenes to {} (manifest sha256 {})", v["scenes"], out.display(), v["manifest_sha256"].as_str().unwrap_or(""))
            });
        }
        Command::Eval { scenes, out, .. } => {
            let args = EvalArgs { scenes, out, profile: &config.eval.noise_profile, refine: config.eval.refine };
            let v = commands::eval(config, cli.seed, &args)?;
            emit(cli.json, &v, || {
                let mut s = format!("{} scenes, noise profile {}\n", v["scenes"], args.profile);
                for (name, m) in v["methods"].as_object().into_iter().flatten() {
                    s += &format!("{name:<11} failures {}", m["failures"]);
                    for group in ["iou", "pose"] {
                        for (k, x) in m[group].as_object().into_iter().flatten() {
                            s += &format!("  {k} {:.3}", x.as_f64().unwrap_or(f64::NAN));
                        }
                    }
                    s.push('\n');
                }
                s + &format!("report written to {}", out.display())
            });
        }
        Command::Recover { scene, noise_profile, refine } => {
            let profile = noise_profile.as_deref().unwrap_or(&config.eval.noise_profile);
            let v = commands::recover(config, scene, profile, *refine || config.eval.refine)?;
            emit(cli.json, &v, || {
                let mut s = String::new();
                for (name, m) in v["methods"].as_object().into_iter().flatten() {
                    if m["ok"].as_bool() == Some(true) {
                        s += &format!(
                            "{name:<11} rotation {:.4}°  translation {:.3} cm  IoU {:.4}\n",
                            num(m, &["rotation_deg"]),
                            num(m, &["translation_m"]) * 100.0,
                            num(m, &["iou"])
                        );
                    } else {
                        s += &format!("{name:<11} failed: {}\n", m["error"].as_str().unwrap_or(""));
                    }
                }
                s.trim_end().to_string()
            });
        }
        Command::AuditLoss { scene, pose } => {
            let (v, b) = commands::audit_loss(config, scene, pose.as_deref())?;
            emit(cli.json, &v, || {
                let mut s = String::new();
                for (name, x) in b.named_terms() {
                    s += &format!("{name:<16} {x:.6e}\n");
                }
                for g in ["basic", "pc", "bb"] {
                    s += &format!("group {g:<10} {:.6e}\n", num(&v, &["groups", g]));
                }
                s + &format!("{:<16} {:.6e}", "total", b.total)
            });
        }
        Command::Gradcheck { break_gradient, .. } => {
            let g = &config.gradcheck;
            let args = GradCheckArgs { points: g.points, eps: g.eps, tol: g.tol, break_gradient: *break_gradient };
            let (v, pass) = commands::gradcheck(config, cli.seed, &args)?;
            emit(cli.json, &v, || {
                let mut s = format!("{} smooth points, eps {:e}, tol {:e}\n", v["points"], args.eps, args.tol);
                for name in GRADCHECKED {
                    let e = num(&v, &["max_rel_error", name]);
                    s += &format!("{name:<6} {e:.3e}  {}\n", if e <= args.tol { "ok" } else { "FAIL" });
                }
                s.trim_end().to_string()
            });
            if !pass {
                eprintln!("gpv: gradient check failed");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Iou { a, b, axis, samples } => {
            let axis = axis.as_ref().map(|v| [v[0], v[1], v[2]]);
            let n = samples.unwrap_or(config.eval.iou_samples);
            if n == 0 {
                return Err(CliError::usage("--samples must be positive"));
            }
            let v = commands::iou(a, b, axis, n, cli.seed)?;
            emit(cli.json, &v, || format!("IoU {:.4} ± {:.4} ({} samples)", num(&v, &["iou"]), num(&v, &["std_err"]), v["samples"]));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gpv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
