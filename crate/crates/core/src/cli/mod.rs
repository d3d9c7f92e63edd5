//! Command-line front-end: `solve`, `evaluate`, `simulate`, `stats`.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 numerical or
//! solver failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    ap_curves, match_detections, metric_table, EvalError, EvalOptions, GroundTruth, MetricAxis, Prediction,
    TableThresholds,
};
use crate::geometry::{CameraIntrinsics, Point2, RigidPose};
use crate::io::{self, read_json, read_json_lines_numbered, to_json_pretty, write_atomic, IoError};
use crate::nocs::{assign, CorrespondenceMatrix, NocsModel};
use crate::pnp::{ransac_pnp, scale_model_points, Correspondence2D3D, PnpError, RansacConfig};
use crate::scale::{compute_stats, recover_scale, CategoryStats};
use crate::synth::{run_grid, GridConfig, PredictorChoice, ScaleErrorMode};

pub const OUTPUT_DIR_ENV: &str = "CATPOSE_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Input(String),
    #[error("solver failure ({kind}): {message}")]
    Solver { kind: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Input(_) => 1,
            CliError::Solver { .. } => 2,
        }
    }
}

/// Name of an enum variant from its `Debug` rendering.
fn variant_name<E: std::fmt::Debug>(e: &E) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default().to_string()
}

impl From<PnpError> for CliError {
    fn from(e: PnpError) -> Self {
        match e {
            PnpError::InvalidConfig(m) => CliError::Input(m),
            PnpError::NonPositiveScale(_) => CliError::Input(e.to_string()),
            other => CliError::Solver {
                kind: variant_name(&other),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "catpose", version, about = "Decoupled scale/pose recovery, RANSAC-PnP and NOCS-style evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover metric scale and pose for one object from 2D-3D correspondences.
    Solve(SolveArgs),
    /// Score predictions against ground truth: mAP table and AP curves.
    Evaluate(EvaluateArgs),
    /// Run the synthetic decoupled-versus-coupled experiment grid.
    Simulate(SimulateArgs),
    /// Per-category scale statistics from a ground-truth scale listing.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct RansacArgs {
    /// Inlier threshold on reprojection error, pixels.
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 0.999)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RansacArgs {
    fn config(&self) -> RansacConfig {
        RansacConfig {
            reprojection_threshold: self.threshold,
            max_iterations: self.max_iterations,
            confidence: self.confidence,
            rng_seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    /// `Δs = 0`: use the category mean scale.
    MeanScale,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// JSON array of `{"image": [u, v], "model": [x, y, z]}`, model points
    /// in normalized object coordinates.
    #[arg(long, required_unless_present = "pixels", conflicts_with_all = ["pixels", "model", "matrix"])]
    pub correspondences: Option<PathBuf>,
    /// JSON array of `[u, v]` observations; requires `--model` and `--matrix`.
    #[arg(long, requires_all = ["model", "matrix"])]
    pub pixels: Option<PathBuf>,
    /// Normalized model, `{"category": ..., "points": [[x, y, z], ...]}`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Row-stochastic correspondence matrix from observations to model points.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Camera intrinsics, `{"fx": .., "fy": .., "cx": .., "cy": ..}`.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// JSON array of category statistics.
    #[arg(long)]
    pub stats: PathBuf,
    /// Category to take the mean scale from; optional when the stats file
    /// holds a single entry.
    #[arg(long)]
    pub category: Option<String>,
    /// Relative scale offset Δs.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "predictor")]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorArg>,
    #[command(flatten)]
    pub ransac: RansacArgs,
    /// Output JSON path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON-lines predictions `{category, confidence, pose, scale, canonical_extents[, image_id]}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSON-lines ground truth, same fields without `confidence`.
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = ".")]
    pub output_dir: PathBuf,
    /// Symmetry-aware rotation error for bottle, bowl and can.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub symmetry: Toggle,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75])]
    pub iou_thresholds: Vec<f64>,
    /// Degrees.
    #[arg(long, default_value_t = 10.0)]
    pub rot_threshold: f64,
    /// Centimeters.
    #[arg(long, default_value_t = 10.0)]
    pub trans_threshold: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON grid configuration; its fields override the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    /// Pixel noise levels, px.
    #[arg(long, value_delimiter = ',')]
    pub pixel_noise: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub outlier_fractions: Option<Vec<f64>>,
    /// Relative scale errors.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub scale_errors: Option<Vec<f64>>,
    /// Relative depth noise levels.
    #[arg(long, value_delimiter = ',')]
    pub depth_noise: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub predictor: Option<PredictorFlag>,
    #[arg(long, value_enum)]
    pub scale_error_mode: Option<ScaleModeFlag>,
    /// Per-trial CSV; defaults to `simulate.csv` in the output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = ".")]
    pub output_dir: PathBuf,
    /// Optional per-cell summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorFlag {
    Oracle,
    MeanScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleModeFlag {
    Systematic,
    Stochastic,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// JSON-lines `{"category": .., "scale": ..}`.
    #[arg(long)]
    pub input: PathBuf,
    /// Stats JSON; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional CSV of σ_s per category.
    #[arg(long)]
    pub sigma_csv: Option<PathBuf>,
}

/// Parses `std::env::args`, runs, reports errors on stderr and returns the
/// process exit code.
pub fn main_exit_code() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Stats(a) => cmd_stats(&a),
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Written by `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub category: String,
    pub delta: f64,
    /// Metric scale used for the model points, meters.
    pub scale: f64,
    pub pose: RigidPose,
    pub inlier_count: usize,
    pub inlier_mask: Vec<bool>,
    pub mean_reprojection_error: f64,
    pub iterations_used: usize,
    pub rng_seed: u64,
}

fn pick_stats(path: &Path, category: Option<&str>) -> Result<CategoryStats, CliError> {
    let all: Vec<CategoryStats> = read_json(path)?;
    match category {
        Some(c) => all
            .into_iter()
            .find(|s| s.category == c)
            .ok_or_else(|| CliError::Input(format!("{}: no statistics for category {c:?}", path.display()))),
        None if all.len() == 1 => Ok(all.into_iter().next().expect("one entry")),
        None => Err(CliError::Input(format!(
            "{}: {} categories listed, pass --category",
            path.display(),
            all.len()
        ))),
    }
}

pub fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    let k: CameraIntrinsics = read_json(&a.intrinsics)?;
    let stats = pick_stats(&a.stats, a.category.as_deref())?;
    let delta = match (a.delta, a.predictor) {
        (Some(d), _) => d,
        (None, Some(PredictorArg::MeanScale)) | (None, None) => 0.0,
    };
    let pred = recover_scale(&stats, delta).map_err(|e| CliError::Input(e.to_string()))?;

    let (pixels, model_pts) = match (&a.correspondences, &a.pixels, &a.model, &a.matrix) {
        (Some(p), ..) => {
            let corr: Vec<Correspondence2D3D> = read_json(p)?;
            corr.into_iter().map(|c| (c.image, c.model)).unzip()
        }
        (None, Some(px), Some(m), Some(c)) => {
            let pixels: Vec<[f64; 2]> = read_json(px)?;
            let model: NocsModel = read_json(m)?;
            let matrix: CorrespondenceMatrix = read_json(c)?;
            let pts = assign(&matrix, &model).map_err(|e| CliError::Input(format!("{}: {e}", c.display())))?;
            if pts.len() != pixels.len() {
                return Err(CliError::Input(format!(
                    "{} observations but the correspondence matrix has {} rows",
                    pixels.len(),
                    pts.len()
                )));
            }
            (pixels.into_iter().map(|[u, v]| Point2::new(u, v)).collect::<Vec<_>>(), pts)
        }
        _ => return Err(CliError::Input("pass --correspondences or --pixels with --model and --matrix".into())),
    };
    let scaled = scale_model_points(pred.scale, &model_pts)?;
    let corr: Vec<Correspondence2D3D> = pixels
        .into_iter()
        .zip(scaled)
        .map(|(px, m)| Correspondence2D3D::new(px, m))
        .collect();
    let cfg = a.ransac.config();
    let res = ransac_pnp(&corr, &k, &cfg)?;
    let out = SolveOutput {
        category: stats.category.clone(),
        delta,
        scale: pred.scale,
        pose: res.pose,
        inlier_count: res.inlier_count(),
        inlier_mask: res.inlier_mask.clone(),
        mean_reprojection_error: res.mean_reprojection_error,
        iterations_used: res.iterations_used,
        rng_seed: cfg.rng_seed,
    };
    emit(a.output.as_deref(), &to_json_pretty(&out))
}

fn eval_input(e: EvalError) -> CliError {
    CliError::Input(e.to_string())
}

/// Reads a JSON-lines file and validates every record, reporting the line
/// of the first bad one.
fn read_validated<T, F>(path: &Path, check: F) -> Result<Vec<T>, CliError>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> Result<(), EvalError>,
{
    let rows: Vec<(usize, T)> = read_json_lines_numbered(path)?;
    rows.into_iter()
        .map(|(line, v)| {
            check(&v).map_err(|e| {
                CliError::Io(IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
            })?;
            Ok(v)
        })
        .collect()
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let preds: Vec<Prediction> = read_validated(&a.predictions, Prediction::validate)?;
    let gts: Vec<GroundTruth> = read_validated(&a.ground_truth, GroundTruth::validate)?;
    let opts = EvalOptions {
        symmetry: a.symmetry == Toggle::On,
    };
    let thresholds = TableThresholds {
        iou: a.iou_thresholds.clone(),
        translation_cm: a.trans_threshold,
        rotation_deg: a.rot_threshold,
    };
    let set = match_detections(&preds, &gts).map_err(eval_input)?;
    let table = metric_table(&set, &thresholds, &opts).map_err(eval_input)?;
    for w in table.warnings() {
        eprintln!("{w}");
    }
    let dir = &a.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_atomic(&dir.join("metrics.csv"), table.to_csv().as_bytes())?;
    let text = table.to_text();
    write_atomic(&dir.join("metrics.txt"), text.as_bytes())?;
    for axis in [MetricAxis::Iou, MetricAxis::Rotation, MetricAxis::Translation] {
        let curves = ap_curves(&set, axis, &axis.default_grid(), &opts).map_err(eval_input)?;
        write_atomic(&dir.join(format!("ap_{}.csv", axis.name())), curves.to_csv().as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

/// Overlays the keys of `patch` onto `base`, recursing into objects.
fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Grid configuration from flags, then overridden by the config file.
pub fn simulate_config(a: &SimulateArgs) -> Result<GridConfig, CliError> {
    let mut cfg = GridConfig::default();
    if let Some(v) = &a.categories {
        cfg.categories = v.clone();
    }
    if let Some(v) = &a.pixel_noise {
        cfg.pixel_noise = v.clone();
    }
    if let Some(v) = &a.outlier_fractions {
        cfg.outlier_fractions = v.clone();
    }
    if let Some(v) = &a.scale_errors {
        cfg.scale_errors = v.clone();
    }
    if let Some(v) = &a.depth_noise {
        cfg.depth_noise = v.clone();
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.seed {
        cfg.master_seed = v;
    }
    if let Some(p) = a.predictor {
        cfg.predictor = match p {
            PredictorFlag::Oracle => PredictorChoice::Oracle,
            PredictorFlag::MeanScale => PredictorChoice::MeanScale,
        };
    }
    if let Some(m) = a.scale_error_mode {
        cfg.scale_error_mode = match m {
            ScaleModeFlag::Systematic => ScaleErrorMode::Systematic,
            ScaleModeFlag::Stochastic => ScaleErrorMode::Stochastic,
        };
    }
    if let Some(path) = &a.config {
        let patch: serde_json::Value = read_json(path)?;
        if !patch.is_object() {
            return Err(CliError::Input(format!("{}: configuration must be a JSON object", path.display())));
        }
        let mut base = serde_json::to_value(&cfg).expect("config serializes");
        merge_json(&mut base, patch);
        cfg = serde_json::from_value(base).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = simulate_config(a)?;
    let output = match &a.output {
        Some(p) => p.clone(),
        None => a.output_dir.join("simulate.csv"),
    };
    let out = run_grid(&cfg).map_err(|e| match e {
        crate::synth::SynthError::InvalidConfig(_)
        | crate::synth::SynthError::UnknownCategory(_)
        | crate::synth::SynthError::InvalidNoise(_)
        | crate::synth::SynthError::InvalidPointCount(_) => CliError::Input(e.to_string()),
        other => CliError::Solver {
            kind: variant_name(&other),
            message: other.to_string(),
        },
    })?;
    write_atomic(&output, out.trials_csv().as_bytes())?;
    if let Some(s) = &a.summary {
        write_atomic(s, out.summary_csv().as_bytes())?;
    }
    println!("pipeline   pixel  outliers  scale_err  depth_noise  median_rot_deg  median_trans_cm");
    for (p, n, rot, trans) in out.arm_medians() {
        println!(
            "{:<9}  {:>5}  {:>8}  {:>9}  {:>11}  {:>14.4}  {:>15.4}",
            p.name(),
            n.pixel_noise_sigma,
            n.outlier_fraction,
            n.scale_rel_error,
            n.depth_rel_noise,
            rot,
            trans
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ScaleListing {
    category: String,
    scale: f64,
}

pub fn cmd_stats(a: &StatsArgs) -> Result<(), CliError> {
    let rows: Vec<(usize, ScaleListing)> = read_json_lines_numbered(&a.input)?;
    let mut by_cat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (line, r) in rows {
        if !(r.scale > 0.0) || !r.scale.is_finite() {
            return Err(IoError::Parse {
                path: a.input.clone(),
                line,
                message: format!("scale must be positive, got {}", r.scale),
            }
            .into());
        }
        by_cat.entry(r.category).or_default().push(r.scale);
    }
    if by_cat.is_empty() {
        return Err(CliError::Input(format!("{}: no scale records", a.input.display())));
    }
    let stats: Vec<CategoryStats> = by_cat
        .iter()
        .map(|(c, v)| compute_stats(c, v))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(p) = &a.sigma_csv {
        let header = ["category", "std_dev", "mean_scale", "relative_std_dev", "count"].map(String::from);
        let rows: Vec<Vec<String>> = stats
            .iter()
            .map(|s| {
                vec![
                    s.category.clone(),
                    io::fmt_f64(s.std_dev),
                    io::fmt_f64(s.mean_scale),
                    io::fmt_f64(s.std_dev / s.mean_scale),
                    s.count.to_string(),
                ]
            })
            .collect();
        write_atomic(p, io::csv_string(&header, &rows).as_bytes())?;
    }
    emit(a.output.as_deref(), &to_json_pretty(&stats))
}
