use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    category_index, corrupt, run_coupled, run_decoupled, sample_scene, ExperimentResult, NoiseSpec, Pipeline,
    SceneConfig, SynthError, CATEGORIES,
};
use crate::eval::{metric_table, DetectionRecord, EvalOptions, RecordSet, TableThresholds};
use crate::io::{csv_string, fmt_f64};
use crate::pnp::RansacConfig;
use crate::scale::{
    mean_scale_predictor, noisy_oracle_predictor, CategoryStats, ScalePredictor, SystematicPredictor,
};

/// Made-up metric size statistics (bbox diagonal, meters) for the six
/// procedural categories.
pub fn default_category_stats() -> Vec<CategoryStats> {
    [
        ("bottle", 0.25, 0.05),
        ("bowl", 0.18, 0.03),
        ("camera", 0.17, 0.04),
        ("can", 0.15, 0.02),
        ("laptop", 0.45, 0.08),
        ("mug", 0.15, 0.02),
    ]
    .into_iter()
    .map(|(c, m, s)| CategoryStats::new(c, m, s, 100).expect("valid constants"))
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorChoice {
    /// Ground-truth offset corrupted per `scale_error_mode`.
    Oracle,
    /// Category mean, `Δs = 0`.
    MeanScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleErrorMode {
    /// `ŝ = s_gt · (1 + e)`.
    Systematic,
    /// `Δs = Δs_gt + N(0, e)`.
    Stochastic,
}

/// Factorial experiment over noise settings, categories and trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub categories: Vec<String>,
    pub pixel_noise: Vec<f64>,
    pub outlier_fractions: Vec<f64>,
    pub scale_errors: Vec<f64>,
    pub depth_noise: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub predictor: PredictorChoice,
    pub scale_error_mode: ScaleErrorMode,
    pub ransac: RansacConfig,
    pub scene: SceneConfig,
    pub category_stats: Vec<CategoryStats>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            categories: CATEGORIES.iter().map(|c| c.to_string()).collect(),
            pixel_noise: vec![0.0],
            outlier_fractions: vec![0.0],
            scale_errors: vec![0.0],
            depth_noise: vec![0.0, 0.02, 0.05, 0.1],
            trials: 20,
            master_seed: 0,
            predictor: PredictorChoice::Oracle,
            scale_error_mode: ScaleErrorMode::Systematic,
            ransac: RansacConfig::default(),
            scene: SceneConfig::default(),
            category_stats: default_category_stats(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.trials < 1 {
            return bad("trials must be at least 1");
        }
        if self.categories.is_empty() {
            return bad("at least one category is required");
        }
        for (name, list) in [
            ("pixel_noise", &self.pixel_noise),
            ("outlier_fractions", &self.outlier_fractions),
            ("scale_errors", &self.scale_errors),
            ("depth_noise", &self.depth_noise),
        ] {
            if list.is_empty() {
                return bad(&format!("{name} must list at least one value"));
            }
        }
        for c in &self.categories {
            category_index(c)?;
            self.stats_for(c)?;
        }
        for np in self.noise_points() {
            np.validate()?;
            if self.scale_error_mode == ScaleErrorMode::Systematic && np.scale_rel_error <= -1.0 {
                return bad("systematic scale errors must exceed -1");
            }
            if self.scale_error_mode == ScaleErrorMode::Stochastic && np.scale_rel_error < 0.0 {
                return bad("stochastic scale errors are noise levels and must be non-negative");
            }
        }
        self.scene.validate()?;
        self.ransac.validate()?;
        Ok(())
    }

    fn stats_for(&self, category: &str) -> Result<&CategoryStats, SynthError> {
        self.category_stats
            .iter()
            .find(|s| s.category == category)
            .ok_or_else(|| SynthError::InvalidConfig(format!("no scale statistics for category {category:?}")))
    }

    /// Noise points in nested order: pixel noise, outliers, scale error,
    /// depth noise (last varies fastest).
    pub fn noise_points(&self) -> Vec<NoiseSpec> {
        let mut out = Vec::new();
        for &p in &self.pixel_noise {
            for &o in &self.outlier_fractions {
                for &s in &self.scale_errors {
                    for &d in &self.depth_noise {
                        out.push(NoiseSpec {
                            pixel_noise_sigma: p,
                            outlier_fraction: o,
                            scale_rel_error: s,
                            depth_rel_noise: d,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Seed for `(category, trial, purpose)`, derived from the master seed.
/// Independent of the noise point so that every noise level sees the same
/// scenes and the same underlying draws.
fn derive_seed(master: u64, category: usize, trial: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((category as u64) << 40) | ((trial as u64) << 4) | purpose);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub pipeline: Pipeline,
    pub category: String,
    pub noise: NoiseSpec,
    pub noise_index: usize,
    pub trial: usize,
    pub scene_seed: u64,
    pub result: Result<ExperimentResult, String>,
    /// Scored form of the trial; `ground_truth` is always set, and a failed
    /// run carries no record.
    pub record: Option<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub pipeline: Pipeline,
    pub category: String,
    pub noise: NoiseSpec,
    pub trials: usize,
    pub failures: usize,
    pub median_rot_err_deg: f64,
    pub mean_rot_err_deg: f64,
    pub median_trans_err_cm: f64,
    pub mean_trans_err_cm: f64,
    pub median_iou: f64,
    /// Percentages under the default table thresholds.
    pub map: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOutput {
    pub trials: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
    pub map_columns: Vec<String>,
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl GridOutput {
    pub const TRIAL_COLUMNS: [&'static str; 17] = [
        "pipeline",
        "category",
        "pixel_noise",
        "outlier_fraction",
        "scale_error",
        "depth_noise",
        "trial",
        "scene_seed",
        "status",
        "rot_err_deg",
        "trans_err_cm",
        "iou",
        "est_scale",
        "gt_scale",
        "translation_ratio",
        "inliers",
        "confidence",
    ];

    /// One row per (pipeline, noise point, category, trial).
    pub fn trials_csv(&self) -> String {
        let header: Vec<String> = Self::TRIAL_COLUMNS.iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = self
            .trials
            .iter()
            .map(|t| {
                let mut row = vec![
                    t.pipeline.name().to_string(),
                    t.category.clone(),
                    fmt_f64(t.noise.pixel_noise_sigma),
                    fmt_f64(t.noise.outlier_fraction),
                    fmt_f64(t.noise.scale_rel_error),
                    fmt_f64(t.noise.depth_rel_noise),
                    t.trial.to_string(),
                    t.scene_seed.to_string(),
                ];
                let gt_scale = t.record.as_ref().and_then(|r| r.ground_truth).map(|g| g.scale);
                match &t.result {
                    Ok(r) => row.extend([
                        "ok".to_string(),
                        fmt_f64(r.rot_err_deg),
                        fmt_f64(r.trans_err_cm),
                        fmt_f64(r.iou),
                        fmt_f64(r.scale),
                        gt_scale.map(fmt_f64).unwrap_or_default(),
                        fmt_f64(r.translation_ratio),
                        r.inliers.to_string(),
                        fmt_f64(r.confidence()),
                    ]),
                    Err(e) => {
                        row.push(format!("error: {e}"));
                        row.extend(std::iter::repeat_n(String::new(), 8));
                    }
                }
                row
            })
            .collect();
        csv_string(&header, &rows)
    }

    pub fn summary_csv(&self) -> String {
        let mut header: Vec<String> = [
            "pipeline",
            "category",
            "pixel_noise",
            "outlier_fraction",
            "scale_error",
            "depth_noise",
            "trials",
            "failures",
            "median_rot_err_deg",
            "mean_rot_err_deg",
            "median_trans_err_cm",
            "mean_trans_err_cm",
            "median_iou",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.map_columns.iter().cloned());
        let rows: Vec<Vec<String>> = self
            .summary
            .iter()
            .map(|s| {
                let mut row = vec![
                    s.pipeline.name().to_string(),
                    s.category.clone(),
                    fmt_f64(s.noise.pixel_noise_sigma),
                    fmt_f64(s.noise.outlier_fraction),
                    fmt_f64(s.noise.scale_rel_error),
                    fmt_f64(s.noise.depth_rel_noise),
                    s.trials.to_string(),
                    s.failures.to_string(),
                    fmt_f64(s.median_rot_err_deg),
                    fmt_f64(s.mean_rot_err_deg),
                    fmt_f64(s.median_trans_err_cm),
                    fmt_f64(s.mean_trans_err_cm),
                    fmt_f64(s.median_iou),
                ];
                row.extend(s.map.iter().map(|&v| fmt_f64(v)));
                row
            })
            .collect();
        csv_string(&header, &rows)
    }

    /// Trials of one pipeline at one noise point, as an evaluation record
    /// set; failed runs count as missed objects.
    pub fn record_set(&self, pipeline: Pipeline, noise_index: usize) -> RecordSet {
        let mut set = RecordSet::default();
        for t in self.trials.iter().filter(|t| t.pipeline == pipeline && t.noise_index == noise_index) {
            match &t.record {
                Some(r) => set.push(r.clone()),
                None => set.add_unmatched_gt(&t.category, 1),
            }
        }
        set
    }

    /// Median rotation and translation errors per pipeline at each noise
    /// point, pooled over categories.
    pub fn arm_medians(&self) -> Vec<(Pipeline, NoiseSpec, f64, f64)> {
        let mut keys: Vec<(usize, Pipeline, NoiseSpec)> = Vec::new();
        for t in &self.trials {
            if !keys.iter().any(|k| k.0 == t.noise_index && k.1 == t.pipeline) {
                keys.push((t.noise_index, t.pipeline, t.noise));
            }
        }
        keys.sort_by_key(|k| (k.0, k.1));
        keys.into_iter()
            .map(|(ni, p, noise)| {
                let ok: Vec<&ExperimentResult> = self
                    .trials
                    .iter()
                    .filter(|t| t.noise_index == ni && t.pipeline == p)
                    .filter_map(|t| t.result.as_ref().ok())
                    .collect();
                let mut rot: Vec<f64> = ok.iter().map(|r| r.rot_err_deg).collect();
                let mut trans: Vec<f64> = ok.iter().map(|r| r.trans_err_cm).collect();
                (p, noise, median(&mut rot), median(&mut trans))
            })
            .collect()
    }
}

struct Job {
    noise_index: usize,
    category: String,
    trial: usize,
}

fn predictor_for(cfg: &GridConfig, noise: &NoiseSpec) -> Result<Box<dyn ScalePredictor>, SynthError> {
    Ok(match (cfg.predictor, cfg.scale_error_mode) {
        (PredictorChoice::MeanScale, _) => Box::new(mean_scale_predictor()),
        (PredictorChoice::Oracle, ScaleErrorMode::Systematic) => Box::new(SystematicPredictor {
            relative_error: noise.scale_rel_error,
        }),
        (PredictorChoice::Oracle, ScaleErrorMode::Stochastic) => {
            Box::new(noisy_oracle_predictor(cfg.master_seed, noise.scale_rel_error)?)
        }
    })
}

fn run_job(cfg: &GridConfig, noise: &NoiseSpec, job: &Job) -> Result<[TrialRow; 2], SynthError> {
    let cat_idx = category_index(&job.category)?;
    let stats = cfg.stats_for(&job.category)?;
    let scene_seed = derive_seed(cfg.master_seed, cat_idx, job.trial, 0);
    let corrupt_seed = derive_seed(cfg.master_seed, cat_idx, job.trial, 1);
    let scene = sample_scene(&job.category, scene_seed, &cfg.scene, stats)?;
    let corrupted = corrupt(&scene, noise, corrupt_seed)?;
    let predictor = predictor_for(cfg, noise)?;
    let ransac = RansacConfig {
        rng_seed: derive_seed(cfg.master_seed, cat_idx, job.trial, 2),
        ..cfg.ransac
    };
    let decoupled = run_decoupled(&scene, &corrupted, predictor.as_ref(), stats, &ransac);
    let coupled = run_coupled(&scene, &corrupted);
    let row = |pipeline, result: Result<ExperimentResult, SynthError>| {
        let result = result.map_err(|e| e.to_string());
        let record = result.as_ref().ok().map(|r| DetectionRecord {
            category: job.category.clone(),
            confidence: r.confidence(),
            estimate: r.estimate(scene.canonical_extents),
            ground_truth: Some(scene.ground_truth()),
            image_id: Some(format!("{}-{}", job.category, job.trial)),
        });
        TrialRow {
            pipeline,
            category: job.category.clone(),
            noise: *noise,
            noise_index: job.noise_index,
            trial: job.trial,
            scene_seed,
            result,
            record,
        }
    };
    Ok([row(Pipeline::Decoupled, decoupled), row(Pipeline::Coupled, coupled)])
}

/// Runs every (noise point, category, trial) cell through both pipelines.
/// Trials run in parallel; output order and content depend only on the
/// configuration. Pipeline failures are recorded per trial, configuration
/// and scene-generation errors abort the grid.
pub fn run_grid(cfg: &GridConfig) -> Result<GridOutput, SynthError> {
    cfg.validate()?;
    let noise_points = cfg.noise_points();
    let mut jobs = Vec::new();
    for ni in 0..noise_points.len() {
        for c in &cfg.categories {
            for trial in 0..cfg.trials {
                jobs.push(Job {
                    noise_index: ni,
                    category: c.clone(),
                    trial,
                });
            }
        }
    }
    let rows: Vec<[TrialRow; 2]> = jobs
        .par_iter()
        .map(|job| run_job(cfg, &noise_points[job.noise_index], job))
        .collect::<Result<_, _>>()?;
    // pipeline-major within each noise point
    let mut trials: Vec<TrialRow> = Vec::with_capacity(rows.len() * 2);
    for ni in 0..noise_points.len() {
        for p in 0..2 {
            trials.extend(rows.iter().filter(|r| r[p].noise_index == ni).map(|r| r[p].clone()));
        }
    }

    let thresholds = TableThresholds::default();
    let map_columns = thresholds.criteria().iter().map(|c| c.label()).collect();
    let opts = EvalOptions { symmetry: false };
    let mut summary = Vec::new();
    for (ni, noise) in noise_points.iter().enumerate() {
        for pipeline in [Pipeline::Decoupled, Pipeline::Coupled] {
            for c in &cfg.categories {
                let cell: Vec<&TrialRow> = trials
                    .iter()
                    .filter(|t| t.noise_index == ni && t.pipeline == pipeline && &t.category == c)
                    .collect();
                let ok: Vec<&ExperimentResult> = cell.iter().filter_map(|t| t.result.as_ref().ok()).collect();
                let mut rot: Vec<f64> = ok.iter().map(|r| r.rot_err_deg).collect();
                let mut trans: Vec<f64> = ok.iter().map(|r| r.trans_err_cm).collect();
                let mut iou: Vec<f64> = ok.iter().map(|r| r.iou).collect();
                let mut set = RecordSet::default();
                for t in &cell {
                    match &t.record {
                        Some(r) => set.push(r.clone()),
                        None => set.add_unmatched_gt(c, 1),
                    }
                }
                let map = metric_table(&set, &thresholds, &opts)?.mean;
                summary.push(SummaryRow {
                    pipeline,
                    category: c.clone(),
                    noise: *noise,
                    trials: cell.len(),
                    failures: cell.len() - ok.len(),
                    mean_rot_err_deg: mean(&rot),
                    median_rot_err_deg: median(&mut rot),
                    mean_trans_err_cm: mean(&trans),
                    median_trans_err_cm: median(&mut trans),
                    median_iou: median(&mut iou),
                    map,
                });
            }
        }
    }
    Ok(GridOutput {
        trials,
        summary,
        map_columns,
    })
}
