//! Synthetic experiments: procedural objects placed in front of a pinhole
//! camera, controllable corruption, and the two pose pipelines compared
//! side by side (metric scale + PnP versus depth back-projection +
//! similarity alignment).

mod grid;
mod shapes;

pub use grid::{
    default_category_stats, run_grid, GridConfig, GridOutput, PredictorChoice, ScaleErrorMode, SummaryRow, TrialRow,
};
pub use shapes::{category_index, make_canonical_model, CanonicalModel, CATEGORIES, MIN_POINTS};

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{box_from_estimate, iou3d, EvalError, ObjectEstimate};
use crate::geometry::{
    backproject, project, rotation_error_deg, translation_error_cm, umeyama_align, CameraIntrinsics, GeometryError,
    Point2, Point3, RigidPose, RotationMatrix,
};
use crate::nocs::{assign, CorrespondenceMatrix, NocsError, NocsModel};
use crate::pnp::{ransac_pnp, scale_model_points, Correspondence2D3D, PnpError, RansacConfig};
use crate::scale::{CategoryStats, ScaleError, ScaleObservation, ScalePredictor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("need at least {min} model points, got {0}", min = MIN_POINTS)]
    InvalidPointCount(usize),
    #[error("could not place the object inside the frame after {0} attempts")]
    PlacementFailed(usize),
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Nocs(#[from] NocsError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(577.5, 577.5, 319.5, 239.5).expect("valid constants")
}

/// Camera and placement settings for scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    pub image_width: u32,
    pub image_height: u32,
    /// Points sampled on the canonical model.
    pub model_points: usize,
    /// Model points observed in the image.
    pub observed_points: usize,
    /// Range of the object center's depth, meters.
    pub depth_range: [f64; 2],
    pub max_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            intrinsics: default_intrinsics(),
            image_width: 640,
            image_height: 480,
            model_points: 512,
            observed_points: 128,
            depth_range: [0.5, 1.2],
            max_attempts: 100,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.model_points < MIN_POINTS {
            return Err(SynthError::InvalidPointCount(self.model_points));
        }
        if self.observed_points < 4 || self.observed_points > self.model_points {
            return bad(format!(
                "observed_points must lie in [4, {}], got {}",
                self.model_points, self.observed_points
            ));
        }
        let [lo, hi] = self.depth_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("depth_range must satisfy 0 < lo <= hi, got {:?}", self.depth_range));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        Ok(())
    }
}

/// Ground truth for one generated object and its exact observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub category: String,
    pub gt_pose: RigidPose,
    pub gt_scale: f64,
    pub model: NocsModel,
    pub canonical_extents: [f64; 3],
    pub intrinsics: CameraIntrinsics,
    pub image_size: [u32; 2],
    /// Model point index of each observation.
    pub observed: Vec<usize>,
    pub pixels: Vec<Point2>,
    pub depths: Vec<f64>,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn ground_truth(&self) -> ObjectEstimate {
        ObjectEstimate {
            pose: self.gt_pose,
            scale: self.gt_scale,
            canonical_extents: self.canonical_extents,
        }
    }

    /// Model points (NOCS units) in observation order.
    pub fn observed_model_points(&self) -> Vec<Point3> {
        self.observed.iter().map(|&i| self.model.points()[i]).collect()
    }

    /// One-hot correspondence matrix selecting the observed model points.
    pub fn correspondence_matrix(&self) -> Result<CorrespondenceMatrix, NocsError> {
        CorrespondenceMatrix::one_hot(&self.observed, self.model.len())
    }

    /// Exact pixel/metric-model pairs at the ground-truth scale.
    pub fn exact_correspondences(&self) -> Vec<Correspondence2D3D> {
        self.pixels
            .iter()
            .zip(self.observed_model_points())
            .map(|(px, m)| Correspondence2D3D::new(*px, Point3::from(self.gt_scale * m.coords)))
            .collect()
    }
}

fn random_rotation(rng: &mut impl Rng) -> RotationMatrix {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    RotationMatrix::new(*uq.to_rotation_matrix().matrix()).expect("unit quaternion gives a rotation")
}

/// Scale draw from `Normal(s_r, σ_s)`, truncated below at `s_r − 3σ_s` and
/// at a small positive floor.
fn draw_scale(rng: &mut impl Rng, stats: &CategoryStats) -> f64 {
    let floor = (stats.mean_scale - 3.0 * stats.std_dev).max(0.05 * stats.mean_scale);
    if stats.std_dev == 0.0 {
        return stats.mean_scale;
    }
    let normal = Normal::new(stats.mean_scale, stats.std_dev).expect("validated stats");
    for _ in 0..1000 {
        let s = normal.sample(rng);
        if s >= floor {
            return s;
        }
    }
    stats.mean_scale
}

/// Places a procedural object of `category` in front of the camera (at the
/// origin, looking along +z) so that every model point projects inside the
/// frame. Fully determined by `rng_seed`.
pub fn sample_scene(
    category: &str,
    rng_seed: u64,
    cfg: &SceneConfig,
    stats: &CategoryStats,
) -> Result<SyntheticScene, SynthError> {
    cfg.validate()?;
    let canonical = make_canonical_model(category, cfg.model_points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let gt_scale = draw_scale(&mut rng, stats);
    let k = cfg.intrinsics;
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);

    for _ in 0..cfg.max_attempts {
        let rotation = random_rotation(&mut rng);
        let z = rng.random_range(cfg.depth_range[0]..=cfg.depth_range[1]);
        let u = rng.random_range(0.3 * w..0.7 * w);
        let v = rng.random_range(0.3 * h..0.7 * h);
        let center = backproject(&Point2::new(u, v), z, &k);
        let pose = RigidPose::new(rotation, center.coords)?;
        let placed: Option<Vec<(Point2, f64)>> = canonical
            .model
            .points()
            .iter()
            .map(|m| {
                let pc = pose.transform(&Point3::from(gt_scale * m.coords));
                let px = project(&pc, &k).ok()?;
                (px.x >= 0.0 && px.x < w && px.y >= 0.0 && px.y < h).then_some((px, pc.z))
            })
            .collect();
        let Some(placed) = placed else { continue };
        let mut observed = index::sample(&mut rng, cfg.model_points, cfg.observed_points).into_vec();
        observed.sort_unstable();
        return Ok(SyntheticScene {
            category: category.to_string(),
            gt_pose: pose,
            gt_scale,
            canonical_extents: canonical.extents,
            model: canonical.model,
            intrinsics: k,
            image_size: [cfg.image_width, cfg.image_height],
            pixels: observed.iter().map(|&i| placed[i].0).collect(),
            depths: observed.iter().map(|&i| placed[i].1).collect(),
            observed,
            seed: rng_seed,
        });
    }
    Err(SynthError::PlacementFailed(cfg.max_attempts))
}

/// Corruption applied to a scene's observations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Gaussian pixel noise on inliers, px.
    pub pixel_noise_sigma: f64,
    /// Share of observations replaced by uniform in-frame pixels.
    pub outlier_fraction: f64,
    /// Relative scale-prediction error (systematic factor or noise level).
    pub scale_rel_error: f64,
    /// Relative depth noise seen by the coupled baseline.
    pub depth_rel_noise: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fields = [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("outlier_fraction", self.outlier_fraction),
            ("scale_rel_error", self.scale_rel_error.abs()),
            ("depth_rel_noise", self.depth_rel_noise),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SynthError::InvalidNoise(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.outlier_fraction >= 1.0 {
            return Err(SynthError::InvalidNoise(format!(
                "outlier_fraction must be below 1, got {}",
                self.outlier_fraction
            )));
        }
        Ok(())
    }

    /// `floor(fraction · n)`, snapping products within 1e-9 of an integer.
    pub fn outlier_count(&self, n: usize) -> usize {
        let x = self.outlier_fraction * n as f64;
        let r = x.round();
        let c = if (x - r).abs() < 1e-9 { r } else { x.floor() };
        (c as usize).min(n)
    }
}

/// Observations after corruption, index-aligned with the scene's.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedObservations {
    pub pixels: Vec<Point2>,
    pub outlier_mask: Vec<bool>,
    /// Depth estimates for the coupled baseline.
    pub pseudo_depths: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PIXEL_STREAM: u64 = 1;
const OUTLIER_STREAM: u64 = 2;
const DEPTH_STREAM: u64 = 3;

/// Pixel noise, outlier replacement and depth noise each come from their
/// own stream of `seed`, so changing one noise level leaves the draws of the
/// others untouched.
pub fn corrupt(scene: &SyntheticScene, spec: &NoiseSpec, seed: u64) -> Result<CorruptedObservations, SynthError> {
    spec.validate()?;
    let n = scene.pixels.len();
    let mut pixels = scene.pixels.clone();

    let mut outlier_mask = vec![false; n];
    let n_out = spec.outlier_count(n);
    if n_out > 0 {
        let mut rng = stream_rng(seed, OUTLIER_STREAM);
        let [w, h] = scene.image_size.map(f64::from);
        let mut chosen = index::sample(&mut rng, n, n_out).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            outlier_mask[i] = true;
            pixels[i] = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        }
    }

    if spec.pixel_noise_sigma > 0.0 {
        let mut rng = stream_rng(seed, PIXEL_STREAM);
        let noise = Normal::new(0.0, spec.pixel_noise_sigma).map_err(|e| SynthError::InvalidNoise(e.to_string()))?;
        for (p, &out) in pixels.iter_mut().zip(&outlier_mask) {
            let (dx, dy) = (noise.sample(&mut rng), noise.sample(&mut rng));
            if !out {
                p.x += dx;
                p.y += dy;
            }
        }
    }

    let pseudo_depths = if spec.depth_rel_noise > 0.0 {
        let mut rng = stream_rng(seed, DEPTH_STREAM);
        let noise = Normal::new(0.0, spec.depth_rel_noise).map_err(|e| SynthError::InvalidNoise(e.to_string()))?;
        scene
            .depths
            .iter()
            .map(|&d| (d * (1.0 + noise.sample(&mut rng))).max(1e-6 * d))
            .collect()
    } else {
        scene.depths.clone()
    };

    Ok(CorruptedObservations {
        pixels,
        outlier_mask,
        pseudo_depths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Decoupled,
    Coupled,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Decoupled => "decoupled",
            Pipeline::Coupled => "coupled",
        }
    }
}

/// Errors of one pipeline run against the scene's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub pipeline: Pipeline,
    pub pose: RigidPose,
    pub scale: f64,
    pub rot_err_deg: f64,
    pub trans_err_cm: f64,
    pub iou: f64,
    /// `‖t̂‖ / ‖t_gt‖`.
    pub translation_ratio: f64,
    pub inliers: usize,
    /// Fit residual: mean inlier reprojection error in pixels for the
    /// decoupled arm, RMS alignment residual in millimeters for the coupled.
    pub residual: f64,
}

impl ExperimentResult {
    fn measure(
        pipeline: Pipeline,
        scene: &SyntheticScene,
        pose: RigidPose,
        scale: f64,
        inliers: usize,
        residual: f64,
    ) -> Result<Self, SynthError> {
        let est = box_from_estimate(&pose, scale, &scene.canonical_extents)?;
        let gt = box_from_estimate(&scene.gt_pose, scene.gt_scale, &scene.canonical_extents)?;
        Ok(Self {
            pipeline,
            pose,
            scale,
            rot_err_deg: rotation_error_deg(&pose.rotation, &scene.gt_pose.rotation),
            trans_err_cm: translation_error_cm(&pose.translation, &scene.gt_pose.translation),
            iou: iou3d(&est, &gt),
            translation_ratio: pose.translation.norm() / scene.gt_pose.translation.norm(),
            inliers,
            residual,
        })
    }

    /// Confidence used when the result is scored as a detection: smaller
    /// fit residual ranks higher.
    pub fn confidence(&self) -> f64 {
        1.0 / (1.0 + self.residual)
    }

    pub fn estimate(&self, canonical_extents: [f64; 3]) -> ObjectEstimate {
        ObjectEstimate {
            pose: self.pose,
            scale: self.scale,
            canonical_extents,
        }
    }
}

/// Scale from `predictor`, model points through the (one-hot)
/// correspondence matrix, scaled, then RANSAC-PnP.
pub fn run_decoupled(
    scene: &SyntheticScene,
    corrupted: &CorruptedObservations,
    predictor: &dyn ScalePredictor,
    stats: &CategoryStats,
    cfg: &RansacConfig,
) -> Result<ExperimentResult, SynthError> {
    let obs = ScaleObservation {
        id: scene.seed,
        category: scene.category.clone(),
        gt_scale: Some(scene.gt_scale),
        features: Vec::new(),
    };
    let s_hat = predictor.predict(&obs, stats)?.scale;
    let model_pts = assign(&scene.correspondence_matrix()?, &scene.model)?;
    let scaled = scale_model_points(s_hat, &model_pts)?;
    let corr: Vec<Correspondence2D3D> = corrupted
        .pixels
        .iter()
        .zip(scaled)
        .map(|(px, m)| Correspondence2D3D::new(*px, m))
        .collect();
    let res = ransac_pnp(&corr, &scene.intrinsics, cfg)?;
    ExperimentResult::measure(
        Pipeline::Decoupled,
        scene,
        res.pose,
        s_hat,
        res.inlier_count(),
        res.mean_reprojection_error,
    )
}

/// Back-projects non-outlier pixels with their pseudo-depths and fits a
/// similarity transform from the canonical model (hard correspondences).
pub fn run_coupled(scene: &SyntheticScene, corrupted: &CorruptedObservations) -> Result<ExperimentResult, SynthError> {
    let model = scene.observed_model_points();
    let (src, dst): (Vec<Point3>, Vec<Point3>) = (0..model.len())
        .filter(|&i| !corrupted.outlier_mask[i])
        .map(|i| {
            (
                model[i],
                backproject(&corrupted.pixels[i], corrupted.pseudo_depths[i], &scene.intrinsics),
            )
        })
        .unzip();
    let sim = umeyama_align(&src, &dst, true)?;
    let rms = (src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (sim.transform(s) - d).norm_squared())
        .sum::<f64>()
        / src.len() as f64)
        .sqrt();
    ExperimentResult::measure(
        Pipeline::Coupled,
        scene,
        sim.rigid_part(),
        sim.scale,
        src.len(),
        1000.0 * rms,
    )
}
