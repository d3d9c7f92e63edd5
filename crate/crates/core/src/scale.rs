//! Metric scale as a category mean plus a relative offset.
//!
//! A predictor emits the offset `Δs`, and the metric scale (bounding-box
//! diagonal in meters) is `ŝ = s_r + s_r·Δs`, where `s_r` is the category
//! mean. The supervision target is `Δs_gt = (s_gt − s_r)/s_r` with an L1
//! loss, combined with an externally computed correspondence loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error("no scales given for category {0:?}")]
    EmptyList(String),
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("offset Δs = {0} gives a non-positive scale")]
    NonPositiveResult(f64),
    #[error("invalid category statistics: {0}")]
    InvalidStats(String),
    #[error("predictor needs the ground-truth scale, which the observation lacks")]
    MissingGroundTruth,
    #[error("noise level must be non-negative, got {0}")]
    InvalidNoise(f64),
}

/// Per-category scale anchor and spread, in meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryStats {
    pub category: String,
    pub mean_scale: f64,
    pub std_dev: f64,
    pub count: usize,
}

impl CategoryStats {
    pub fn new(category: impl Into<String>, mean_scale: f64, std_dev: f64, count: usize) -> Result<Self, ScaleError> {
        if !(mean_scale > 0.0) || !mean_scale.is_finite() {
            return Err(ScaleError::InvalidStats(format!("mean_scale = {mean_scale}")));
        }
        if !(std_dev >= 0.0) || !std_dev.is_finite() {
            return Err(ScaleError::InvalidStats(format!("std_dev = {std_dev}")));
        }
        if count < 1 {
            return Err(ScaleError::InvalidStats("count must be at least 1".into()));
        }
        Ok(Self {
            category: category.into(),
            mean_scale,
            std_dev,
            count,
        })
    }
}

impl<'de> Deserialize<'de> for CategoryStats {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            category: String,
            mean_scale: f64,
            std_dev: f64,
            count: usize,
        }
        let r = Raw::deserialize(d)?;
        CategoryStats::new(r.category, r.mean_scale, r.std_dev, r.count).map_err(serde::de::Error::custom)
    }
}

/// Mean and population standard deviation (divide by `k`) of ground-truth
/// scales.
pub fn compute_stats(category: &str, scales: &[f64]) -> Result<CategoryStats, ScaleError> {
    if scales.is_empty() {
        return Err(ScaleError::EmptyList(category.to_string()));
    }
    if let Some(&bad) = scales.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(ScaleError::NonPositiveScale(bad));
    }
    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &s) in scales.iter().enumerate() {
        let delta = s - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (s - mean);
    }
    let k = scales.len();
    let std_dev = if scales.iter().all(|&s| s == scales[0]) {
        0.0
    } else {
        (m2.max(0.0) / k as f64).sqrt()
    };
    CategoryStats::new(category, mean, std_dev, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePrediction {
    /// Relative offset from the category mean.
    pub delta: f64,
    /// Metric scale, meters.
    pub scale: f64,
}

/// `ŝ = s_r + s_r·Δs`.
pub fn recover_scale(stats: &CategoryStats, delta: f64) -> Result<ScalePrediction, ScaleError> {
    if !(delta > -1.0) || !delta.is_finite() {
        return Err(ScaleError::NonPositiveResult(delta));
    }
    let s_r = stats.mean_scale;
    Ok(ScalePrediction {
        delta,
        scale: s_r + s_r * delta,
    })
}

/// `Δs_gt = (s_gt − s_r)/s_r`.
pub fn gt_offset(s_gt: f64, stats: &CategoryStats) -> Result<f64, ScaleError> {
    if !(s_gt > 0.0) || !s_gt.is_finite() {
        return Err(ScaleError::NonPositiveScale(s_gt));
    }
    Ok((s_gt - stats.mean_scale) / stats.mean_scale)
}

/// L1 distance between target and predicted offsets.
pub fn scale_loss(delta_gt: f64, delta: f64) -> f64 {
    (delta_gt - delta).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub correspondence: f64,
    pub scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            correspondence: 1.0,
            scale: 0.1,
        }
    }
}

/// `λ1·L_corr + λ2·L_scale`.
pub fn combine_loss(l_corr: f64, l_scale: f64, weights: LossWeights) -> f64 {
    weights.correspondence * l_corr + weights.scale * l_scale
}

/// Whatever a predictor gets to look at for one object instance.
///
/// `features` is opaque to this crate; `gt_scale` is only populated in
/// simulation, where oracle-style predictors stand in for a learned one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaleObservation {
    pub id: u64,
    pub category: String,
    #[serde(default)]
    pub gt_scale: Option<f64>,
    #[serde(default)]
    pub features: Vec<f64>,
}

/// Produces the relative offset `Δs` for one observation. Implementations
/// must be deterministic given their construction parameters and input.
pub trait ScalePredictor: Send + Sync {
    fn predict_offset(&self, obs: &ScaleObservation, stats: &CategoryStats) -> Result<f64, ScaleError>;

    fn predict(&self, obs: &ScaleObservation, stats: &CategoryStats) -> Result<ScalePrediction, ScaleError> {
        recover_scale(stats, self.predict_offset(obs, stats)?)
    }
}

/// Always `Δs = 0`: the category mean is used as the scale.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanScalePredictor;

impl ScalePredictor for MeanScalePredictor {
    fn predict_offset(&self, _obs: &ScaleObservation, _stats: &CategoryStats) -> Result<f64, ScaleError> {
        Ok(0.0)
    }
}

pub fn mean_scale_predictor() -> MeanScalePredictor {
    MeanScalePredictor
}

/// `Δs = Δs_gt + ε`, `ε ~ N(0, σ)`, with `ε` a pure function of
/// `(seed, observation id)`.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOraclePredictor {
    seed: u64,
    noise: Normal<f64>,
}

impl NoisyOraclePredictor {
    pub fn new(seed: u64, relative_noise: f64) -> Result<Self, ScaleError> {
        if !(relative_noise >= 0.0) || !relative_noise.is_finite() {
            return Err(ScaleError::InvalidNoise(relative_noise));
        }
        let noise = Normal::new(0.0, relative_noise).map_err(|_| ScaleError::InvalidNoise(relative_noise))?;
        Ok(Self { seed, noise })
    }

    pub fn noise_for(&self, id: u64) -> f64 {
        if self.noise.std_dev() == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        self.noise.sample(&mut rng)
    }
}

impl ScalePredictor for NoisyOraclePredictor {
    fn predict_offset(&self, obs: &ScaleObservation, stats: &CategoryStats) -> Result<f64, ScaleError> {
        let s_gt = obs.gt_scale.ok_or(ScaleError::MissingGroundTruth)?;
        Ok(gt_offset(s_gt, stats)? + self.noise_for(obs.id))
    }
}

pub fn noisy_oracle_predictor(rng_seed: u64, relative_noise: f64) -> Result<NoisyOraclePredictor, ScaleError> {
    NoisyOraclePredictor::new(rng_seed, relative_noise)
}

/// Off by a fixed relative factor: `ŝ = s_gt·(1 + error)`.
#[derive(Debug, Clone, Copy)]
pub struct SystematicPredictor {
    pub relative_error: f64,
}

impl ScalePredictor for SystematicPredictor {
    fn predict_offset(&self, obs: &ScaleObservation, stats: &CategoryStats) -> Result<f64, ScaleError> {
        let s_gt = obs.gt_scale.ok_or(ScaleError::MissingGroundTruth)?;
        gt_offset(s_gt * (1.0 + self.relative_error), stats)
    }
}
