use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{refine_pnp, reprojection_error, solve_pnp_minimal, Correspondence2D3D, PnpError};
use crate::geometry::{CameraIntrinsics, RigidPose};

const SAMPLE_SIZE: usize = 4;
const MAX_FINAL_ROUNDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Pixels; a correspondence is an inlier when its error is strictly below.
    pub reprojection_threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            reprojection_threshold: 2.0,
            max_iterations: 1000,
            confidence: 0.999,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if !(self.reprojection_threshold > 0.0) || !self.reprojection_threshold.is_finite() {
            return Err(PnpError::InvalidConfig(format!(
                "reprojection_threshold must be positive, got {}",
                self.reprojection_threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PnpError::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.max_iterations < 1 {
            return Err(PnpError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Iterations needed to draw one all-inlier sample with the configured
    /// confidence, given inlier ratio `w`.
    fn required_iterations(&self, w: f64) -> usize {
        let p_good = w.powi(SAMPLE_SIZE as i32);
        if p_good >= 1.0 {
            return 1;
        }
        if p_good <= 0.0 {
            return self.max_iterations;
        }
        let n = ((1.0 - self.confidence).ln() / (1.0 - p_good).ln()).ceil();
        if n.is_finite() && n < self.max_iterations as f64 {
            (n as usize).max(1)
        } else {
            self.max_iterations
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPResult {
    pub pose: RigidPose,
    pub inlier_mask: Vec<bool>,
    /// Pixels, averaged over inliers.
    pub mean_reprojection_error: f64,
    pub iterations_used: usize,
}

impl PnPResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

struct Consensus {
    count: usize,
    mean_error: f64,
    pose: RigidPose,
    mask: Vec<bool>,
}

fn consensus(pose: &RigidPose, corr: &[Correspondence2D3D], k: &CameraIntrinsics, threshold: f64) -> Consensus {
    let mut mask = vec![false; corr.len()];
    let mut count = 0;
    let mut sum = 0.0;
    for (m, c) in mask.iter_mut().zip(corr) {
        if let Some(e) = reprojection_error(pose, c, k) {
            if e < threshold {
                *m = true;
                count += 1;
                sum += e;
            }
        }
    }
    Consensus {
        count,
        mean_error: if count > 0 { sum / count as f64 } else { f64::INFINITY },
        pose: *pose,
        mask,
    }
}

/// Random generator for one iteration, derived from `(seed, iteration)` so
/// the sample sequence does not depend on evaluation order.
fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

pub fn ransac_pnp(
    corr: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnPResult, PnpError> {
    cfg.validate()?;
    let n = corr.len();
    if n < SAMPLE_SIZE {
        return Err(PnpError::InsufficientCorrespondences {
            needed: SAMPLE_SIZE,
            got: n,
        });
    }

    let mut best: Option<Consensus> = None;
    let mut required = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < required {
        let mut rng = iteration_rng(cfg.rng_seed, iteration);
        let idx = rand::seq::index::sample(&mut rng, n, SAMPLE_SIZE);
        let sample = [corr[idx.index(0)], corr[idx.index(1)], corr[idx.index(2)], corr[idx.index(3)]];
        iteration += 1;

        let Ok(candidates) = solve_pnp_minimal(&sample, k) else {
            continue;
        };
        for pose in &candidates {
            let c = consensus(pose, corr, k, cfg.reprojection_threshold);
            let better = match &best {
                None => c.count > 0,
                Some(b) => c.count > b.count || (c.count == b.count && c.mean_error < b.mean_error),
            };
            if better {
                required = cfg.required_iterations(c.count as f64 / n as f64);
                best = Some(c);
            }
        }
    }

    let mut best = match best {
        Some(b) if b.count >= SAMPLE_SIZE => b,
        other => {
            return Err(PnpError::ConsensusNotFound {
                best: other.map_or(0, |b| b.count),
            })
        }
    };

    for _ in 0..MAX_FINAL_ROUNDS {
        let inliers: Vec<Correspondence2D3D> = corr
            .iter()
            .zip(&best.mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| *c)
            .collect();
        let refined = refine_pnp(&best.pose, &inliers, k)?;
        let next = consensus(&refined, corr, k, cfg.reprojection_threshold);
        let stable = next.mask == best.mask;
        best = next;
        if stable || best.count < SAMPLE_SIZE {
            break;
        }
    }
    if best.count < SAMPLE_SIZE {
        return Err(PnpError::ConsensusNotFound { best: best.count });
    }

    Ok(PnPResult {
        pose: best.pose,
        mean_reprojection_error: best.mean_error,
        inlier_mask: best.mask,
        iterations_used: iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;
    use crate::pnp::solve_pnp_lsq;
    use crate::pnp::test_scenes::{intrinsics, rot_err_rad, scene};
    use rand::Rng;

    fn with_outliers(seed: u64, n: usize, fraction: f64) -> (RigidPose, Vec<Correspondence2D3D>, Vec<bool>) {
        let (pose, mut corr) = scene(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let n_out = (fraction * n as f64).floor() as usize;
        let mut truth = vec![true; n];
        for i in 0..n_out {
            // keep outliers well away from their true projection
            loop {
                let px = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                if (px - corr[i].image).norm() > 10.0 {
                    corr[i].image = px;
                    break;
                }
            }
            truth[i] = false;
        }
        (pose, corr, truth)
    }

    #[test]
    fn rejects_outliers_exactly() {
        let k = intrinsics();
        let cfg = RansacConfig {
            reprojection_threshold: 1.0,
            ..Default::default()
        };
        for seed in 0..20 {
            let (pose, corr, truth) = with_outliers(seed, 100, 0.3);
            let res = ransac_pnp(&corr, &k, &cfg).unwrap();
            assert!(rot_err_rad(&res.pose, &pose).to_degrees() < 0.1);
            assert!((res.pose.translation - pose.translation).norm() < 1e-3);
            assert_eq!(res.inlier_mask, truth, "seed {seed}");
            assert!(res.iterations_used <= cfg.max_iterations);
        }
    }

    #[test]
    fn clean_data_matches_least_squares() {
        let k = intrinsics();
        let (_, corr) = scene(4, 40);
        let a = ransac_pnp(&corr, &k, &RansacConfig::default()).unwrap();
        let b = solve_pnp_lsq(&corr, &k).unwrap();
        assert!(rot_err_rad(&a.pose, &b) < 1e-9);
        assert!((a.pose.translation - b.translation).norm() < 1e-9);
        assert_eq!(a.inlier_count(), 40);
    }

    #[test]
    fn too_few_correspondences() {
        let k = intrinsics();
        let (_, corr) = scene(0, 3);
        assert_eq!(
            ransac_pnp(&corr, &k, &RansacConfig::default()),
            Err(PnpError::InsufficientCorrespondences { needed: 4, got: 3 })
        );
    }

    #[test]
    fn invalid_config() {
        let k = intrinsics();
        let (_, corr) = scene(0, 10);
        for cfg in [
            RansacConfig { reprojection_threshold: 0.0, ..Default::default() },
            RansacConfig { confidence: 1.0, ..Default::default() },
            RansacConfig { max_iterations: 0, ..Default::default() },
        ] {
            assert!(matches!(ransac_pnp(&corr, &k, &cfg), Err(PnpError::InvalidConfig(_))));
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let k = intrinsics();
        let (_, corr, _) = with_outliers(9, 80, 0.4);
        let cfg = RansacConfig { rng_seed: 1234, ..Default::default() };
        let a = ransac_pnp(&corr, &k, &cfg).unwrap();
        let b = ransac_pnp(&corr, &k, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pose.rotation.to_row_major().map(f64::to_bits), b.pose.rotation.to_row_major().map(f64::to_bits));
    }

    #[test]
    fn inliers_respect_threshold() {
        let k = intrinsics();
        let (_, corr, _) = with_outliers(12, 60, 0.2);
        let cfg = RansacConfig::default();
        let res = ransac_pnp(&corr, &k, &cfg).unwrap();
        for (c, &m) in corr.iter().zip(&res.inlier_mask) {
            if m {
                assert!(reprojection_error(&res.pose, c, &k).unwrap() < cfg.reprojection_threshold);
            }
        }
    }

    #[test]
    fn adaptive_iteration_bound() {
        let cfg = RansacConfig::default();
        assert_eq!(cfg.required_iterations(1.0), 1);
        assert_eq!(cfg.required_iterations(0.0), 1000);
        // log(0.001) / log(1 − 0.5⁴) = 107.8
        assert_eq!(cfg.required_iterations(0.5), 108);
    }
}
