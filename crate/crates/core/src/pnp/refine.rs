use nalgebra::{Matrix2x6, Matrix6, Vector2, Vector3, Vector6};

use super::{Correspondence2D3D, PnpError};
use crate::geometry::{CameraIntrinsics, GeometryError, RigidPose, RotationMatrix};

const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-10;
const COST_DECREASE_TOLERANCE: f64 = 1e-12;
const MAX_HALVINGS: usize = 20;

/// Outcome of a Gauss-Newton refinement run.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub pose: RigidPose,
    /// Cost after each accepted iterate, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl RefineReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_history[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("history is never empty")
    }
}

/// Applies the local update `(δω, δt)`: `R ← exp(δω)·R`, `t ← t + δt`.
pub(crate) fn retract(pose: &RigidPose, delta: &Vector6<f64>) -> RigidPose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let rotation = RotationMatrix::exp(&omega).compose(&pose.rotation).renormalized();
    RigidPose {
        rotation,
        translation: pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
    }
}

/// Jacobian of the projected pixel with respect to the local update
/// `(δω, δt)` at `pose`.
pub fn reprojection_jacobian(
    pose: &RigidPose,
    model: &crate::geometry::Point3,
    k: &CameraIntrinsics,
) -> Result<Matrix2x6<f64>, GeometryError> {
    let rx = pose.rotation.rotate(&model.coords);
    let pc = rx + pose.translation;
    if !(pc.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(pc.z));
    }
    let iz = 1.0 / pc.z;
    let iz2 = iz * iz;
    // d(pixel)/d(camera point)
    #[rustfmt::skip]
    let dproj = nalgebra::Matrix2x3::new(
        k.fx * iz, 0.0, -k.fx * pc.x * iz2,
        0.0, k.fy * iz, -k.fy * pc.y * iz2,
    );
    // d(camera point)/dδω = −[R·x]×, d(camera point)/dδt = I
    let neg_skew = -rx.cross_matrix();
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * neg_skew));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
    Ok(j)
}

fn residual(pose: &RigidPose, c: &Correspondence2D3D, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let pc = pose.transform(&c.model);
    if pc.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(
        k.fx * pc.x / pc.z + k.cx - c.image.x,
        k.fy * pc.y / pc.z + k.cy - c.image.y,
    ))
}

/// Sum of squared pixel residuals over `active` correspondences, or `None`
/// if one of them is not in front of the camera.
fn active_cost(
    pose: &RigidPose,
    corr: &[Correspondence2D3D],
    active: &[usize],
    k: &CameraIntrinsics,
) -> Option<f64> {
    active
        .iter()
        .try_fold(0.0, |acc, &i| residual(pose, &corr[i], k).map(|r| acc + r.norm_squared()))
}

/// Sum of squared reprojection errors over the points in front of the
/// camera.
pub fn reprojection_cost(pose: &RigidPose, corr: &[Correspondence2D3D], k: &CameraIntrinsics) -> f64 {
    corr.iter()
        .filter_map(|c| residual(pose, c, k))
        .map(|r| r.norm_squared())
        .sum()
}

pub fn refine_pnp(
    initial: &RigidPose,
    corr: &[Correspondence2D3D],
    k: &CameraIntrinsics,
) -> Result<RigidPose, PnpError> {
    refine_pnp_detailed(initial, corr, k).map(|r| r.pose)
}

/// Gauss-Newton on the reprojection error with a backtracking step so that
/// the cost never increases.
///
/// Only correspondences in front of the camera at the initial pose take
/// part; steps that would push one of them behind the camera are shortened.
pub fn refine_pnp_detailed(
    initial: &RigidPose,
    corr: &[Correspondence2D3D],
    k: &CameraIntrinsics,
) -> Result<RefineReport, PnpError> {
    let active: Vec<usize> = (0..corr.len())
        .filter(|&i| initial.transform(&corr[i].model).z > 0.0)
        .collect();
    if active.is_empty() {
        return Err(PnpError::DivergedBehindCamera);
    }
    let mut pose = *initial;
    let mut cost = active_cost(&pose, corr, &active, k).ok_or(PnpError::DivergedBehindCamera)?;
    let mut history = vec![cost];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &i in &active {
            let c = &corr[i];
            let (Ok(j), Some(r)) = (reprojection_jacobian(&pose, &c.model, k), residual(&pose, c, k)) else {
                return Err(PnpError::DivergedBehindCamera);
            };
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        // tiny diagonal load keeps under-constrained problems solvable
        let damping = 1e-12 * h.diagonal().max().max(1e-300);
        for d in 0..6 {
            h[(d, d)] += damping;
        }
        let Some(step) = h.cholesky().map(|ch| -ch.solve(&g)) else {
            break;
        };
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = retract(&pose, &(scale * step));
            if let Some(c) = active_cost(&cand, corr, &active, k) {
                if c <= cost {
                    accepted = Some((cand, c));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((cand, new_cost)) = accepted else {
            break;
        };
        let decrease = cost - new_cost;
        pose = cand;
        cost = new_cost;
        history.push(cost);
        if (scale * step).norm() < STEP_TOLERANCE || decrease < COST_DECREASE_TOLERANCE {
            break;
        }
    }

    Ok(RefineReport {
        pose,
        cost_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_error_deg, Point3};
    use crate::pnp::test_scenes::{intrinsics, rot_err_rad, scene};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let k = intrinsics();
        let (pose, corr) = scene(1, 30);
        let refined = refine_pnp(&pose, &corr, &k).unwrap();
        assert!(rot_err_rad(&refined, &pose) < 1e-10);
        assert!((refined.translation - pose.translation).norm() < 1e-10);
    }

    #[test]
    fn converges_from_perturbed_start() {
        let k = intrinsics();
        for seed in 0..50 {
            let (pose, corr) = scene(seed, 30);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let start = RigidPose {
                rotation: RotationMatrix::from_axis_angle(&axis, 5f64.to_radians()).compose(&pose.rotation),
                translation: pose.translation + 0.05 * dir,
            };
            assert!((rotation_error_deg(&start.rotation, &pose.rotation) - 5.0).abs() < 1e-9);
            let report = refine_pnp_detailed(&start, &corr, &k).unwrap();
            assert!(rot_err_rad(&report.pose, &pose) < 1e-8, "seed {seed}");
            assert!((report.pose.translation - pose.translation).norm() < 1e-8, "seed {seed}");
            assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
            assert!(report.final_cost() <= report.initial_cost());
        }
    }

    /// Central differences of the projection under the same left-multiplied
    /// local update, computed without touching `reprojection_jacobian`.
    fn numeric_jacobian(pose: &RigidPose, m: &Point3, k: &CameraIntrinsics, h: f64) -> Matrix2x6<f64> {
        let proj = |p: &RigidPose| {
            let pc = p.rotation.matrix() * m.coords + p.translation;
            Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy)
        };
        let mut j = Matrix2x6::zeros();
        for d in 0..6 {
            let mut e = Vector6::zeros();
            e[d] = h;
            let col = (proj(&retract(pose, &e)) - proj(&retract(pose, &-e))) / (2.0 * h);
            j.set_column(d, &col);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let k = intrinsics();
        for seed in 0..100 {
            let (pose, corr) = scene(seed, 1);
            let analytic = reprojection_jacobian(&pose, &corr[0].model, &k).unwrap();
            let numeric = numeric_jacobian(&pose, &corr[0].model, &k, 1e-6);
            let rel = (analytic - numeric).norm() / analytic.norm();
            assert!(rel < 1e-6, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn all_points_behind_camera() {
        let k = intrinsics();
        let (pose, corr) = scene(2, 10);
        let flipped = RigidPose {
            rotation: pose.rotation,
            translation: pose.translation - Vector3::new(0.0, 0.0, 10.0),
        };
        assert_eq!(refine_pnp(&flipped, &corr, &k), Err(PnpError::DivergedBehindCamera));
    }
}
