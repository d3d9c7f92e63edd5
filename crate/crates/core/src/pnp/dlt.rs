use nalgebra::{DMatrix, Matrix3, Matrix3x4, Vector3};

use super::{refine_pnp, Correspondence2D3D, PnpError};
use crate::geometry::{CameraIntrinsics, RigidPose, RotationMatrix};

/// Relative singular-value floor below which the DLT null space is
/// considered more than one-dimensional.
const RANK_TOLERANCE: f64 = 1e-9;

/// DLT on normalized image coordinates followed by [`refine_pnp`].
pub fn solve_pnp_lsq(corr: &[Correspondence2D3D], k: &CameraIntrinsics) -> Result<RigidPose, PnpError> {
    let initial = dlt_pose(corr, k)?;
    refine_pnp(&initial, corr, k)
}

fn dlt_pose(corr: &[Correspondence2D3D], k: &CameraIntrinsics) -> Result<RigidPose, PnpError> {
    let n = corr.len();
    if n < 6 {
        return Err(PnpError::InsufficientCorrespondences { needed: 6, got: n });
    }

    // condition the model points: centered, unit mean distance
    let centroid = corr.iter().fold(Vector3::zeros(), |acc, c| acc + c.model.coords) / n as f64;
    let spread = corr.iter().map(|c| (c.model.coords - centroid).norm()).sum::<f64>() / n as f64;
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(PnpError::RankDeficient);
    }

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, c) in corr.iter().enumerate() {
        let x = (c.model.coords - centroid) / spread;
        let xn = k.normalize(&c.image);
        let hx = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = hx[j];
            a[(2 * i, 8 + j)] = -xn.x * hx[j];
            a[(2 * i + 1, 4 + j)] = hx[j];
            a[(2 * i + 1, 8 + j)] = -xn.y * hx[j];
        }
    }

    let svd = a.svd(false, true);
    let Some(v_t) = svd.v_t else {
        return Err(PnpError::RankDeficient);
    };
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let largest = sv[order[sv.len() - 1]];
    if !(largest > 0.0) || sv[order[1]] <= RANK_TOLERANCE * largest {
        return Err(PnpError::RankDeficient);
    }
    let null: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let mut p = Matrix3x4::from_row_slice(&null);

    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    // M = λ·spread·R with λ > 0
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(PnpError::RankDeficient);
    };
    let lambda_spread = svd.singular_values.mean();
    if !(lambda_spread > 0.0) {
        return Err(PnpError::RankDeficient);
    }
    let rotation = RotationMatrix::nearest(&(u * v_t))?;
    let lambda = lambda_spread / spread;
    let t_col = Vector3::new(p[(0, 3)], p[(1, 3)], p[(2, 3)]) / lambda;
    // p₄ = λ(R·c + t)
    let translation = t_col - rotation.rotate(&centroid);
    Ok(RigidPose::new(rotation, translation)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, rotation_error_deg, Point3};
    use crate::pnp::test_scenes::{intrinsics, rot_err_rad, scene};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn noiseless_recovery() {
        let k = intrinsics();
        for seed in 0..100 {
            let (pose, corr) = scene(seed, 20);
            let est = solve_pnp_lsq(&corr, &k).unwrap();
            assert!(rot_err_rad(&est, &pose) < 1e-8, "seed {seed}");
            assert!((est.translation - pose.translation).norm() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn noisy_recovery_monte_carlo() {
        let k = intrinsics();
        let noise = Normal::new(0.0, 0.5).unwrap();
        for seed in 0..100 {
            let (pose, mut corr) = scene(seed, 20);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            for c in &mut corr {
                c.image.x += noise.sample(&mut rng);
                c.image.y += noise.sample(&mut rng);
            }
            let est = solve_pnp_lsq(&corr, &k).unwrap();
            assert!(rotation_error_deg(&est.rotation, &pose.rotation) < 0.5, "seed {seed}");
            let rel = (est.translation - pose.translation).norm() / pose.translation.z;
            assert!(rel < 0.01, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn too_few_points() {
        let k = intrinsics();
        let (_, corr) = scene(0, 5);
        assert!(matches!(
            solve_pnp_lsq(&corr, &k),
            Err(PnpError::InsufficientCorrespondences { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn coplanar_points_are_rank_deficient_or_consistent() {
        let k = intrinsics();
        let (pose, _) = scene(3, 1);
        let corr: Vec<_> = (0..25)
            .map(|i| {
                let m = Point3::new((i % 5) as f64 * 0.05 - 0.1, (i / 5) as f64 * 0.05 - 0.1, 0.0);
                Correspondence2D3D::new(project(&pose.transform(&m), &k).unwrap(), m)
            })
            .collect();
        match solve_pnp_lsq(&corr, &k) {
            Err(PnpError::RankDeficient) => {}
            Ok(est) => {
                let cost = crate::pnp::reprojection_cost(&est, &corr, &k);
                assert!(cost < 1e-12, "accepted a planar fit with residual {cost}");
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
