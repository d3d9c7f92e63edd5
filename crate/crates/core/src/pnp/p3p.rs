use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{Correspondence2D3D, PnpError};
use crate::geometry::{project, umeyama_align, CameraIntrinsics, Point3, RigidPose};

/// P3P on the first three correspondences, candidates ranked by the pixel
/// error of the fourth.
///
/// Every returned pose puts all four model points at positive depth.
pub fn solve_pnp_minimal(
    corr: &[Correspondence2D3D; 4],
    k: &CameraIntrinsics,
) -> Result<Vec<RigidPose>, PnpError> {
    let world = [corr[0].model, corr[1].model, corr[2].model];
    let extent = (world[1] - world[0])
        .norm()
        .max((world[2] - world[0]).norm())
        .max((world[2] - world[1]).norm());
    let area2 = (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
    if !(extent > 0.0) || area2 <= 1e-10 * extent * extent {
        return Err(PnpError::DegenerateSample);
    }
    let bearings = [
        k.bearing(&corr[0].image),
        k.bearing(&corr[1].image),
        k.bearing(&corr[2].image),
    ];

    let mut scored: Vec<(f64, RigidPose)> = Vec::with_capacity(4);
    for depths in triangle_depths(&world, &bearings) {
        let camera: Vec<Point3> = (0..3).map(|i| Point3::from(depths[i] * bearings[i])).collect();
        let Ok(sim) = umeyama_align(&world, &camera, false) else {
            continue;
        };
        let pose = sim.rigid_part();
        if corr.iter().any(|c| pose.transform(&c.model).z <= 0.0) {
            continue;
        }
        let Ok(px) = project(&pose.transform(&corr[3].model), k) else {
            continue;
        };
        let err = (px - corr[3].image).norm();
        if err.is_finite() {
            scored.push((err, pose));
        }
    }
    if scored.is_empty() {
        return Err(PnpError::NoRealSolution);
    }
    // stable: equal errors keep root order
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored.into_iter().map(|(_, p)| p).collect())
}

/// Distances along the three bearing rays that reproduce the model
/// triangle's side lengths (Grunert's formulation).
fn triangle_depths(world: &[Point3; 3], bearings: &[Vector3<f64>; 3]) -> Vec<[f64; 3]> {
    // a: side opposite point 0, b: opposite 1, c: opposite 2
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    let ca = bearings[1].dot(&bearings[2]);
    let cb = bearings[0].dot(&bearings[2]);
    let cg = bearings[0].dot(&bearings[1]);

    // With s1 = u·s0 and s2 = v·s0, eliminating s0 leaves
    //   a²(1 + v² − 2v·cb) = b²(u² + v² − 2uv·ca)
    //   c²(1 + v² − 2v·cb) = b²(1 + u² − 2u·cg)
    // whose difference is linear in u: u = N(v) / D(v).
    let q = [1.0, -2.0 * cb, 1.0]; // 1 + v² − 2v·cb, ascending powers
    let n_poly = poly_sub(&poly_scale(&q, a2 - c2), &[-b2, 0.0, b2]);
    let d_poly = [2.0 * b2 * cg, -2.0 * b2 * ca];
    let d2 = poly_mul(&d_poly, &d_poly);
    let quartic = poly_sub(
        &poly_scale(
            &poly_add(
                &poly_add(&d2, &poly_mul(&n_poly, &n_poly)),
                &poly_scale(&poly_mul(&n_poly, &d_poly), -2.0 * cg),
            ),
            b2,
        ),
        &poly_scale(&poly_mul(&q, &d2), c2),
    );

    let mut out: Vec<[f64; 3]> = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let qv = poly_eval(&q, v);
        if qv <= 0.0 {
            continue;
        }
        let s0 = (b2 / qv).sqrt();
        let dv = poly_eval(&d_poly, v);
        let us: Vec<f64> = if dv.abs() > 1e-9 * b2 {
            vec![poly_eval(&n_poly, v) / dv]
        } else {
            // D(v) ≈ 0: fall back to the second equation, quadratic in u
            let rhs = c2 * qv / b2;
            let disc = cg * cg - 1.0 + rhs;
            if disc < 0.0 {
                continue;
            }
            vec![cg + disc.sqrt(), cg - disc.sqrt()]
        };
        for u in us {
            if u <= 0.0 {
                continue;
            }
            let Some(d) = polish_depths([s0, u * s0, v * s0], [a2, b2, c2], [ca, cb, cg]) else {
                continue;
            };
            if out.iter().any(|o| (0..3).all(|i| (o[i] - d[i]).abs() <= 1e-9 * (1.0 + d[i]))) {
                continue;
            }
            out.push(d);
        }
    }
    out
}

/// Newton iterations on the three law-of-cosines residuals.
fn polish_depths(mut s: [f64; 3], sides: [f64; 3], cosines: [f64; 3]) -> Option<[f64; 3]> {
    let [a2, b2, c2] = sides;
    let [ca, cb, cg] = cosines;
    let residual = |s: &[f64; 3]| {
        Vector3::new(
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * ca - a2,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cb - b2,
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cg - c2,
        )
    };
    let scale = a2.max(b2).max(c2);
    let mut r = residual(&s);
    for _ in 0..8 {
        if r.amax() <= 1e-15 * scale {
            break;
        }
        #[rustfmt::skip]
        let jac = Matrix3::new(
            0.0, 2.0 * s[1] - 2.0 * s[2] * ca, 2.0 * s[2] - 2.0 * s[1] * ca,
            2.0 * s[0] - 2.0 * s[2] * cb, 0.0, 2.0 * s[2] - 2.0 * s[0] * cb,
            2.0 * s[0] - 2.0 * s[1] * cg, 2.0 * s[1] - 2.0 * s[0] * cg, 0.0,
        );
        let Some(step) = jac.lu().solve(&r) else { break };
        let cand = [s[0] - step[0], s[1] - step[1], s[2] - step[2]];
        let rc = residual(&cand);
        if rc.amax() >= r.amax() {
            break;
        }
        s = cand;
        r = rc;
    }
    let ok = s.iter().all(|&x| x > 0.0 && x.is_finite()) && r.amax() <= 1e-6 * scale;
    ok.then_some(s)
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    poly_add(a, &poly_scale(b, -1.0))
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Real roots of a polynomial given in ascending-power coefficients, from
/// companion-matrix eigenvalues polished by Newton steps.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if max == 0.0 || !max.is_finite() {
        return Vec::new();
    }
    let mut p: Vec<f64> = coeffs.iter().map(|c| c / max).collect();
    while p.len() > 1 && p.last().is_some_and(|c| c.abs() < 1e-14) {
        p.pop();
    }
    let deg = p.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = p[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -p[i] / lead;
    }
    let deriv: Vec<f64> = (1..=deg).map(|i| i as f64 * p[i]).collect();

    let mut roots: Vec<f64> = Vec::new();
    for z in companion.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-3 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..6 {
            let d = poly_eval(&deriv, x);
            if d == 0.0 {
                break;
            }
            let step = poly_eval(&p, x) / d;
            if !step.is_finite() {
                break;
            }
            x -= step;
            if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
        if x.is_finite() {
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, RotationMatrix};
    use crate::pnp::test_scenes::{intrinsics, rot_err_rad, scene};

    #[test]
    fn real_roots_of_known_quartic() {
        // (x − 1)(x + 2)(x − 0.5)(x² + 1) has real roots {−2, 0.5, 1}
        let p = poly_mul(&poly_mul(&poly_mul(&[-1.0, 1.0], &[2.0, 1.0]), &[-0.5, 1.0]), &[1.0, 0.0, 1.0]);
        let r = real_roots(&p);
        assert_eq!(r.len(), 3, "{r:?}");
        for (got, want) in r.iter().zip([-2.0, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_cube_face_pose() {
        let k = intrinsics();
        let pose = RigidPose::new(
            RotationMatrix::rot_x(25.0).compose(&RotationMatrix::rot_y(-40.0)),
            Vector3::new(0.05, -0.02, 0.8),
        )
        .unwrap();
        let h = 0.1;
        let face = [
            Point3::new(-h, -h, h),
            Point3::new(h, -h, h),
            Point3::new(h, h, h),
            Point3::new(-h, h, h),
        ];
        let corr = face.map(|m| Correspondence2D3D::new(project(&pose.transform(&m), &k).unwrap(), m));
        let cands = solve_pnp_minimal(&corr, &k).unwrap();
        let best = &cands[0];
        assert!(rot_err_rad(best, &pose) < 1e-6);
        assert!((best.translation - pose.translation).norm() < 1e-8);
    }

    #[test]
    fn random_scenes_contain_truth() {
        let k = intrinsics();
        for seed in 0..300 {
            let (pose, c) = scene(seed, 4);
            let corr = [c[0], c[1], c[2], c[3]];
            let cands = solve_pnp_minimal(&corr, &k).unwrap();
            assert!(cands.len() <= 4);
            assert!(rot_err_rad(&cands[0], &pose) < 1e-6, "seed {seed}");
            assert!((cands[0].translation - pose.translation).norm() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn collinear_triple_is_degenerate() {
        let k = intrinsics();
        let m = [
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.1, 0.0, 1.0),
            Point3::new(0.2, 0.0, 1.0),
            Point3::new(0.0, 0.1, 1.0),
        ];
        let corr = m.map(|p| Correspondence2D3D::new(project(&p, &k).unwrap(), p));
        assert_eq!(solve_pnp_minimal(&corr, &k), Err(PnpError::DegenerateSample));
    }

    #[test]
    fn unreachable_triangle_has_no_solution() {
        let k = intrinsics();
        // rays 0 and 1 are ~1° apart and ray 2 is 45° away; a triangle with
        // |x0 − x1| = 1 and |x0 − x2| = |x1 − x2| = 0.6 cannot be placed on them
        let pixels = [Point2::new(319.5, 239.5), Point2::new(329.5, 239.5), Point2::new(319.5 + 577.5, 239.5)];
        let models = [
            Point3::new(-0.5, 0.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
            Point3::new(0.0, (0.36f64 - 0.25).sqrt(), 0.0),
            Point3::new(0.0, 0.0, 0.1),
        ];
        let corr = [
            Correspondence2D3D::new(pixels[0], models[0]),
            Correspondence2D3D::new(pixels[1], models[1]),
            Correspondence2D3D::new(pixels[2], models[2]),
            Correspondence2D3D::new(pixels[0], models[3]),
        ];
        assert_eq!(solve_pnp_minimal(&corr, &k), Err(PnpError::NoRealSolution));
    }

    #[test]
    fn candidates_keep_all_points_in_front() {
        let k = intrinsics();
        for seed in 0..100 {
            let (_, c) = scene(seed, 4);
            let corr = [c[0], c[1], c[2], c[3]];
            for pose in solve_pnp_minimal(&corr, &k).unwrap() {
                assert!(corr.iter().all(|c| pose.transform(&c.model).z > 0.0));
            }
        }
    }
}
