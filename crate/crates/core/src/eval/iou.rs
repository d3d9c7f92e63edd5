use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::{RigidPose, RotationMatrix};

/// A posed box: `extents` are full side lengths along the box frame axes,
/// and the box is centered on the pose origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrientedBox3 {
    pub pose: RigidPose,
    extents: [f64; 3],
}

impl OrientedBox3 {
    pub fn new(pose: RigidPose, extents: [f64; 3]) -> Result<Self, EvalError> {
        if extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(EvalError::InvalidExtents(extents));
        }
        Ok(Self { pose, extents })
    }

    pub fn extents(&self) -> [f64; 3] {
        self.extents
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn diagonal(&self) -> f64 {
        Vector3::from(self.extents).norm()
    }

    fn half(&self) -> Vector3<f64> {
        Vector3::from(self.extents) * 0.5
    }

    /// The 8 corners in world coordinates.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.half();
        std::array::from_fn(|i| {
            let local = Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            );
            self.pose.rotation.rotate(&local) + self.pose.translation
        })
    }

    /// Closed-set membership test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.pose.rotation.matrix().tr_mul(&(p - self.pose.translation));
        let h = self.half();
        local.x.abs() <= h.x && local.y.abs() <= h.y && local.z.abs() <= h.z
    }
}

impl<'de> Deserialize<'de> for OrientedBox3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            pose: RigidPose,
            extents: [f64; 3],
        }
        let r = Raw::deserialize(d)?;
        OrientedBox3::new(r.pose, r.extents).map_err(serde::de::Error::custom)
    }
}

/// Box of side lengths `s · canonical_extents` at `pose`.
pub fn box_from_estimate(pose: &RigidPose, s: f64, canonical_extents: &[f64; 3]) -> Result<OrientedBox3, EvalError> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(EvalError::NonPositiveScale(s));
    }
    OrientedBox3::new(*pose, canonical_extents.map(|e| s * e))
}

/// Convex polytope as a list of outward-oriented planar faces.
struct Polytope {
    faces: Vec<Vec<Vector3<f64>>>,
}

impl Polytope {
    /// Axis-aligned box `[-h, h]`, placed by `rotation`/`translation`.
    fn from_box(h: &Vector3<f64>, rotation: &RotationMatrix, translation: &Vector3<f64>) -> Self {
        let c = |sx: f64, sy: f64, sz: f64| rotation.rotate(&Vector3::new(sx * h.x, sy * h.y, sz * h.z)) + translation;
        // counter-clockwise when seen from outside
        let faces = vec![
            vec![c(1., -1., -1.), c(1., 1., -1.), c(1., 1., 1.), c(1., -1., 1.)],
            vec![c(-1., -1., -1.), c(-1., -1., 1.), c(-1., 1., 1.), c(-1., 1., -1.)],
            vec![c(-1., 1., -1.), c(-1., 1., 1.), c(1., 1., 1.), c(1., 1., -1.)],
            vec![c(-1., -1., -1.), c(1., -1., -1.), c(1., -1., 1.), c(-1., -1., 1.)],
            vec![c(-1., -1., 1.), c(1., -1., 1.), c(1., 1., 1.), c(-1., 1., 1.)],
            vec![c(-1., -1., -1.), c(-1., 1., -1.), c(1., 1., -1.), c(1., -1., -1.)],
        ];
        Self { faces }
    }

    /// Keeps the part with `n·x ≤ d`; points within `eps` of the plane count
    /// as inside.
    fn clip(&mut self, n: &Vector3<f64>, d: f64, eps: f64) {
        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut on_plane: Vec<Vector3<f64>> = Vec::new();
        let mut coplanar_face = false;
        for face in &self.faces {
            let dist: Vec<f64> = face.iter().map(|p| n.dot(p) - d).collect();
            if dist.iter().all(|&s| s <= eps) {
                if dist.iter().all(|&s| s.abs() <= eps) {
                    coplanar_face = true;
                }
                on_plane.extend(face.iter().zip(&dist).filter(|(_, s)| s.abs() <= eps).map(|(p, _)| *p));
                faces.push(face.clone());
                continue;
            }
            if dist.iter().all(|&s| s > eps) {
                continue;
            }
            let mut out = Vec::with_capacity(face.len() + 2);
            for i in 0..face.len() {
                let j = (i + 1) % face.len();
                let (p, q, sp, sq) = (face[i], face[j], dist[i], dist[j]);
                let p_in = sp <= eps;
                let q_in = sq <= eps;
                if p_in {
                    out.push(p);
                    if sp.abs() <= eps {
                        on_plane.push(p);
                    }
                }
                if p_in != q_in && sp.abs() > eps && sq.abs() > eps {
                    let x = p + (q - p) * (sp / (sp - sq));
                    out.push(x);
                    on_plane.push(x);
                }
            }
            if out.len() >= 3 {
                faces.push(out);
            }
        }
        if !coplanar_face {
            if let Some(cap) = cap_polygon(on_plane, n, eps) {
                faces.push(cap);
            }
        }
        self.faces = faces;
    }

    fn volume(&self) -> f64 {
        let mut v = 0.0;
        for f in &self.faces {
            for i in 1..f.len().saturating_sub(1) {
                v += f[0].dot(&f[i].cross(&f[i + 1]));
            }
        }
        (v / 6.0).max(0.0)
    }
}

/// Orders points lying on a plane counter-clockwise around `n`, after
/// merging near-duplicates.
fn cap_polygon(points: Vec<Vector3<f64>>, n: &Vector3<f64>, eps: f64) -> Option<Vec<Vector3<f64>>> {
    let mut uniq: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if !uniq.iter().any(|q| (q - p).norm() <= 10.0 * eps) {
            uniq.push(p);
        }
    }
    if uniq.len() < 3 {
        return None;
    }
    let center = uniq.iter().sum::<Vector3<f64>>() / uniq.len() as f64;
    let u = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&u).normalize();
    let e2 = n.cross(&e1);
    let mut keyed: Vec<(f64, Vector3<f64>)> = uniq
        .into_iter()
        .map(|p| {
            let r = p - center;
            (r.dot(&e2).atan2(r.dot(&e1)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(keyed.into_iter().map(|(_, p)| p).collect())
}

/// Volume of the intersection of two oriented boxes, by clipping `a`
/// against the six face planes of `b`.
pub fn intersection_volume(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let reach = 0.5 * (a.diagonal() + b.diagonal());
    if (a.pose.translation - b.pose.translation).norm() > reach {
        return 0.0;
    }
    // work in b's frame, where b is axis-aligned and centered
    let to_b = b.pose.inverse();
    let rot = to_b.rotation.compose(&a.pose.rotation);
    let trans = to_b.rotation.rotate(&a.pose.translation) + to_b.translation;
    let mut poly = Polytope::from_box(&a.half(), &rot, &trans);
    let hb = b.half();
    let eps = 1e-12 * reach.max(f64::MIN_POSITIVE);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut n = Vector3::zeros();
            n[axis] = sign;
            poly.clip(&n, hb[axis], eps);
            if poly.faces.is_empty() {
                return 0.0;
            }
        }
    }
    poly.volume().min(a.volume()).min(b.volume())
}

/// Exact 3D intersection-over-union.
pub fn iou3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

const MC_CHUNK: usize = 1 << 16;

/// Monte-Carlo IoU: uniform samples in the world-aligned box that bounds
/// both inputs. Deterministic for a given seed and sample count.
pub fn iou3d_mc(a: &OrientedBox3, b: &OrientedBox3, samples: usize, seed: u64) -> Result<f64, EvalError> {
    if samples < 1 {
        return Err(EvalError::InvalidSampleCount);
    }
    let corners: Vec<Vector3<f64>> = a.corners().into_iter().chain(b.corners()).collect();
    let lo = corners.iter().fold(Vector3::repeat(f64::INFINITY), |m, c| m.inf(c));
    let hi = corners.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, c| m.sup(c));
    let chunks = samples.div_ceil(MC_CHUNK);
    let (both, either) = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = MC_CHUNK.min(samples - chunk * MC_CHUNK);
            let (mut both, mut either) = (0u64, 0u64);
            for _ in 0..count {
                let p = Vector3::new(
                    lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                    lo.y + (hi.y - lo.y) * rng.random::<f64>(),
                    lo.z + (hi.z - lo.z) * rng.random::<f64>(),
                );
                let (ia, ib) = (a.contains(&p), b.contains(&p));
                both += (ia && ib) as u64;
                either += (ia || ib) as u64;
            }
            (both, either)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    Ok(if either == 0 { 0.0 } else { both as f64 / either as f64 })
}
