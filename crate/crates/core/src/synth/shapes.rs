//! Procedural stand-ins for the six object categories, sampled with a
//! deterministic low-discrepancy sequence.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::Serialize;

use super::SynthError;
use crate::geometry::Point3;
use crate::nocs::{bounding_box, normalize_model, NocsModel};

pub const CATEGORIES: [&str; 6] = ["bottle", "bowl", "camera", "can", "laptop", "mug"];

pub const MIN_POINTS: usize = 32;

/// Normalized model plus its unit-diagonal bounding-box extents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicalModel {
    pub model: NocsModel,
    pub extents: [f64; 3],
}

pub fn category_index(category: &str) -> Result<usize, SynthError> {
    CATEGORIES
        .iter()
        .position(|&c| c == category)
        .ok_or_else(|| SynthError::UnknownCategory(category.to_string()))
}

type Param = Box<dyn Fn(f64, f64) -> Vector3<f64>>;

/// A parametric surface piece over `(u, v) ∈ [0,1)²`, approximately
/// area-preserving, with its area.
struct Patch {
    area: f64,
    at: Param,
}

fn cylinder(radius: f64, y0: f64, y1: f64) -> Patch {
    Patch {
        area: 2.0 * PI * radius * (y1 - y0),
        at: Box::new(move |u, v| {
            let a = 2.0 * PI * v;
            Vector3::new(radius * a.cos(), y0 + (y1 - y0) * u, radius * a.sin())
        }),
    }
}

/// Truncated cone around y.
fn cone(r0: f64, y0: f64, r1: f64, y1: f64) -> Patch {
    let slant = ((r1 - r0).powi(2) + (y1 - y0).powi(2)).sqrt();
    Patch {
        area: PI * (r0 + r1) * slant,
        at: Box::new(move |u, v| {
            // area-uniform along the slant
            let t = if (r1 - r0).abs() < 1e-12 {
                u
            } else {
                ((r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt() - r0) / (r1 - r0)
            };
            let r = r0 + t * (r1 - r0);
            let a = 2.0 * PI * v;
            Vector3::new(r * a.cos(), y0 + t * (y1 - y0), r * a.sin())
        }),
    }
}

fn disk(radius: f64, y: f64) -> Patch {
    Patch {
        area: PI * radius * radius,
        at: Box::new(move |u, v| {
            let r = radius * u.sqrt();
            let a = 2.0 * PI * v;
            Vector3::new(r * a.cos(), y, r * a.sin())
        }),
    }
}

/// Lower half of a sphere centered at the origin.
fn hemisphere(radius: f64) -> Patch {
    Patch {
        area: 2.0 * PI * radius * radius,
        at: Box::new(move |u, v| {
            let y = -radius * u;
            let r = (radius * radius - y * y).max(0.0).sqrt();
            let a = 2.0 * PI * v;
            Vector3::new(r * a.cos(), y, r * a.sin())
        }),
    }
}

/// Planar rectangle `origin + u·e1 + v·e2`.
fn rect(origin: Vector3<f64>, e1: Vector3<f64>, e2: Vector3<f64>) -> Patch {
    Patch {
        area: e1.cross(&e2).norm(),
        at: Box::new(move |u, v| origin + u * e1 + v * e2),
    }
}

/// The six faces of a box with the given center, full sizes and rotation.
fn cuboid(center: Vector3<f64>, size: Vector3<f64>, rot: Rotation3<f64>) -> Vec<Patch> {
    let ax = rot * Vector3::x() * size.x;
    let ay = rot * Vector3::y() * size.y;
    let az = rot * Vector3::z() * size.z;
    let corner = center - 0.5 * (ax + ay + az);
    vec![
        rect(corner, ax, ay),
        rect(corner + az, ax, ay),
        rect(corner, ax, az),
        rect(corner + ay, ax, az),
        rect(corner, ay, az),
        rect(corner + ax, ay, az),
    ]
}

/// Outer half of a torus in the xy plane, centered at `center`.
fn handle(center: Vector3<f64>, major: f64, minor: f64) -> Patch {
    Patch {
        area: PI * major * 2.0 * PI * minor,
        at: Box::new(move |u, v| {
            let a = -0.5 * PI + PI * u;
            let b = 2.0 * PI * v;
            let dir = Vector3::new(a.cos(), a.sin(), 0.0);
            center + major * dir + minor * (b.cos() * dir + b.sin() * Vector3::z())
        }),
    }
}

fn patches(category: &str) -> Result<Vec<Patch>, SynthError> {
    Ok(match category {
        "bottle" => vec![
            cylinder(0.3, -0.5, 0.2),
            cone(0.3, 0.2, 0.1, 0.35),
            cylinder(0.1, 0.35, 0.5),
            disk(0.3, -0.5),
            disk(0.1, 0.5),
        ],
        "bowl" => vec![hemisphere(0.5)],
        "camera" => {
            let mut p = cuboid(Vector3::zeros(), Vector3::new(1.0, 0.7, 0.45), Rotation3::identity());
            let lens = Rotation3::from_axis_angle(&Vector3::x_axis(), 0.5 * PI);
            let shift = Vector3::new(0.15, 0.0, 0.0);
            for base in [cylinder(0.2, 0.225, 0.45), disk(0.2, 0.45)] {
                let f = base.at;
                p.push(Patch {
                    area: base.area,
                    at: Box::new(move |u, v| lens * f(u, v) + shift),
                });
            }
            p
        }
        "can" => vec![cylinder(0.33, -0.5, 0.5), disk(0.33, -0.5), disk(0.33, 0.5)],
        "laptop" => {
            let mut p = cuboid(Vector3::new(0.0, 0.0, -0.35), Vector3::new(1.0, 0.03, 0.7), Rotation3::identity());
            // screen opened 110° from the base, hinged along the base's back edge
            let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), 20f64.to_radians());
            let center = tilt * Vector3::new(0.0, 0.35, 0.0);
            p.extend(cuboid(center, Vector3::new(1.0, 0.7, 0.03), tilt));
            p
        }
        "mug" => vec![
            cylinder(0.4, -0.5, 0.5),
            disk(0.4, -0.5),
            handle(Vector3::new(0.4, 0.0, 0.0), 0.22, 0.05),
        ],
        other => return Err(SynthError::UnknownCategory(other.to_string())),
    })
}

/// Splits `n` points across patches in proportion to area (largest
/// remainder, ties to the earlier patch).
fn allocate(areas: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let exact: Vec<f64> = areas.iter().map(|a| a / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..areas.len()).collect();
    rest.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let missing = n - counts.iter().sum::<usize>();
    for &i in rest.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Deterministic surface sampling of a category shape, normalized to the
/// centered unit-diagonal frame.
pub fn make_canonical_model(category: &str, n: usize) -> Result<CanonicalModel, SynthError> {
    if n < MIN_POINTS {
        return Err(SynthError::InvalidPointCount(n));
    }
    let parts = patches(category)?;
    let counts = allocate(&parts.iter().map(|p| p.area).collect::<Vec<_>>(), n);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut raw = Vec::with_capacity(n);
    for (patch, &count) in parts.iter().zip(&counts) {
        for i in 0..count {
            let u = (i as f64 + 0.5) / count as f64;
            let v = (i as f64 * golden).fract();
            raw.push(Point3::from((patch.at)(u, v)));
        }
    }
    let normalized = normalize_model(&raw)?;
    let (lo, hi) = bounding_box(&normalized.points);
    let extents = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
    Ok(CanonicalModel {
        model: NocsModel::new(normalized.points)?.with_category(category),
        extents,
    })
}
