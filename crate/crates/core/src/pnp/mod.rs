//! Perspective-n-Point: a P3P minimal solver with a fourth-point check, a
//! DLT least-squares solver, Gauss-Newton reprojection refinement and a
//! seeded RANSAC loop.

mod dlt;
mod p3p;
mod ransac;
mod refine;

pub use dlt::solve_pnp_lsq;
pub use p3p::solve_pnp_minimal;
pub use ransac::{ransac_pnp, PnPResult, RansacConfig};
pub use refine::{refine_pnp, refine_pnp_detailed, reprojection_jacobian, reprojection_cost, RefineReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, GeometryError, Point2, Point3, RigidPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("degenerate minimal sample (collinear model points)")]
    DegenerateSample,
    #[error("no real P3P solution in front of the camera")]
    NoRealSolution,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("refinement diverged: every point is behind the camera")]
    DivergedBehindCamera,
    #[error("insufficient correspondences: need at least {needed}, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("RANSAC found no consensus set of at least 4 inliers (best: {best})")]
    ConsensusNotFound { best: usize },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A pixel and the metric model-frame point it observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub image: Point2,
    pub model: Point3,
}

impl Correspondence2D3D {
    pub fn new(image: Point2, model: Point3) -> Self {
        Self { image, model }
    }

    pub fn is_finite(&self) -> bool {
        self.image.iter().chain(self.model.iter()).all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct CorrespondenceRepr {
    image: [f64; 2],
    model: [f64; 3],
}

impl Serialize for Correspondence2D3D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CorrespondenceRepr {
            image: [self.image.x, self.image.y],
            model: [self.model.x, self.model.y, self.model.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Correspondence2D3D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = CorrespondenceRepr::deserialize(d)?;
        let c = Correspondence2D3D::new(Point2::from(r.image), Point3::from(r.model));
        if !c.is_finite() {
            return Err(serde::de::Error::custom("non-finite correspondence"));
        }
        Ok(c)
    }
}

/// Multiplies every model point by `s`; this is the `ŝ ·` in `ŝ · C·P_nocs`.
pub fn scale_model_points(s: f64, pts: &[Point3]) -> Result<Vec<Point3>, PnpError> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(PnpError::NonPositiveScale(s));
    }
    Ok(pts.iter().map(|p| Point3::from(s * p.coords)).collect())
}

/// Pixel distance between an observation and the projection of its model
/// point; `None` when the point is not in front of the camera.
pub fn reprojection_error(pose: &RigidPose, c: &Correspondence2D3D, k: &CameraIntrinsics) -> Option<f64> {
    let pc = pose.transform(&c.model);
    project(&pc, k).ok().map(|p| (p - c.image).norm())
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_model_points_cases() {
        let pts = vec![Point3::new(0.1, 0.0, 0.0), Point3::new(-0.3, 0.2, 0.5)];
        assert_eq!(scale_model_points(1.0, &pts).unwrap(), pts);
        let doubled = scale_model_points(2.0, &pts).unwrap();
        assert_eq!(doubled[0], Point3::new(0.2, 0.0, 0.0));
        assert!(matches!(scale_model_points(0.0, &pts), Err(PnpError::NonPositiveScale(_))));
        assert!(scale_model_points(-1.0, &pts).is_err());
        assert!(scale_model_points(f64::NAN, &pts).is_err());
    }

    #[test]
    fn correspondence_json() {
        let c: Correspondence2D3D =
            serde_json::from_str(r#"{"image": [10.5, 20.0], "model": [0.1, 0.2, 0.3]}"#).unwrap();
        assert_eq!(c.image, Point2::new(10.5, 20.0));
        assert_eq!(c.model, Point3::new(0.1, 0.2, 0.3));
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"image":[10.5,20.0],"model":[0.1,0.2,0.3]}"#);
    }
}
