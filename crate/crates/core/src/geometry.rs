//! Rotation, pose and similarity value types, pinhole projection, the
//! rotation/translation error measures and Umeyama similarity alignment.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;
pub type PointSet3 = Vec<Point3>;

/// Orthonormality / determinant tolerance enforced on every [`RotationMatrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Looser tolerance accepted when reading rotations from files; accepted
/// matrices are projected back onto SO(3).
const SERIALIZED_ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("symmetry axis is not unit length (norm = {0})")]
    NonUnitAxis(f64),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("matrix is not a proper rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A proper rotation matrix (element of SO(3)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and `det = +1` within [`ROTATION_TOLERANCE`].
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::check(&m, ROTATION_TOLERANCE)?;
        Ok(Self(m))
    }

    fn check(m: &Matrix3<f64>, tol: f64) -> Result<(), GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        if ortho > tol {
            return Err(GeometryError::InvalidRotation(format!(
                "|RᵀR − I|∞ = {ortho:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol {
            return Err(GeometryError::InvalidRotation(format!("det = {det}")));
        }
        Ok(())
    }

    /// Nearest rotation in the Frobenius sense (SVD projection onto SO(3)).
    pub fn nearest(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => {
                return Err(GeometryError::InvalidRotation(
                    "SVD did not converge".into(),
                ))
            }
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        // nalgebra sorts singular values in decreasing order, so index 2 is
        // the smallest one
        Ok(Self(u * d * v_t))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self(*Rotation3::from_axis_angle(&axis, angle_rad).matrix())
    }

    /// Exponential map of a rotation vector (axis · angle).
    pub fn exp(omega: &Vector3<f64>) -> Self {
        Self(*Rotation3::new(*omega).matrix())
    }

    /// Rotation vector (axis · angle) of this rotation.
    pub fn log(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.0).scaled_axis()
    }

    pub fn rot_x(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), deg.to_radians())
    }

    pub fn rot_y(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), deg.to_radians())
    }

    pub fn rot_z(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), deg.to_radians())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Re-projects onto SO(3) to remove accumulated drift.
    pub fn renormalized(&self) -> Self {
        let mut r = Rotation3::from_matrix_unchecked(self.0);
        r.renormalize();
        Self(*r.matrix())
    }

    /// Unit quaternion as `[w, x, y, z]`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        [q.w, q.i, q.j, q.k]
    }

    /// From a quaternion `[w, x, y, z]`; normalized before conversion.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self, GeometryError> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if !q.iter().all(|v| v.is_finite()) || quat.norm() < 1e-12 {
            return Err(GeometryError::InvalidRotation("degenerate quaternion".into()));
        }
        let uq = UnitQuaternion::from_quaternion(quat);
        Ok(Self(*uq.to_rotation_matrix().matrix()))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    /// Accepts matrices within 1e-6 of SO(3) and snaps them onto it; meant
    /// for values read back from text files.
    pub fn from_row_major(v: [f64; 9]) -> Result<Self, GeometryError> {
        let m = Matrix3::from_row_slice(&v);
        Self::check(&m, SERIALIZED_ROTATION_TOLERANCE)?;
        Self::nearest(&m)
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RotationMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        RotationMatrix::from_row_major(v).map_err(serde::de::Error::custom)
    }
}

/// Rigid transform taking model-frame points into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidPose {
    pub rotation: RotationMatrix,
    /// Meters.
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation.rotate(&p.coords) + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.rotate(&self.translation),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: RotationMatrix,
    translation: [f64; 3],
}

impl Serialize for RigidPose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            rotation: self.rotation,
            translation: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidPose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        RigidPose::new(r.rotation, Vector3::from(r.translation)).map_err(serde::de::Error::custom)
    }
}

/// `x ↦ scale · R · x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(
        scale: f64,
        rotation: RotationMatrix,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::NonPositiveScale(scale));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        Point3::from(self.scale * self.rotation.rotate(&p.coords) + self.translation)
    }

    pub fn rigid_part(&self) -> RigidPose {
        RigidPose {
            rotation: self.rotation,
            translation: self.translation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SimilarityRepr {
    scale: f64,
    rotation: RotationMatrix,
    translation: [f64; 3],
}

impl Serialize for SimilarityTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SimilarityRepr {
            scale: self.scale,
            rotation: self.rotation,
            translation: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimilarityTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = SimilarityRepr::deserialize(d)?;
        SimilarityTransform::new(r.scale, r.rotation, Vector3::from(r.translation))
            .map_err(serde::de::Error::custom)
    }
}

/// Undistorted pinhole intrinsics, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {fx}, fy = {fy})"
            )));
        }
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Normalized image-plane coordinates `((u − cx)/fx, (v − cy)/fy)`.
    pub fn normalize(&self, px: &Point2) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Unit bearing vector through a pixel.
    pub fn bearing(&self, px: &Point2) -> Vector3<f64> {
        let n = self.normalize(px);
        Vector3::new(n.x, n.y, 1.0).normalize()
    }
}

impl<'de> Deserialize<'de> for CameraIntrinsics {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            fx: f64,
            fy: f64,
            cx: f64,
            cy: f64,
        }
        let r = Raw::deserialize(d)?;
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy).map_err(serde::de::Error::custom)
    }
}

pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<Point2, GeometryError> {
    if !(p.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Inverse of [`project`] for a known camera-frame depth.
pub fn backproject(px: &Point2, depth: f64, k: &CameraIntrinsics) -> Point3 {
    let n = k.normalize(px);
    Point3::new(n.x * depth, n.y * depth, depth)
}

/// Geodesic angle between two rotations, degrees in `[0, 180]`.
///
/// Equal to `arccos((trace(a·bᵀ) − 1)/2)`, evaluated as
/// `atan2(sin θ, cos θ)` with `sin θ` taken from the antisymmetric part so
/// that small angles keep full precision.
pub fn rotation_error_deg(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let q = a.matrix() * b.matrix().transpose();
    let cos = ((q.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(q[(2, 1)] - q[(1, 2)], q[(0, 2)] - q[(2, 0)], q[(1, 0)] - q[(0, 1)]).norm();
    sin.atan2(cos).to_degrees()
}

/// Rotation error modulo rotations about a model-frame symmetry axis: the
/// angle between the two images of the axis, `arccos(⟨a·axis, b·axis⟩)`.
pub fn rotation_error_symmetric_deg(
    a: &RotationMatrix,
    b: &RotationMatrix,
    axis: &Vector3<f64>,
) -> Result<f64, GeometryError> {
    let n = axis.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(GeometryError::NonUnitAxis(n));
    }
    let ya = a.rotate(axis);
    let yb = b.rotate(axis);
    let cos = ya.dot(&yb).clamp(-1.0, 1.0);
    Ok(ya.cross(&yb).norm().atan2(cos).to_degrees())
}

pub fn translation_error_cm(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    100.0 * (a - b).norm()
}

/// Least-squares similarity (or rigid, when `estimate_scale` is false)
/// transform mapping `src` onto `dst`, after Umeyama.
pub fn umeyama_align(
    src: &[Point3],
    dst: &[Point3],
    estimate_scale: bool,
) -> Result<SimilarityTransform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(GeometryError::TooFewPoints {
            needed: 3,
            got: src.len(),
        });
    }
    let n = src.len() as f64;
    let mu_src = src.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mu_dst = dst.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s.coords - mu_src;
        let dc = d.coords - mu_dst;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov /= n;
    var_src /= n;
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite("point sets"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(GeometryError::DegenerateConfiguration(
                "SVD did not converge".into(),
            ))
        }
    };
    let sv = svd.singular_values;
    let largest = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-12 * largest).count();
    if largest <= 0.0 || rank < 2 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "cross-covariance rank {rank} < 2"
        )));
    }

    let mut sign = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[sv.imin()] = -1.0;
    }
    let rot = u * Matrix3::from_diagonal(&sign) * v_t;
    let rotation = RotationMatrix::nearest(&rot)?;

    let scale = if estimate_scale {
        if var_src <= 0.0 {
            return Err(GeometryError::DegenerateConfiguration(
                "source points coincide".into(),
            ));
        }
        sv.component_mul(&sign).sum() / var_src
    } else {
        1.0
    };
    let translation = mu_dst - scale * rotation.rotate(&mu_src);
    SimilarityTransform::new(scale, rotation, translation)
}
