//! Normalized object coordinate space: shape priors, deformation fields,
//! reconstructed models and soft correspondence matrices.
//!
//! Models are origin-centered with a unit tight-bounding-box diagonal, so
//! multiplying by the metric diagonal length gives metric coordinates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;

const PRIOR_TOLERANCE: f64 = 1e-6;
const ROW_SUM_TOLERANCE: f64 = 1e-6;
const ROW_RENORMALIZE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NocsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {row} of the correspondence matrix sums to {sum}")]
    RowNotStochastic { row: usize, sum: f64 },
    #[error("correspondence matrix entry ({row}, {col}) = {value} is negative or non-finite")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("bounding-box diagonal {0} is too small to normalize")]
    DegenerateExtent(f64),
    #[error("shape prior violates normalization: {0}")]
    NotNormalized(String),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("point set is empty")]
    Empty,
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / points.len() as f64)
}

/// Minimum and maximum corners of the tight axis-aligned bounding box.
pub fn bounding_box(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

pub fn bbox_diagonal(points: &[Point3]) -> f64 {
    let (lo, hi) = bounding_box(points);
    (hi - lo).norm()
}

fn all_finite(points: &[Point3]) -> bool {
    points.iter().all(|p| p.iter().all(|v| v.is_finite()))
}

/// Category mean shape in NOCS units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapePrior {
    category: String,
    #[serde(serialize_with = "ser_points")]
    points: Vec<Point3>,
}

impl ShapePrior {
    pub fn new(category: impl Into<String>, points: Vec<Point3>) -> Result<Self, NocsError> {
        if points.is_empty() {
            return Err(NocsError::Empty);
        }
        if !all_finite(&points) {
            return Err(NocsError::NonFinite);
        }
        let diag = bbox_diagonal(&points);
        if (diag - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(NocsError::NotNormalized(format!("bbox diagonal {diag}")));
        }
        let c = centroid(&points);
        if c.coords.norm() > PRIOR_TOLERANCE {
            return Err(NocsError::NotNormalized(format!("centroid {c}")));
        }
        Ok(Self {
            category: category.into(),
            points,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl<'de> Deserialize<'de> for ShapePrior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PointFile::deserialize(d)?;
        ShapePrior::new(raw.category, raw.points.into_iter().map(Point3::from).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Per-point offsets applied to a prior.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    offsets: Vec<Vector3<f64>>,
}

impl DeformationField {
    pub fn new(offsets: Vec<Vector3<f64>>) -> Result<Self, NocsError> {
        if !offsets.iter().all(|o| o.iter().all(|v| v.is_finite())) {
            return Err(NocsError::NonFinite);
        }
        Ok(Self { offsets })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            offsets: vec![Vector3::zeros(); n],
        }
    }

    pub fn offsets(&self) -> &[Vector3<f64>] {
        &self.offsets
    }
}

/// Instance model in NOCS units; may extend past the prior's unit box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NocsModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    category: Option<String>,
    #[serde(serialize_with = "ser_points")]
    points: Vec<Point3>,
}

impl NocsModel {
    pub fn new(points: Vec<Point3>) -> Result<Self, NocsError> {
        if points.is_empty() {
            return Err(NocsError::Empty);
        }
        if !all_finite(&points) {
            return Err(NocsError::NonFinite);
        }
        Ok(Self {
            category: None,
            points,
        })
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }

    pub fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl From<ShapePrior> for NocsModel {
    fn from(p: ShapePrior) -> Self {
        Self {
            category: Some(p.category),
            points: p.points,
        }
    }
}

impl<'de> Deserialize<'de> for NocsModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PointFile::deserialize(d)?;
        let model = NocsModel::new(raw.points.into_iter().map(Point3::from).collect())
            .map_err(serde::de::Error::custom)?;
        Ok(model.with_category(raw.category))
    }
}

#[derive(Deserialize)]
struct PointFile {
    #[serde(default)]
    category: String,
    points: Vec<[f64; 3]>,
}

fn ser_points<S: serde::Serializer>(points: &[Point3], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(points.len()))?;
    for p in points {
        seq.serialize_element(&[p.x, p.y, p.z])?;
    }
    seq.end()
}

/// Row-stochastic M×N soft assignment of observations to model points.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CorrespondenceMatrix {
    /// Row-major dense constructor. Rows within 1e-3 of summing to one are
    /// renormalized; larger deviations are rejected.
    pub fn new(rows: usize, cols: usize, mut data: Vec<f64>) -> Result<Self, NocsError> {
        if rows == 0 || cols == 0 {
            return Err(NocsError::DimensionMismatch(format!("empty {rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(NocsError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        for (r, row) in data.chunks_mut(cols).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(NocsError::InvalidEntry { row: r, col: c, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_RENORMALIZE_TOLERANCE {
                return Err(NocsError::RowNotStochastic { row: r, sum });
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Sparse constructor from `(row, col, value)` triplets; missing entries
    /// are zero and repeated entries accumulate.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, NocsError> {
        let mut data = vec![0.0; rows * cols];
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(NocsError::DimensionMismatch(format!(
                    "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            data[r * cols + c] += v;
        }
        Self::new(rows, cols, data)
    }

    /// One-hot rows selecting `indices[i]` for row `i`.
    pub fn one_hot(indices: &[usize], cols: usize) -> Result<Self, NocsError> {
        let triplets: Vec<_> = indices.iter().enumerate().map(|(r, &c)| (r, c, 1.0)).collect();
        Self::from_triplets(indices.len(), cols, &triplets)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    Sparse {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cols: Option<usize>,
        triplets: Vec<(usize, usize, f64)>,
    },
}

impl Serialize for CorrespondenceMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixRepr::Dense {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CorrespondenceMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = match MatrixRepr::deserialize(d)? {
            MatrixRepr::Dense { rows, cols, data } => CorrespondenceMatrix::new(rows, cols, data),
            MatrixRepr::Sparse { rows, cols, triplets } => {
                // dimensions default to the largest index present
                let rows = rows.unwrap_or_else(|| triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0));
                let cols = cols.unwrap_or_else(|| triplets.iter().map(|t| t.1 + 1).max().unwrap_or(0));
                CorrespondenceMatrix::from_triplets(rows, cols, &triplets)
            }
        };
        m.map_err(serde::de::Error::custom)
    }
}

/// `P_nocs = P_r + D`.
pub fn apply_deformation(prior: &ShapePrior, d: &DeformationField) -> Result<NocsModel, NocsError> {
    deform_points(prior.points(), d).map(|m| m.with_category(prior.category()))
}

/// Pointwise sum without requiring the base to satisfy prior invariants.
pub fn deform_points(base: &[Point3], d: &DeformationField) -> Result<NocsModel, NocsError> {
    if base.len() != d.offsets.len() {
        return Err(NocsError::DimensionMismatch(format!(
            "prior has {} points, deformation field {}",
            base.len(),
            d.offsets.len()
        )));
    }
    NocsModel::new(base.iter().zip(&d.offsets).map(|(p, o)| p + o).collect())
}

/// `C · P_nocs`: each output point is the convex combination of model points
/// weighted by one row of `c`.
pub fn assign(c: &CorrespondenceMatrix, model: &NocsModel) -> Result<Vec<Point3>, NocsError> {
    if c.cols != model.len() {
        return Err(NocsError::DimensionMismatch(format!(
            "matrix has {} columns, model {} points",
            c.cols,
            model.len()
        )));
    }
    (0..c.rows)
        .map(|r| {
            let row = c.row(r);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(NocsError::RowNotStochastic { row: r, sum });
            }
            let acc = row
                .iter()
                .zip(model.points())
                .fold(Vector3::zeros(), |acc, (w, p)| acc + *w * p.coords);
            Ok(Point3::from(acc))
        })
        .collect()
}

/// Row-wise argmax; ties resolve to the lowest column.
pub fn harden(c: &CorrespondenceMatrix) -> Vec<usize> {
    (0..c.rows)
        .map(|r| {
            let row = c.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// A point set moved to the normalized frame, with what it takes to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedModel {
    pub points: Vec<Point3>,
    /// Metric bbox diagonal of the input; the `s_gt` convention.
    pub scale: f64,
    pub centroid: Point3,
}

impl NormalizedModel {
    pub fn denormalize(&self) -> Vec<Point3> {
        self.points
            .iter()
            .map(|p| Point3::from(self.scale * p.coords + self.centroid.coords))
            .collect()
    }
}

/// Centers on the centroid and scales to unit bbox diagonal.
pub fn normalize_model(points: &[Point3]) -> Result<NormalizedModel, NocsError> {
    if points.is_empty() {
        return Err(NocsError::Empty);
    }
    if !all_finite(points) {
        return Err(NocsError::NonFinite);
    }
    let diag = bbox_diagonal(points);
    if diag < 1e-12 {
        return Err(NocsError::DegenerateExtent(diag));
    }
    let c = centroid(points);
    let normalized = points.iter().map(|p| Point3::from((p - c) / diag)).collect();
    Ok(NormalizedModel {
        points: normalized,
        scale: diag,
        centroid: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..2.0), rng.random_range(-3.0..1.0)))
            .collect()
    }

    fn random_stochastic(rng: &mut impl Rng, m: usize, n: usize) -> CorrespondenceMatrix {
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let s: f64 = row.iter().sum();
            data.extend(row.into_iter().map(|v| v / s));
        }
        CorrespondenceMatrix::new(m, n, data).unwrap()
    }

    fn unit_prior() -> ShapePrior {
        let cube: Vec<Point3> = (0..8)
            .map(|i| {
                let h = 0.5 / 3f64.sqrt();
                Point3::new(
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                )
            })
            .collect();
        ShapePrior::new("box", cube).unwrap()
    }

    #[test]
    fn zero_deformation_is_identity() {
        let prior = unit_prior();
        let model = apply_deformation(&prior, &DeformationField::zeros(prior.len())).unwrap();
        assert_eq!(model.points(), prior.points());
        assert_eq!(model.category(), Some("box"));
    }

    #[test]
    fn single_point_deformation() {
        let d = DeformationField::new(vec![Vector3::new(0.0, 0.05, 0.0)]).unwrap();
        let m = deform_points(&[Point3::new(0.1, 0.0, 0.0)], &d).unwrap();
        assert_eq!(m.points()[0], Point3::new(0.1, 0.05, 0.0));
    }

    #[test]
    fn deformation_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_points(&mut rng, 50);
        let offs: Vec<Vector3<f64>> = random_points(&mut rng, 50).iter().map(|p| p.coords * 0.1).collect();
        let m = deform_points(&base, &DeformationField::new(offs.clone()).unwrap()).unwrap();
        for i in 0..50 {
            for a in 0..3 {
                assert_eq!(m.points()[i][a], base[i][a] + offs[i][a]);
            }
        }
    }

    #[test]
    fn deformation_dimension_mismatch() {
        let prior = unit_prior();
        assert!(matches!(
            apply_deformation(&prior, &DeformationField::zeros(3)),
            Err(NocsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn deformation_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random_points(&mut rng, 20);
        let d1: Vec<_> = random_points(&mut rng, 20).iter().map(|p| p.coords * 0.1).collect();
        let d2: Vec<_> = random_points(&mut rng, 20).iter().map(|p| p.coords * 0.1).collect();
        let sum: Vec<_> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let once = deform_points(&base, &DeformationField::new(sum).unwrap()).unwrap();
        let first = deform_points(&base, &DeformationField::new(d1).unwrap()).unwrap();
        let twice = deform_points(first.points(), &DeformationField::new(d2).unwrap()).unwrap();
        for (a, b) in once.points().iter().zip(twice.points()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn one_hot_rows_select_points() {
        let prior = unit_prior();
        let model = NocsModel::from(prior.clone());
        let idx = [3, 0, 7, 7, 2];
        let c = CorrespondenceMatrix::one_hot(&idx, 8).unwrap();
        let out = assign(&c, &model).unwrap();
        for (o, &i) in out.iter().zip(&idx) {
            assert_eq!(*o, prior.points()[i]);
        }
        assert_eq!(harden(&c), idx);
    }

    #[test]
    fn uniform_row_gives_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = NocsModel::new(random_points(&mut rng, 10)).unwrap();
        let c = CorrespondenceMatrix::new(1, 10, vec![0.1; 10]).unwrap();
        let out = assign(&c, &model).unwrap();
        assert!((out[0] - centroid(model.points())).norm() < 1e-12);
    }

    #[test]
    fn assign_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = NocsModel::new(random_points(&mut rng, 30)).unwrap();
        let c = random_stochastic(&mut rng, 12, 30);
        let out = assign(&c, &model).unwrap();
        // dense (12×30)·(30×3) through nalgebra
        let cm = nalgebra::DMatrix::from_fn(12, 30, |r, col| c.get(r, col));
        let pm = nalgebra::DMatrix::from_fn(30, 3, |r, col| model.points()[r][col]);
        let prod = cm * pm;
        for r in 0..12 {
            for a in 0..3 {
                assert!((out[r][a] - prod[(r, a)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn assign_dimension_mismatch() {
        let model = NocsModel::from(unit_prior());
        let c = CorrespondenceMatrix::new(1, 4, vec![0.25; 4]).unwrap();
        assert!(matches!(assign(&c, &model), Err(NocsError::DimensionMismatch(_))));
    }

    #[test]
    fn row_stochastic_validation() {
        // within 1e-3: renormalized
        let c = CorrespondenceMatrix::new(1, 2, vec![0.5, 0.5004]).unwrap();
        assert!((c.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            CorrespondenceMatrix::new(2, 2, vec![0.5, 0.5, 0.7, 0.7]),
            Err(NocsError::RowNotStochastic { row: 1, .. })
        ));
        assert!(matches!(
            CorrespondenceMatrix::new(1, 2, vec![1.5, -0.5]),
            Err(NocsError::InvalidEntry { .. })
        ));
        assert!(CorrespondenceMatrix::new(1, 3, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn harden_ties_and_random() {
        let c = CorrespondenceMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(harden(&c), vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_stochastic(&mut rng, 40, 17);
        let got = harden(&c);
        for (r, &g) in got.iter().enumerate() {
            let mut best = 0;
            let mut best_v = -1.0;
            for j in 0..17 {
                if c.get(r, j) > best_v {
                    best_v = c.get(r, j);
                    best = j;
                }
            }
            assert_eq!(g, best);
        }
    }

    #[test]
    fn matrix_json_forms() {
        let dense: CorrespondenceMatrix =
            serde_json::from_str(r#"{"rows": 2, "cols": 2, "data": [1, 0, 0.25, 0.75]}"#).unwrap();
        let sparse: CorrespondenceMatrix =
            serde_json::from_str(r#"{"triplets": [[0, 0, 1.0], [1, 0, 0.25], [1, 1, 0.75]]}"#).unwrap();
        assert_eq!(dense, sparse);
        let sized: CorrespondenceMatrix =
            serde_json::from_str(r#"{"rows": 1, "cols": 3, "triplets": [[0, 0, 1.0]]}"#).unwrap();
        assert_eq!(sized.cols(), 3);
        assert!(serde_json::from_str::<CorrespondenceMatrix>(r#"{"rows": 1, "cols": 2, "data": [0.2, 0.2]}"#).is_err());
    }

    #[test]
    fn normalize_unit_cube() {
        let cube: Vec<Point3> = (0..8)
            .map(|i| Point3::new((i & 1) as f64 - 0.5, ((i >> 1) & 1) as f64 - 0.5, ((i >> 2) & 1) as f64 - 0.5))
            .collect();
        let n = normalize_model(&cube).unwrap();
        assert!((n.scale - 3f64.sqrt()).abs() < 1e-12);
        assert!((bbox_diagonal(&n.points) - 1.0).abs() < 1e-12);
        // already normalized
        let again = normalize_model(&n.points).unwrap();
        assert!((again.scale - 1.0).abs() < 1e-12);
        for (a, b) in again.points.iter().zip(&n.points) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(ShapePrior::new("cube", n.points).is_ok());
    }

    #[test]
    fn normalize_degenerate() {
        let p = vec![Point3::new(1.0, 1.0, 1.0); 3];
        assert!(matches!(normalize_model(&p), Err(NocsError::DegenerateExtent(_))));
        assert!(matches!(normalize_model(&[]), Err(NocsError::Empty)));
    }

    #[test]
    fn prior_invariants_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = random_points(&mut rng, 20);
        assert!(matches!(ShapePrior::new("x", raw.clone()), Err(NocsError::NotNormalized(_))));
        let n = normalize_model(&raw).unwrap();
        let shifted: Vec<_> = n.points.iter().map(|p| p + Vector3::new(0.01, 0.0, 0.0)).collect();
        assert!(matches!(ShapePrior::new("x", shifted), Err(NocsError::NotNormalized(_))));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(seed in any::<u64>(), n in 2usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n);
            let norm = normalize_model(&pts).unwrap();
            prop_assert!((bbox_diagonal(&norm.points) - 1.0).abs() < 1e-9);
            prop_assert!(centroid(&norm.points).coords.norm() < 1e-9);
            for (a, b) in norm.denormalize().iter().zip(&pts) {
                prop_assert!((a - b).norm() < 1e-9);
            }
        }

        #[test]
        fn assign_stays_in_convex_hull(seed in any::<u64>(), m in 1usize..20) {
            // tetrahedron model: hull membership ⇔ barycentric weights ≥ 0
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let verts = loop {
                let v = random_points(&mut rng, 4);
                let e = Matrix4::from_fn(|r, c| if r < 3 { v[c][r] } else { 1.0 });
                if e.determinant().abs() > 1e-3 { break v; }
            };
            let model = NocsModel::new(verts.clone()).unwrap();
            let c = random_stochastic(&mut rng, m, 4);
            let e = Matrix4::from_fn(|r, col| if r < 3 { verts[col][r] } else { 1.0 });
            let inv = e.try_inverse().unwrap();
            for p in assign(&c, &model).unwrap() {
                let bary = inv * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
                prop_assert!(bary.iter().all(|&w| w >= -1e-9), "{bary}");
            }
        }
    }
}
