//! NOCS-style evaluation: oriented-box IoU, pose error metrics, greedy
//! detection matching, per-category AP and the mAP summary table.

mod iou;
mod metrics;

pub use iou::{box_from_estimate, intersection_volume, iou3d, iou3d_mc, OrientedBox3};
pub use metrics::{
    ap_curves, average_precision, metric_table, ApCurve, ApCurves, Criterion, MetricAxis, MetricTable,
    TableThresholds,
};

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_error_deg, rotation_error_symmetric_deg, translation_error_cm, GeometryError, RigidPose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("box extents must be positive and finite, got {0:?}")]
    InvalidExtents([f64; 3]),
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error("record has no matched ground truth")]
    NoGroundTruth,
    #[error("no ground-truth objects to evaluate against")]
    EmptyRecordSet,
    #[error("confidence must be finite, got {0}")]
    InvalidConfidence(f64),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Categories evaluated modulo rotation about their model y axis.
pub const SYMMETRIC_CATEGORIES: [&str; 3] = ["bottle", "bowl", "can"];

pub fn symmetry_axis(category: &str) -> Option<Vector3<f64>> {
    SYMMETRIC_CATEGORIES.contains(&category).then(Vector3::y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Use the symmetry-aware rotation error for symmetric categories.
    pub symmetry: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { symmetry: true }
    }
}

/// Pose, metric scale and unit-diagonal box extents of one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub pose: RigidPose,
    pub scale: f64,
    pub canonical_extents: [f64; 3],
}

impl ObjectEstimate {
    pub fn bbox(&self) -> Result<OrientedBox3, EvalError> {
        box_from_estimate(&self.pose, self.scale, &self.canonical_extents)
    }

    fn validate(&self) -> Result<(), EvalError> {
        self.bbox().map(|_| ())
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub category: String,
    pub confidence: f64,
    #[serde(flatten)]
    pub estimate: ObjectEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_image_id")]
    pub image_id: Option<String>,
}

/// One line of a ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub category: String,
    #[serde(flatten)]
    pub estimate: ObjectEstimate,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_image_id")]
    pub image_id: Option<String>,
}

impl Prediction {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !self.confidence.is_finite() {
            return Err(EvalError::InvalidConfidence(self.confidence));
        }
        self.estimate.validate()
    }
}

impl GroundTruth {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.estimate.validate()
    }
}

/// Accepts either a string or an integer id.
fn de_image_id<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Str(String),
        Int(i64),
    }
    Ok(Option::<Id>::deserialize(d)?.map(|id| match id {
        Id::Str(s) => s,
        Id::Int(i) => i.to_string(),
    }))
}

/// A prediction together with the ground truth it was matched to, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub category: String,
    pub confidence: f64,
    pub estimate: ObjectEstimate,
    #[serde(default)]
    pub ground_truth: Option<ObjectEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

/// Detections of one category plus the number of ground-truth objects they
/// compete for.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryRecords {
    pub records: Vec<DetectionRecord>,
    pub num_gt: usize,
}

/// Categories in lexicographic order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordSet {
    pub categories: BTreeMap<String, CategoryRecords>,
}

impl RecordSet {
    /// Adds a record that already carries its ground truth (or none); a
    /// matched record also counts one ground-truth object.
    pub fn push(&mut self, record: DetectionRecord) {
        let entry = self.categories.entry(record.category.clone()).or_default();
        if record.ground_truth.is_some() {
            entry.num_gt += 1;
        }
        entry.records.push(record);
    }

    /// Counts ground-truth objects that no record was matched to.
    pub fn add_unmatched_gt(&mut self, category: &str, count: usize) {
        self.categories.entry(category.to_string()).or_default().num_gt += count;
    }

    pub fn total_gt(&self) -> usize {
        self.categories.values().map(|c| c.num_gt).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub iou: f64,
    pub rot_err_deg: f64,
    pub trans_err_cm: f64,
}

/// IoU, rotation error (symmetry-aware for flagged categories when
/// `opts.symmetry` is set) and translation error of a matched record.
pub fn pose_metrics(record: &DetectionRecord, opts: &EvalOptions) -> Result<PoseMetrics, EvalError> {
    let gt = record.ground_truth.as_ref().ok_or(EvalError::NoGroundTruth)?;
    let iou = iou3d(&record.estimate.bbox()?, &gt.bbox()?);
    let (ra, rb) = (&record.estimate.pose.rotation, &gt.pose.rotation);
    let rot_err_deg = match symmetry_axis(&record.category).filter(|_| opts.symmetry) {
        Some(axis) => rotation_error_symmetric_deg(ra, rb, &axis)?,
        None => rotation_error_deg(ra, rb),
    };
    Ok(PoseMetrics {
        iou,
        rot_err_deg,
        trans_err_cm: translation_error_cm(&record.estimate.pose.translation, &gt.pose.translation),
    })
}

/// Greedy matching: detections in descending confidence (stable), each
/// taking the unmatched ground truth of the same category and image with the
/// largest IoU. Ties go to the nearer center, then the earlier ground truth.
/// A detection is left unmatched only when no candidate remains.
pub fn match_detections(preds: &[Prediction], gts: &[GroundTruth]) -> Result<RecordSet, EvalError> {
    for p in preds {
        p.validate()?;
    }
    for g in gts {
        g.validate()?;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));

    let mut taken = vec![false; gts.len()];
    let mut matched: Vec<Option<usize>> = vec![None; preds.len()];
    for &i in &order {
        let p = &preds[i];
        let pb = p.estimate.bbox()?;
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.category != p.category || g.image_id != p.image_id {
                continue;
            }
            let iou = iou3d(&pb, &g.estimate.bbox()?);
            let dist = (p.estimate.pose.translation - g.estimate.pose.translation).norm();
            let better = match best {
                None => true,
                Some((_, bi, bd)) => iou > bi || (iou == bi && dist < bd),
            };
            if better {
                best = Some((j, iou, dist));
            }
        }
        if let Some((j, _, _)) = best {
            taken[j] = true;
            matched[i] = Some(j);
        }
    }

    let mut set = RecordSet::default();
    for (i, p) in preds.iter().enumerate() {
        set.push(DetectionRecord {
            category: p.category.clone(),
            confidence: p.confidence,
            estimate: p.estimate,
            ground_truth: matched[i].map(|j| gts[j].estimate),
            image_id: p.image_id.clone(),
        });
    }
    for (j, g) in gts.iter().enumerate() {
        if !taken[j] {
            set.add_unmatched_gt(&g.category, 1);
        }
    }
    Ok(set)
}
