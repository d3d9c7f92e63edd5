use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pose_metrics, CategoryRecords, EvalError, EvalOptions, PoseMetrics, RecordSet};
use crate::io::{csv_string, fmt_f64};

/// Threshold test deciding whether a matched detection is a true positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    IouAtLeast(f64),
    RotationAtMost(f64),
    TranslationAtMost(f64),
    /// Rotation degrees and translation centimeters, both must hold.
    RotationTranslationAtMost(f64, f64),
}

fn short(x: f64) -> String {
    format!("{}", x)
}

impl Criterion {
    pub fn holds(&self, m: &PoseMetrics) -> bool {
        match *self {
            Criterion::IouAtLeast(t) => m.iou >= t,
            Criterion::RotationAtMost(d) => m.rot_err_deg <= d,
            Criterion::TranslationAtMost(c) => m.trans_err_cm <= c,
            Criterion::RotationTranslationAtMost(d, c) => m.rot_err_deg <= d && m.trans_err_cm <= c,
        }
    }

    /// Column label, e.g. `IoU50`, `10cm`, `10°`, `10°10cm`.
    pub fn label(&self) -> String {
        match *self {
            Criterion::IouAtLeast(t) => format!("IoU{}", short((t * 100.0 * 1e9).round() / 1e9)),
            Criterion::RotationAtMost(d) => format!("{}°", short(d)),
            Criterion::TranslationAtMost(c) => format!("{}cm", short(c)),
            Criterion::RotationTranslationAtMost(d, c) => format!("{}°{}cm", short(d), short(c)),
        }
    }
}

/// Area under the interpolated precision/recall curve for one category.
///
/// Detections are ranked by descending confidence, ties keeping input
/// order. Unmatched detections are false positives.
pub fn average_precision(cat: &CategoryRecords, criterion: &Criterion, opts: &EvalOptions) -> Result<f64, EvalError> {
    let metrics = category_metrics(cat, opts)?;
    ap_from_metrics(cat, &metrics, criterion)
}

fn category_metrics(cat: &CategoryRecords, opts: &EvalOptions) -> Result<Vec<Option<PoseMetrics>>, EvalError> {
    cat.records
        .iter()
        .map(|r| match r.ground_truth {
            Some(_) => pose_metrics(r, opts).map(Some),
            None => Ok(None),
        })
        .collect()
}

fn ap_from_metrics(cat: &CategoryRecords, metrics: &[Option<PoseMetrics>], criterion: &Criterion) -> Result<f64, EvalError> {
    if cat.num_gt == 0 {
        return Err(EvalError::EmptyRecordSet);
    }
    for r in &cat.records {
        if !r.confidence.is_finite() {
            return Err(EvalError::InvalidConfidence(r.confidence));
        }
    }
    let mut order: Vec<usize> = (0..cat.records.len()).collect();
    order.sort_by(|&a, &b| cat.records[b].confidence.total_cmp(&cat.records[a].confidence));

    let mut recall = Vec::with_capacity(order.len() + 2);
    let mut precision = Vec::with_capacity(order.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        if metrics[i].is_some_and(|m| criterion.holds(&m)) {
            tp += 1;
        }
        recall.push(tp as f64 / cat.num_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    // precision envelope
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum::<f64>();
    Ok(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableThresholds {
    pub iou: Vec<f64>,
    pub translation_cm: f64,
    pub rotation_deg: f64,
}

impl Default for TableThresholds {
    fn default() -> Self {
        Self {
            iou: vec![0.5, 0.75],
            translation_cm: 10.0,
            rotation_deg: 10.0,
        }
    }
}

impl TableThresholds {
    /// Column criteria: IoU thresholds, translation, rotation, then both.
    pub fn criteria(&self) -> Vec<Criterion> {
        let mut c: Vec<Criterion> = self.iou.iter().map(|&t| Criterion::IouAtLeast(t)).collect();
        c.push(Criterion::TranslationAtMost(self.translation_cm));
        c.push(Criterion::RotationAtMost(self.rotation_deg));
        c.push(Criterion::RotationTranslationAtMost(self.rotation_deg, self.translation_cm));
        c
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.iou.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(EvalError::InvalidThresholds(format!("IoU thresholds must lie in [0, 1]: {:?}", self.iou)));
        }
        for (name, v) in [("translation", self.translation_cm), ("rotation", self.rotation_deg)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(EvalError::InvalidThresholds(format!("{name} threshold must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-category and mean AP, as percentages, one column per criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    pub mean: Vec<f64>,
    /// Categories with detections but no ground truth; left out of the mean.
    pub skipped: Vec<String>,
}

impl MetricTable {
    pub fn warnings(&self) -> Vec<String> {
        self.skipped
            .iter()
            .map(|c| format!("warning: category {c:?} has no ground truth and is omitted from the mean"))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let header: Vec<String> = std::iter::once("category".to_string()).chain(self.columns.iter().cloned()).collect();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(c, v)| (c.as_str(), v))
            .chain(std::iter::once(("mean", &self.mean)))
            .map(|(c, v)| std::iter::once(c.to_string()).chain(v.iter().map(|&x| fmt_f64(x))).collect())
            .collect();
        csv_string(&header, &rows)
    }

    /// Aligned plain-text rendering with one decimal.
    pub fn to_text(&self) -> String {
        let names: Vec<&str> = self.rows.iter().map(|(c, _)| c.as_str()).chain(std::iter::once("mean")).collect();
        let first = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max("category".len());
        let widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count().max(5)).collect();
        let mut out = String::new();
        let pad_left = |s: &str, w: usize| format!("{}{}", " ".repeat(w.saturating_sub(s.chars().count())), s);
        let pad_right = |s: &str, w: usize| format!("{}{}", s, " ".repeat(w.saturating_sub(s.chars().count())));
        out.push_str(&pad_right("category", first));
        for (c, &w) in self.columns.iter().zip(&widths) {
            out.push_str("  ");
            out.push_str(&pad_left(c, w));
        }
        out.push('\n');
        let values = self.rows.iter().map(|(_, v)| v).chain(std::iter::once(&self.mean));
        for (name, vals) in names.iter().zip(values) {
            out.push_str(&pad_right(name, first));
            for (v, &w) in vals.iter().zip(&widths) {
                out.push_str("  ");
                out.push_str(&pad_left(&format!("{:.1}", v), w));
            }
            out.push('\n');
        }
        out
    }
}

/// mAP table: AP per category for every criterion in `thresholds`, plus the
/// unweighted mean over categories that have ground truth.
pub fn metric_table(set: &RecordSet, thresholds: &TableThresholds, opts: &EvalOptions) -> Result<MetricTable, EvalError> {
    thresholds.validate()?;
    let criteria = thresholds.criteria();
    let evaluated = evaluate_grid(set, &criteria, opts)?;
    let mean = mean_over(&evaluated, criteria.len())?;
    Ok(MetricTable {
        columns: criteria.iter().map(Criterion::label).collect(),
        rows: evaluated
            .iter()
            .filter_map(|(c, v)| v.as_ref().map(|v| (c.clone(), v.iter().map(|x| 100.0 * x).collect())))
            .collect(),
        mean: mean.iter().map(|x| 100.0 * x).collect(),
        skipped: evaluated.iter().filter(|(_, v)| v.is_none()).map(|(c, _)| c.clone()).collect(),
    })
}

/// Per-criterion AP of one category, `None` without ground truth.
type CategoryAps = (String, Option<Vec<f64>>);

/// AP for each category (sorted) and criterion.
fn evaluate_grid(
    set: &RecordSet,
    criteria: &[Criterion],
    opts: &EvalOptions,
) -> Result<Vec<CategoryAps>, EvalError> {
    let cats: Vec<(&String, &CategoryRecords)> = set.categories.iter().collect();
    cats.par_iter()
        .map(|(name, cat)| {
            if cat.num_gt == 0 {
                return Ok(((*name).clone(), None));
            }
            let metrics = category_metrics(cat, opts)?;
            let aps = criteria
                .iter()
                .map(|c| ap_from_metrics(cat, &metrics, c))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(((*name).clone(), Some(aps)))
        })
        .collect()
}

fn mean_over(evaluated: &[(String, Option<Vec<f64>>)], width: usize) -> Result<Vec<f64>, EvalError> {
    let present: Vec<&Vec<f64>> = evaluated.iter().filter_map(|(_, v)| v.as_ref()).collect();
    if present.is_empty() {
        return Err(EvalError::EmptyRecordSet);
    }
    Ok((0..width)
        .map(|j| present.iter().map(|v| v[j]).sum::<f64>() / present.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricAxis {
    Iou,
    Rotation,
    Translation,
}

impl MetricAxis {
    pub fn criterion(&self, threshold: f64) -> Criterion {
        match self {
            MetricAxis::Iou => Criterion::IouAtLeast(threshold),
            MetricAxis::Rotation => Criterion::RotationAtMost(threshold),
            MetricAxis::Translation => Criterion::TranslationAtMost(threshold),
        }
    }

    /// IoU 0..1 by 0.01, rotation 0..60° by 1°, translation 0..15 cm by 0.5.
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            MetricAxis::Iou => (0..=100).map(|i| i as f64 / 100.0).collect(),
            MetricAxis::Rotation => (0..=60).map(|i| i as f64).collect(),
            MetricAxis::Translation => (0..=30).map(|i| i as f64 * 0.5).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricAxis::Iou => "iou",
            MetricAxis::Rotation => "rotation",
            MetricAxis::Translation => "translation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApCurve {
    pub thresholds: Vec<f64>,
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApCurves {
    pub axis: MetricAxis,
    pub categories: Vec<(String, ApCurve)>,
    pub mean: ApCurve,
    pub skipped: Vec<String>,
}

impl ApCurves {
    /// Columns `threshold, <category>..., mean`; AP as fractions.
    pub fn to_csv(&self) -> String {
        let header: Vec<String> = std::iter::once("threshold".to_string())
            .chain(self.categories.iter().map(|(c, _)| c.clone()))
            .chain(std::iter::once("mean".to_string()))
            .collect();
        let rows: Vec<Vec<String>> = (0..self.mean.thresholds.len())
            .map(|i| {
                std::iter::once(fmt_f64(self.mean.thresholds[i]))
                    .chain(self.categories.iter().map(|(_, c)| fmt_f64(c.ap[i])))
                    .chain(std::iter::once(fmt_f64(self.mean.ap[i])))
                    .collect()
            })
            .collect();
        csv_string(&header, &rows)
    }
}

/// AP at every threshold of a strictly increasing grid along one axis.
pub fn ap_curves(set: &RecordSet, axis: MetricAxis, grid: &[f64], opts: &EvalOptions) -> Result<ApCurves, EvalError> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(EvalError::InvalidThresholds("grid must be non-empty and strictly increasing".into()));
    }
    let criteria: Vec<Criterion> = grid.iter().map(|&t| axis.criterion(t)).collect();
    let evaluated = evaluate_grid(set, &criteria, opts)?;
    let mean = mean_over(&evaluated, criteria.len())?;
    let curve = |ap: Vec<f64>| ApCurve {
        thresholds: grid.to_vec(),
        ap,
    };
    Ok(ApCurves {
        axis,
        categories: evaluated
            .iter()
            .filter_map(|(c, v)| v.as_ref().map(|v| (c.clone(), curve(v.clone()))))
            .collect(),
        mean: curve(mean),
        skipped: evaluated.iter().filter(|(_, v)| v.is_none()).map(|(c, _)| c.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::cube_estimate;
    use super::super::DetectionRecord;
    use super::*;
    use crate::geometry::RotationMatrix;
    use proptest::prelude::*;

    fn rec(conf: f64, dx: f64, matched: bool) -> DetectionRecord {
        let gt = cube_estimate(0.0, RotationMatrix::identity());
        DetectionRecord {
            category: "mug".into(),
            confidence: conf,
            estimate: cube_estimate(dx, RotationMatrix::identity()),
            ground_truth: matched.then_some(gt),
            image_id: None,
        }
    }

    fn cat(records: Vec<DetectionRecord>, num_gt: usize) -> CategoryRecords {
        CategoryRecords { records, num_gt }
    }

    const IOU50: Criterion = Criterion::IouAtLeast(0.5);

    #[test]
    fn all_correct() {
        let c = cat(vec![rec(0.9, 0.0, true), rec(0.3, 0.01, true)], 2);
        assert_eq!(average_precision(&c, &IOU50, &EvalOptions::default()).unwrap(), 1.0);
    }

    #[test]
    fn half_recall() {
        // high-confidence hit, low-confidence miss, two objects
        let c = cat(vec![rec(0.9, 0.0, true), rec(0.1, 0.6, true)], 2);
        assert!((average_precision(&c, &IOU50, &EvalOptions::default()).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn none_correct() {
        let c = cat(vec![rec(0.9, 0.9, true), rec(0.1, 0.0, false)], 2);
        assert_eq!(average_precision(&c, &IOU50, &EvalOptions::default()).unwrap(), 0.0);
        assert!(matches!(
            average_precision(&cat(vec![rec(0.9, 0.0, false)], 0), &IOU50, &EvalOptions::default()),
            Err(EvalError::EmptyRecordSet)
        ));
    }

    #[test]
    fn envelope_interpolation() {
        // hits at ranks 1 and 3 of 3, three objects: (1/3, 1), (2/3, 2/3)
        let c = cat(vec![rec(0.9, 0.0, true), rec(0.8, 0.9, true), rec(0.7, 0.0, true)], 3);
        let ap = average_precision(&c, &IOU50, &EvalOptions::default()).unwrap();
        assert!((ap - (1.0 / 3.0 + 1.0 / 3.0 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn labels_match_table_header() {
        let labels: Vec<String> = TableThresholds::default().criteria().iter().map(Criterion::label).collect();
        assert_eq!(labels, ["IoU50", "IoU75", "10cm", "10°", "10°10cm"]);
    }

    #[test]
    fn perfect_table_and_curves() {
        let mut set = RecordSet::default();
        for i in 0..4 {
            let mut r = rec(0.5 + 0.1 * i as f64, 0.0, true);
            r.category = if i % 2 == 0 { "mug".into() } else { "laptop".into() };
            set.push(r);
        }
        let t = metric_table(&set, &TableThresholds::default(), &EvalOptions::default()).unwrap();
        assert!(t.mean.iter().all(|&v| (v - 100.0).abs() < 1e-12));
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].0, "laptop");
        let text = t.to_text();
        assert!(text.lines().next().unwrap().contains("IoU50"));
        assert!(text.contains("100.0"));
        assert!(t.to_csv().starts_with("category,IoU50,IoU75,10cm,10°,10°10cm\n"));
        for axis in [MetricAxis::Rotation, MetricAxis::Translation] {
            let c = ap_curves(&set, axis, &axis.default_grid(), &EvalOptions::default()).unwrap();
            assert!(c.mean.ap.iter().all(|&v| v == 1.0));
        }
        let c = ap_curves(&set, MetricAxis::Iou, &[0.1, 0.5, 0.9], &EvalOptions::default()).unwrap();
        assert!(c.mean.ap.iter().all(|&v| v == 1.0));
        assert!(c.to_csv().starts_with("threshold,laptop,mug,mean\n0.10000000000000001,1,1,1\n"));
    }

    #[test]
    fn category_without_gt_is_skipped() {
        let mut set = RecordSet::default();
        set.push(rec(0.9, 0.0, true));
        let mut orphan = rec(0.9, 0.0, false);
        orphan.category = "bowl".into();
        set.push(orphan);
        let t = metric_table(&set, &TableThresholds::default(), &EvalOptions::default()).unwrap();
        assert_eq!(t.skipped, ["bowl"]);
        assert_eq!(t.warnings().len(), 1);
        assert_eq!(t.mean[0], 100.0);
        let mut only = RecordSet::default();
        only.push(rec(0.9, 0.0, false));
        assert!(matches!(
            metric_table(&only, &TableThresholds::default(), &EvalOptions::default()),
            Err(EvalError::EmptyRecordSet)
        ));
    }

    #[test]
    fn bad_grids() {
        let set = RecordSet::default();
        for g in [vec![], vec![1.0, 1.0], vec![2.0, 1.0]] {
            assert!(matches!(
                ap_curves(&set, MetricAxis::Rotation, &g, &EvalOptions::default()),
                Err(EvalError::InvalidThresholds(_))
            ));
        }
    }

    fn arb_records() -> impl Strategy<Value = (Vec<DetectionRecord>, usize)> {
        (proptest::collection::vec((0.0f64..1.0, 0.0f64..0.5, any::<bool>(), -0.5f64..0.5), 1..20), 0usize..5).prop_map(
            |(items, extra)| {
                let recs: Vec<DetectionRecord> = items
                    .into_iter()
                    .map(|(conf, dx, matched, angle)| {
                        let mut r = rec(conf, dx, matched);
                        r.estimate.pose.rotation = RotationMatrix::rot_x(angle * 60.0);
                        r
                    })
                    .collect();
                let gt = recs.iter().filter(|r| r.ground_truth.is_some()).count() + extra;
                (recs, gt.max(1))
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ap_invariant_to_confidence_scaling((recs, num_gt) in arb_records(), k in 0.01f64..100.0) {
            let opts = EvalOptions::default();
            let a = cat(recs.clone(), num_gt);
            let b = cat(recs.into_iter().map(|mut r| { r.confidence *= k; r }).collect(), num_gt);
            for crit in TableThresholds::default().criteria() {
                prop_assert_eq!(average_precision(&a, &crit, &opts).unwrap(), average_precision(&b, &crit, &opts).unwrap());
            }
        }

        #[test]
        fn conjunction_bounded((recs, num_gt) in arb_records()) {
            let mut set = RecordSet::default();
            set.categories.insert("mug".into(), cat(recs, num_gt));
            let t = metric_table(&set, &TableThresholds::default(), &EvalOptions::default()).unwrap();
            prop_assert!(t.mean[4] <= t.mean[2].min(t.mean[3]) + 1e-12);
        }

        #[test]
        fn curves_monotone((recs, num_gt) in arb_records()) {
            let mut set = RecordSet::default();
            set.categories.insert("mug".into(), cat(recs, num_gt));
            let opts = EvalOptions::default();
            for axis in [MetricAxis::Rotation, MetricAxis::Translation] {
                let c = ap_curves(&set, axis, &axis.default_grid(), &opts).unwrap();
                prop_assert!(c.mean.ap.windows(2).all(|w| w[1] >= w[0]));
            }
            let c = ap_curves(&set, MetricAxis::Iou, &MetricAxis::Iou.default_grid(), &opts).unwrap();
            prop_assert!(c.mean.ap.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
