//! Detection evaluation math: IoU, threshold correctness, greedy matching,
//! precision-recall curves, average precision as the area under the PR
//! curve, and mAP averaged over classes and over an IoU-threshold sweep.
//!
//! Everything here is deterministic: detections are processed in a canonical
//! order and score ties across images break by (image id, box coordinates),
//! so results are bit-identical regardless of input iteration order or
//! worker count.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::annotations::{GroundTruthSet, PredictionSet};
use crate::detect::{sort_canonical, BoundingBox, Detection};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("predictions reference unknown image id '{0}'")]
    UnknownImageId(String),
    #[error("mean over an empty list is undefined")]
    EmptyMean,
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

/// Intersection over union of two boxes with real-valued interval areas.
/// Returns 0 for disjoint boxes; symmetric in its arguments.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// How an IoU value compares against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdRule {
    /// `IoU > t`: a detection exactly at the threshold is incorrect.
    #[default]
    Strict,
    /// `IoU >= t`, for parity with tools that use a non-strict comparison.
    NonStrict,
}

impl ThresholdRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "strict" => Some(Self::Strict),
            "non-strict" => Some(Self::NonStrict),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Strict => "strict",
            Self::NonStrict => "non-strict",
        }
    }

    pub fn passes(&self, iou_value: f64, t: f64) -> bool {
        match self {
            Self::Strict => iou_value > t,
            Self::NonStrict => iou_value >= t,
        }
    }
}

/// Whether a prediction counts as correct against one ground truth at
/// threshold `t`.
pub fn is_correct(p: &BoundingBox, g: &BoundingBox, t: f64, rule: ThresholdRule) -> bool {
    rule.passes(iou(p, g), t)
}

/// Verdict for one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionFlag {
    pub score: f64,
    pub is_true_positive: bool,
    /// Index into the ground-truth list this detection consumed, if any.
    pub matched_gt: Option<usize>,
}

/// Match verdicts for one image at one threshold, in score-descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchFlags {
    pub flags: Vec<DetectionFlag>,
    pub gt_total: usize,
}

/// Greedy matching: detections in canonical score order each consume the
/// unmatched ground truth of highest IoU, provided the threshold rule holds;
/// otherwise they are false positives. Each ground truth matches at most once.
pub fn match_detections(
    dets: &[Detection],
    gts: &[BoundingBox],
    t: f64,
    rule: ThresholdRule,
) -> MatchFlags {
    let mut sorted = dets.to_vec();
    sort_canonical(&mut sorted);

    let mut gt_used = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(sorted.len());
    for det in &sorted {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_used[gi] {
                continue;
            }
            let v = iou(&det.bbox, gt);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if rule.passes(v, t) => {
                gt_used[gi] = true;
                flags.push(DetectionFlag {
                    score: det.score,
                    is_true_positive: true,
                    matched_gt: Some(gi),
                });
            }
            _ => flags.push(DetectionFlag {
                score: det.score,
                is_true_positive: false,
                matched_gt: None,
            }),
        }
    }
    MatchFlags {
        flags,
        gt_total: gts.len(),
    }
}

/// One point of a precision-recall curve; `score_cut` is the confidence of
/// the detection that produced the point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_cut: f64,
}

/// Cumulative TP/FP walk over globally score-sorted flags. `gt_total == 0`
/// yields an empty curve (the caller defines AP as 0 and warns).
pub fn pr_curve(flags: &[DetectionFlag], gt_total: usize) -> Vec<PrPoint> {
    if gt_total == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for flag in flags {
        if flag.is_true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / gt_total as f64,
            precision: tp as f64 / (tp + fp) as f64,
            score_cut: flag.score,
        });
    }
    points
}

/// All-point interpolated average precision: the precision envelope is made
/// non-increasing from right to left, then summed over recall increments as
/// exact rectangles. An empty curve has AP 0.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let n = curve.len();
    let mut envelope = vec![0.0f64; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        let dr = curve[i].recall - prev_recall;
        if dr > 0.0 {
            ap += dr * envelope[i];
            prev_recall = curve[i].recall;
        }
    }
    ap
}

/// Arithmetic mean of per-class AP values. An empty list is rejected.
pub fn mean_average_precision(aps: &[f64]) -> Result<f64, MetricsError> {
    if aps.is_empty() {
        return Err(MetricsError::EmptyMean);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// The ten COCO-style IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// IoU thresholds, strictly increasing, each in (0, 1).
    pub thresholds: Vec<f64>,
    pub rule: ThresholdRule,
    /// When false (default), objects flagged `difficult` are excluded from
    /// matching and from recall denominators.
    pub include_difficult: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds: coco_thresholds(),
            rule: ThresholdRule::Strict,
            include_difficult: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.thresholds.is_empty() {
            return Err(MetricsError::InvalidThresholds("empty list".into()));
        }
        for w in self.thresholds.windows(2) {
            if w[0] >= w[1] {
                return Err(MetricsError::InvalidThresholds(format!(
                    "not strictly increasing at {} .. {}",
                    w[0], w[1]
                )));
            }
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(MetricsError::InvalidThresholds(
                "thresholds must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Results at one IoU threshold: AP per class and the class mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEval {
    pub threshold: f64,
    pub per_class_ap: BTreeMap<u32, f64>,
    pub mean_ap: f64,
}

/// One stored PR curve, identified by threshold and class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurveSet {
    pub threshold: f64,
    pub class_id: u32,
    pub points: Vec<PrPoint>,
}

/// Full evaluation output.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_threshold: Vec<ThresholdEval>,
    /// Class-mean AP at the first configured threshold.
    pub map_single: f64,
    /// Mean of the per-threshold class means, in threshold order.
    pub map_coco: f64,
    pub pr_curves: Vec<PrCurveSet>,
    pub config_echo: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Class-mean AP at a configured threshold, if present.
    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        self.per_threshold
            .iter()
            .find(|te| (te.threshold - threshold).abs() < 1e-9)
            .map(|te| te.mean_ap)
    }
}

/// Aggregated flag carrying the global tie-break key.
struct GlobalFlag {
    score: f64,
    image_id_idx: usize,
    bbox: BoundingBox,
    is_tp: bool,
}

/// Evaluates predictions against ground truth over the threshold sweep.
///
/// Predictions for image ids outside the ground-truth set are rejected;
/// ground-truth images with no predictions still contribute their boxes to
/// recall denominators.
pub fn evaluate(
    preds: &PredictionSet,
    gts: &GroundTruthSet,
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    opts.validate()?;
    for image_id in preds.by_image().keys() {
        if !gts.has_image(image_id) {
            return Err(MetricsError::UnknownImageId(image_id.clone()));
        }
    }

    let image_ids: Vec<&String> = gts.records().keys().collect();
    let class_ids: Vec<u32> = gts.classes().ids().collect();
    let mut warnings = Vec::new();

    // Per-class, per-image inputs are threshold-independent: detections in
    // canonical order and ground-truth boxes with the difficult filter
    // applied.
    struct ClassImage {
        image_id_idx: usize,
        dets: Vec<Detection>,
        gt_boxes: Vec<BoundingBox>,
    }
    let mut per_class_inputs: Vec<Vec<ClassImage>> = Vec::with_capacity(class_ids.len());
    for &class_id in &class_ids {
        let mut images = Vec::with_capacity(image_ids.len());
        let mut gt_total = 0usize;
        for (idx, image_id) in image_ids.iter().enumerate() {
            let mut dets: Vec<Detection> = preds
                .detections_for(image_id)
                .iter()
                .filter(|d| d.class_id == class_id)
                .copied()
                .collect();
            sort_canonical(&mut dets);
            let gt_boxes: Vec<BoundingBox> = gts
                .objects_for(image_id)
                .unwrap_or(&[])
                .iter()
                .filter(|o| o.class_id == class_id && (opts.include_difficult || !o.difficult))
                .map(|o| o.bbox)
                .collect();
            gt_total += gt_boxes.len();
            images.push(ClassImage {
                image_id_idx: idx,
                dets,
                gt_boxes,
            });
        }
        if gt_total == 0 {
            let name = gts
                .classes()
                .name_of(class_id)
                .map(str::to_string)
                .unwrap_or_else(|| format!("class_{}", class_id));
            warnings.push(format!(
                "class {} has no ground-truth boxes; its AP is defined as 0",
                name
            ));
        }
        per_class_inputs.push(images);
    }

    let mut per_threshold = Vec::with_capacity(opts.thresholds.len());
    let mut pr_curves = Vec::new();
    for &t in &opts.thresholds {
        let mut per_class_ap = BTreeMap::new();
        let mut class_aps = Vec::with_capacity(class_ids.len());
        for (ci, &class_id) in class_ids.iter().enumerate() {
            let mut global: Vec<GlobalFlag> = Vec::new();
            let mut gt_total = 0usize;
            for ci_img in &per_class_inputs[ci] {
                let matched = match_detections(&ci_img.dets, &ci_img.gt_boxes, t, opts.rule);
                gt_total += matched.gt_total;
                // ci_img.dets is canonically sorted at construction, which is
                // the order match_detections reports flags in.
                for (flag, det) in matched.flags.iter().zip(&ci_img.dets) {
                    global.push(GlobalFlag {
                        score: flag.score,
                        image_id_idx: ci_img.image_id_idx,
                        bbox: det.bbox,
                        is_tp: flag.is_true_positive,
                    });
                }
            }
            global.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then_with(|| image_ids[a.image_id_idx].cmp(image_ids[b.image_id_idx]))
                    .then_with(|| a.bbox.lex_cmp(&b.bbox))
            });
            let flags: Vec<DetectionFlag> = global
                .iter()
                .map(|g| DetectionFlag {
                    score: g.score,
                    is_true_positive: g.is_tp,
                    matched_gt: None,
                })
                .collect();
            let curve = pr_curve(&flags, gt_total);
            let ap = average_precision(&curve);
            per_class_ap.insert(class_id, ap);
            class_aps.push(ap);
            pr_curves.push(PrCurveSet {
                threshold: t,
                class_id,
                points: curve,
            });
        }
        let mean_ap = mean_average_precision(&class_aps)?;
        per_threshold.push(ThresholdEval {
            threshold: t,
            per_class_ap,
            mean_ap,
        });
    }

    let map_coco =
        per_threshold.iter().map(|te| te.mean_ap).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalReport {
        map_single: per_threshold[0].mean_ap,
        map_coco,
        per_threshold,
        pr_curves,
        config_echo: BTreeMap::new(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{ClassTable, GtObject, ImageRecord};

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BoundingBox, score: f64) -> Detection {
        Detection::new(b, score, 0).unwrap()
    }

    #[test]
    fn iou_worked_cases() {
        let a = bbox(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);

        let disjoint = bbox(10.0, 10.0, 12.0, 12.0);
        assert_eq!(iou(&a, &disjoint), 0.0);

        // intersection 2, union 6
        let b = bbox(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() <= 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn iou_touching_boxes_are_disjoint() {
        let a = bbox(0.0, 0.0, 1.0, 1.0);
        let b = bbox(1.0, 0.0, 2.0, 1.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn threshold_rule_strict_vs_non_strict() {
        // (0,0,1,2) vs (0,0,2,2): intersection 2, union 4, IoU exactly 0.5.
        let p = bbox(0.0, 0.0, 1.0, 2.0);
        let g = bbox(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&p, &g), 0.5);
        assert!(!is_correct(&p, &g, 0.5, ThresholdRule::Strict));
        assert!(is_correct(&p, &g, 0.5, ThresholdRule::NonStrict));
        assert!(is_correct(&p, &g, 0.4, ThresholdRule::Strict));
        assert!(!is_correct(&p, &g, 0.9, ThresholdRule::NonStrict));
        assert!(!is_correct(
            &bbox(5.0, 5.0, 6.0, 6.0),
            &g,
            0.0,
            ThresholdRule::Strict
        ));
    }

    #[test]
    fn match_single_pair() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        let m = match_detections(&[det(g, 0.9)], &[g], 0.5, ThresholdRule::Strict);
        assert_eq!(m.gt_total, 1);
        assert!(m.flags[0].is_true_positive);
        assert_eq!(m.flags[0].matched_gt, Some(0));
    }

    #[test]
    fn match_two_dets_one_gt_prefers_higher_score() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        let d_hi = det(bbox(0.0, 0.0, 10.0, 10.0), 0.9);
        let d_lo = det(bbox(1.0, 1.0, 11.0, 11.0), 0.8);
        // Input order must not matter.
        for input in [vec![d_hi, d_lo], vec![d_lo, d_hi]] {
            let m = match_detections(&input, &[g], 0.5, ThresholdRule::Strict);
            assert!(m.flags[0].is_true_positive && m.flags[0].score == 0.9);
            assert!(!m.flags[1].is_true_positive);
        }
    }

    #[test]
    fn match_one_det_two_gts_prefers_higher_iou() {
        let g_far = bbox(0.0, 0.0, 10.0, 10.0);
        let g_near = bbox(0.0, 0.0, 9.0, 10.0);
        let d = det(bbox(0.0, 0.0, 9.0, 10.0), 0.9);
        let m = match_detections(&[d], &[g_far, g_near], 0.5, ThresholdRule::Strict);
        assert_eq!(m.flags[0].matched_gt, Some(1));
    }

    #[test]
    fn match_conserves_counts() {
        let gts = [bbox(0.0, 0.0, 10.0, 10.0), bbox(20.0, 20.0, 30.0, 30.0)];
        let dets = [
            det(bbox(0.0, 0.0, 10.0, 10.0), 0.9),
            det(bbox(0.0, 0.0, 10.0, 10.0), 0.8),
            det(bbox(50.0, 50.0, 60.0, 60.0), 0.7),
        ];
        let m = match_detections(&dets, &gts, 0.5, ThresholdRule::Strict);
        let tp = m.flags.iter().filter(|f| f.is_true_positive).count();
        let fp = m.flags.iter().filter(|f| !f.is_true_positive).count();
        assert_eq!(tp + fp, dets.len());
        assert!(tp <= m.gt_total);
        // every gt consumed at most once
        let mut seen = std::collections::BTreeSet::new();
        for f in &m.flags {
            if let Some(gi) = f.matched_gt {
                assert!(seen.insert(gi));
            }
        }
    }

    fn flag(score: f64, tp: bool) -> DetectionFlag {
        DetectionFlag {
            score,
            is_true_positive: tp,
            matched_gt: None,
        }
    }

    #[test]
    fn pr_curve_worked_cases() {
        let single = pr_curve(&[flag(0.9, true)], 1);
        assert_eq!(single.len(), 1);
        assert_eq!((single[0].recall, single[0].precision), (1.0, 1.0));

        let two = pr_curve(&[flag(0.9, true), flag(0.8, false)], 2);
        assert_eq!((two[0].recall, two[0].precision), (0.5, 1.0));
        assert_eq!((two[1].recall, two[1].precision), (0.5, 0.5));

        let fp_only = pr_curve(&[flag(0.9, false)], 1);
        assert_eq!((fp_only[0].recall, fp_only[0].precision), (0.0, 0.0));

        assert!(pr_curve(&[flag(0.9, true)], 0).is_empty());
    }

    #[test]
    fn ap_worked_cases() {
        assert_eq!(
            average_precision(&[PrPoint {
                recall: 1.0,
                precision: 1.0,
                score_cut: 1.0
            }]),
            1.0
        );

        let curve = pr_curve(&[flag(0.9, true), flag(0.8, false)], 2);
        assert_eq!(average_precision(&curve), 0.5);

        assert_eq!(average_precision(&[]), 0.0);
    }

    #[test]
    fn ap_envelope_is_applied() {
        // TP, FP, TP with gt_total 2:
        // points: (0.5, 1.0), (0.5, 0.5), (1.0, 2/3)
        // envelope at first increment 1.0, at second 2/3
        // AP = 0.5 * 1.0 + 0.5 * 2/3 = 5/6
        let curve = pr_curve(&[flag(0.9, true), flag(0.8, false), flag(0.7, true)], 2);
        assert!((average_precision(&curve) - 5.0 / 6.0).abs() <= 1e-15);
    }

    #[test]
    fn map_is_plain_mean() {
        assert_eq!(mean_average_precision(&[0.610]).unwrap(), 0.610);
        assert_eq!(mean_average_precision(&[1.0, 0.0]).unwrap(), 0.5);
        assert!((mean_average_precision(&[0.2, 0.4, 0.6]).unwrap() - 0.4).abs() <= 1e-15);
        assert!(mean_average_precision(&[]).is_err());
    }

    #[test]
    fn coco_thresholds_are_the_ten_standard_values() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.50);
        assert_eq!(t[9], 0.95);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() <= 1e-12);
        }
    }

    fn gt_set(images: &[(&str, Vec<(BoundingBox, bool)>)]) -> GroundTruthSet {
        let mut set = GroundTruthSet::new(ClassTable::default());
        for (id, boxes) in images {
            let objects = boxes
                .iter()
                .map(|&(bbox, difficult)| GtObject {
                    bbox,
                    class_id: 0,
                    difficult,
                })
                .collect();
            set.insert(
                ImageRecord {
                    image_id: id.to_string(),
                    file_path: format!("{id}.jpg").into(),
                    width: 100,
                    height: 100,
                },
                objects,
            )
            .unwrap();
        }
        set
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let b1 = bbox(0.0, 0.0, 10.0, 10.0);
        let b2 = bbox(20.0, 20.0, 40.0, 40.0);
        let gts = gt_set(&[
            ("a", vec![(b1, false), (b2, false)]),
            ("b", vec![(b1, false)]),
        ]);
        let mut preds = PredictionSet::new();
        preds.insert("a", det(b1, 1.0));
        preds.insert("a", det(b2, 1.0));
        preds.insert("b", det(b1, 1.0));

        let report = evaluate(&preds, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(report.map_coco, 1.0);
        assert_eq!(report.map_single, 1.0);
        for te in &report.per_threshold {
            assert_eq!(te.mean_ap, 1.0);
        }
    }

    #[test]
    fn evaluate_empty_predictions() {
        let gts = gt_set(&[("a", vec![(bbox(0.0, 0.0, 10.0, 10.0), false)])]);
        let report = evaluate(&PredictionSet::new(), &gts, &EvalOptions::default()).unwrap();
        assert_eq!(report.map_coco, 0.0);
    }

    #[test]
    fn evaluate_rejects_unknown_image() {
        let gts = gt_set(&[("a", vec![(bbox(0.0, 0.0, 10.0, 10.0), false)])]);
        let mut preds = PredictionSet::new();
        preds.insert("ghost", det(bbox(0.0, 0.0, 10.0, 10.0), 0.9));
        assert!(matches!(
            evaluate(&preds, &gts, &EvalOptions::default()),
            Err(MetricsError::UnknownImageId(id)) if id == "ghost"
        ));
    }

    #[test]
    fn evaluate_missed_images_count_in_recall() {
        // Image "b" has a gt but no predictions: recall caps at 0.5.
        let b1 = bbox(0.0, 0.0, 10.0, 10.0);
        let gts = gt_set(&[("a", vec![(b1, false)]), ("b", vec![(b1, false)])]);
        let mut preds = PredictionSet::new();
        preds.insert("a", det(b1, 1.0));
        let report = evaluate(&preds, &gts, &EvalOptions::default()).unwrap();
        // all-point AP with a single TP at recall 0.5: area = 0.5 * 1.0
        assert_eq!(report.map_coco, 0.5);
    }

    #[test]
    fn evaluate_difficult_excluded_by_default() {
        let b1 = bbox(0.0, 0.0, 10.0, 10.0);
        let b2 = bbox(20.0, 20.0, 30.0, 30.0);
        let gts = gt_set(&[("a", vec![(b1, false), (b2, true)])]);
        let mut preds = PredictionSet::new();
        preds.insert("a", det(b1, 1.0));

        let report = evaluate(&preds, &gts, &EvalOptions::default()).unwrap();
        assert_eq!(report.map_coco, 1.0);

        let opts = EvalOptions {
            include_difficult: true,
            ..EvalOptions::default()
        };
        let report = evaluate(&preds, &gts, &opts).unwrap();
        assert_eq!(report.map_coco, 0.5);
    }

    #[test]
    fn evaluate_map_coco_is_mean_of_thresholds() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        // IoU with gt: 81/119 ≈ 0.68: TP below 0.68, FP above.
        let shifted = bbox(1.0, 1.0, 11.0, 11.0);
        let gts = gt_set(&[("a", vec![(g, false)])]);
        let mut preds = PredictionSet::new();
        preds.insert("a", det(shifted, 0.9));

        let report = evaluate(&preds, &gts, &EvalOptions::default()).unwrap();
        let mean: f64 = report
            .per_threshold
            .iter()
            .map(|te| te.mean_ap)
            .sum::<f64>()
            / report.per_threshold.len() as f64;
        assert_eq!(report.map_coco, mean);
        // APs are monotone non-increasing in threshold.
        for w in report.per_threshold.windows(2) {
            assert!(w[1].mean_ap <= w[0].mean_ap);
        }
        // 0.68 passes thresholds 0.50..0.65 (4 of 10)
        assert!((report.map_coco - 0.4).abs() <= 1e-12);
    }

    #[test]
    fn evaluate_averages_over_classes() {
        let b1 = bbox(0.0, 0.0, 10.0, 10.0);
        let b2 = bbox(20.0, 20.0, 40.0, 40.0);
        let classes = ClassTable::from_pairs([("tiger", 0), ("leopard", 1)]);
        let mut set = GroundTruthSet::new(classes);
        set.insert(
            ImageRecord {
                image_id: "a".into(),
                file_path: "a.jpg".into(),
                width: 100,
                height: 100,
            },
            vec![
                GtObject {
                    bbox: b1,
                    class_id: 0,
                    difficult: false,
                },
                GtObject {
                    bbox: b2,
                    class_id: 1,
                    difficult: false,
                },
            ],
        )
        .unwrap();

        // Perfect for class 0, nothing for class 1.
        let mut preds = PredictionSet::new();
        preds.insert("a", Detection::new(b1, 0.9, 0).unwrap());

        let report = evaluate(&preds, &set, &EvalOptions::default()).unwrap();
        let te = &report.per_threshold[0];
        assert_eq!(te.per_class_ap[&0], 1.0);
        assert_eq!(te.per_class_ap[&1], 0.0);
        assert_eq!(te.mean_ap, 0.5);
        assert_eq!(report.map_coco, 0.5);
        // one PR curve per (threshold, class)
        assert_eq!(report.pr_curves.len(), 20);
    }

    #[test]
    fn evaluate_validates_thresholds() {
        let gts = gt_set(&[("a", vec![(bbox(0.0, 0.0, 10.0, 10.0), false)])]);
        let bad = EvalOptions {
            thresholds: vec![0.9, 0.5],
            ..EvalOptions::default()
        };
        assert!(evaluate(&PredictionSet::new(), &gts, &bad).is_err());
        let bad = EvalOptions {
            thresholds: vec![],
            ..EvalOptions::default()
        };
        assert!(evaluate(&PredictionSet::new(), &gts, &bad).is_err());
    }
}
