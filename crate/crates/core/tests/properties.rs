//! Property tests for the library's declared invariants.

use proptest::prelude::*;

use tigerlight::annotations::{ClassTable, GroundTruthSet, GtObject, ImageRecord, PredictionSet};
use tigerlight::detect::{nms, sort_canonical, BoundingBox, Detection};
use tigerlight::enhance::{gamma_correct, histogram_equalize};
use tigerlight::image::{
    compose_enhanced, illumination_map, self_regularized_map, MapSelector, RasterImage, ScalarMap,
};
use tigerlight::metrics::{
    average_precision, evaluate, iou, match_detections, pr_curve, EvalOptions, ThresholdRule,
};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0.0..100.0f64, 0.0..100.0f64, 0.5..40.0f64, 0.5..40.0f64)
        .prop_map(|(x0, y0, w, h)| BoundingBox::new(x0, y0, x0 + w, y0 + h).unwrap())
}

fn arb_detection() -> impl Strategy<Value = Detection> {
    (arb_box(), 0.0..=1.0f64, 0u32..2).prop_map(|(bbox, score, class_id)| Detection {
        bbox,
        score,
        class_id,
    })
}

/// The same greedy suppression rule, written naively: repeatedly pop the
/// best remaining detection and drop overlapping same-class survivors.
fn nms_naive(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut remaining = dets.to_vec();
    sort_canonical(&mut remaining);
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let best = remaining.remove(0);
        remaining.retain(|d| d.class_id != best.class_id || iou(&best.bbox, &d.bbox) <= iou_thresh);
        kept.push(best);
    }
    kept
}

proptest! {
    #[test]
    fn nms_output_is_subset_and_idempotent(
        dets in prop::collection::vec(arb_detection(), 0..12),
        thresh in 0.1..0.9f64,
    ) {
        let kept = nms(&dets, thresh);
        prop_assert!(kept.len() <= dets.len());
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        prop_assert_eq!(nms(&kept, thresh), kept.clone());

        // Every discarded detection has a kept same-class witness that beats
        // it on score and overlaps it beyond the threshold.
        for d in &dets {
            if kept.contains(d) {
                continue;
            }
            let witness = kept.iter().any(|k| {
                k.class_id == d.class_id
                    && k.score >= d.score
                    && iou(&k.bbox, &d.bbox) > thresh
            });
            prop_assert!(witness, "discarded detection without a kept witness");
        }
    }

    #[test]
    fn nms_matches_naive_reference(
        dets in prop::collection::vec(arb_detection(), 0..=8),
        thresh in 0.1..0.9f64,
    ) {
        prop_assert_eq!(nms(&dets, thresh), nms_naive(&dets, thresh));
    }

    #[test]
    fn nms_ignores_input_order(
        dets in prop::collection::vec(arb_detection(), 0..10),
        thresh in 0.1..0.9f64,
    ) {
        let mut reversed = dets.clone();
        reversed.reverse();
        prop_assert_eq!(nms(&dets, thresh), nms(&reversed, thresh));
    }

    #[test]
    fn matching_conserves_counts(
        dets in prop::collection::vec(arb_detection(), 0..8),
        gts in prop::collection::vec(arb_box(), 0..5),
        t in 0.1..0.9f64,
    ) {
        let m = match_detections(&dets, &gts, t, ThresholdRule::Strict);
        let tp = m.flags.iter().filter(|f| f.is_true_positive).count();
        prop_assert_eq!(m.flags.len(), dets.len());
        prop_assert!(tp <= m.gt_total);
        let mut seen = std::collections::BTreeSet::new();
        for f in &m.flags {
            prop_assert_eq!(f.is_true_positive, f.matched_gt.is_some());
            if let Some(gi) = f.matched_gt {
                prop_assert!(seen.insert(gi), "gt matched twice");
            }
        }
    }

    #[test]
    fn ap_is_monotone_in_threshold(
        dets in prop::collection::vec((arb_box(), 0.0..=1.0f64), 1..8),
        gts in prop::collection::vec(arb_box(), 1..5),
    ) {
        let dets: Vec<Detection> = dets
            .into_iter()
            .map(|(bbox, score)| Detection { bbox, score, class_id: 0 })
            .collect();
        let ap_at = |t: f64| {
            let m = match_detections(&dets, &gts, t, ThresholdRule::Strict);
            average_precision(&pr_curve(&m.flags, m.gt_total))
        };
        let thresholds: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let aps: Vec<f64> = thresholds.iter().map(|&t| ap_at(t)).collect();
        for w in aps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "AP increased with threshold: {:?}", aps);
        }
    }

    #[test]
    fn trailing_fp_never_raises_ap_and_leading_tp_never_lowers_it(
        dets in prop::collection::vec((arb_box(), 0.05..=0.95f64), 0..6),
        gts in prop::collection::vec(arb_box(), 1..5),
        t in 0.2..0.8f64,
    ) {
        let dets: Vec<Detection> = dets
            .into_iter()
            .map(|(bbox, score)| Detection { bbox, score, class_id: 0 })
            .collect();
        let ap_of = |dets: &[Detection], gts: &[BoundingBox]| {
            let m = match_detections(dets, gts, t, ThresholdRule::Strict);
            average_precision(&pr_curve(&m.flags, m.gt_total))
        };
        let base = ap_of(&dets, &gts);

        // A false positive strictly below every existing score.
        let mut with_fp = dets.clone();
        with_fp.push(Detection {
            bbox: BoundingBox::new(900.0, 900.0, 901.0, 901.0).unwrap(),
            score: 0.0,
            class_id: 0,
        });
        prop_assert!(ap_of(&with_fp, &gts) <= base + 1e-12);

        // A new gt plus a perfect top-score detection on it.
        let new_gt = BoundingBox::new(500.0, 500.0, 520.0, 520.0).unwrap();
        let mut gts_plus: Vec<BoundingBox> = gts.clone();
        gts_plus.push(new_gt);
        let base_more_gt = ap_of(&dets, &gts_plus);
        let mut with_tp = dets.clone();
        with_tp.push(Detection { bbox: new_gt, score: 1.0, class_id: 0 });
        prop_assert!(ap_of(&with_tp, &gts_plus) >= base_more_gt - 1e-12);
    }

    #[test]
    fn self_regularized_is_involution(values in prop::collection::vec(0.0..=1.0f64, 1..64)) {
        let w = values.len();
        let map = ScalarMap::new(w, 1, values.clone()).unwrap();
        let back = self_regularized_map(&self_regularized_map(&map));
        for (a, b) in values.iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn compose_is_monotone_in_residual(
        base in prop::collection::vec(0.0..=1.0f64, 3..48),
        bump_index in any::<prop::sample::Index>(),
        bump in 0.0..=0.5f64,
    ) {
        let n = base.len() / 3 * 3;
        if n == 0 {
            return Ok(());
        }
        let w = n / 3;
        let a = RasterImage::new(w, 1, vec![0.25; n]).unwrap();
        let illum = ScalarMap::new(w, 1, vec![0.6; w]).unwrap();
        let residual = RasterImage::new(w, 1, base[..n].to_vec()).unwrap();

        let idx = bump_index.index(n);
        let mut bumped = base[..n].to_vec();
        bumped[idx] = (bumped[idx] + bump).min(1.0);
        let residual_bumped = RasterImage::new(w, 1, bumped).unwrap();

        let b0 = compose_enhanced(&a, &residual, &illum, MapSelector::Illumination).unwrap();
        let b1 = compose_enhanced(&a, &residual_bumped, &illum, MapSelector::Illumination).unwrap();
        for (v0, v1) in b0.data().iter().zip(b1.data()) {
            prop_assert!(v1 >= v0);
        }
    }

    #[test]
    fn gamma_is_order_reversing_in_gamma(v in 0.01..0.99f64, g1 in 0.2..5.0f64, extra in 0.1..3.0f64) {
        let img = RasterImage::new(1, 1, vec![v; 3]).unwrap();
        let darker = gamma_correct(&img, g1 + extra);
        let lighter = gamma_correct(&img, g1);
        prop_assert!(darker.data()[0] <= lighter.data()[0]);
    }

    #[test]
    fn hist_eq_keeps_dimensions_and_illumination_order(
        values in prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 4..64),
    ) {
        let w = values.len();
        let data: Vec<f64> = values.iter().flat_map(|&(r, g, b)| [r, g, b]).collect();
        let img = RasterImage::new(w, 1, data).unwrap();
        let out = histogram_equalize(&img);
        prop_assert_eq!((out.width(), out.height()), (w, 1));

        let before = illumination_map(&img);
        let after = illumination_map(&out);
        let mut order: Vec<usize> = (0..w).collect();
        order.sort_by(|&i, &j| before.data()[i].total_cmp(&before.data()[j]));
        for pair in order.windows(2) {
            prop_assert!(after.data()[pair[0]] <= after.data()[pair[1]] + 1e-12);
        }
    }
}

/// Evaluation must not care how detections were ordered on input.
#[test]
fn evaluate_is_invariant_to_insertion_order() {
    use proptest::strategy::ValueTree;
    let mut runner = proptest::test_runner::TestRunner::default();
    let strategy = prop::collection::vec((arb_box(), 0.0..=1.0f64), 1..10);
    for _ in 0..64 {
        let dets: Vec<(BoundingBox, f64)> = strategy.new_tree(&mut runner).unwrap().current();

        let mut gts = GroundTruthSet::new(ClassTable::default());
        gts.insert(
            ImageRecord {
                image_id: "a".into(),
                file_path: "a.jpg".into(),
                width: 200,
                height: 200,
            },
            vec![GtObject {
                bbox: BoundingBox::new(10.0, 10.0, 50.0, 50.0).unwrap(),
                class_id: 0,
                difficult: false,
            }],
        )
        .unwrap();

        let build = |order: &[(BoundingBox, f64)]| {
            let mut set = PredictionSet::new();
            for (bbox, score) in order {
                set.insert("a", Detection::new(*bbox, *score, 0).unwrap());
            }
            evaluate(&set, &gts, &EvalOptions::default()).unwrap()
        };
        let forward = build(&dets);
        let mut shuffled = dets.clone();
        shuffled.reverse();
        let backward = build(&shuffled);
        assert_eq!(forward.map_coco, backward.map_coco);
        assert_eq!(forward.per_threshold, backward.per_threshold);
    }
}
