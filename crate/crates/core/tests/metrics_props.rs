use countbox::annotation::{Annotation, Object};
use countbox::metrics::{compute_report, Detection};
use countbox::BBox;
use proptest::prelude::*;

fn boxes() -> impl Strategy<Value = Vec<(u8, u32, u32)>> {
    prop::collection::vec((0u8..3, 0u32..150, 0u32..150), 1..8)
}

fn label(c: u8) -> String {
    format!("c{c}")
}

fn ground_truth(objs: &[(u8, u32, u32)]) -> Vec<Annotation> {
    vec![Annotation::new("a.png", 200, 200)
        .with_objects(objs.iter().map(|&(c, x, y)| Object::new(label(c), BBox::new(x, y, 40, 40))).collect())]
}

fn detections(objs: &[(u8, u32, u32)], scores: &[f64]) -> Vec<Detection> {
    objs.iter()
        .zip(scores)
        .map(|(&(c, x, y), &s)| Detection::new("a.png", label(c), BBox::new(x, y, 40, 40), s))
        .collect()
}

proptest! {
    #[test]
    fn summary_is_ordered_and_bounded(
        gt in boxes(), pred in boxes(),
        scores in prop::collection::vec(0.0f64..=1.0, 8),
    ) {
        let r = compute_report(&detections(&pred, &scores), &ground_truth(&gt), 0.5, None).unwrap();
        prop_assert!(0.0 <= r.ap_min && r.ap_min <= r.map_score && r.map_score <= r.ap_max && r.ap_max <= 1.0);
        prop_assert!((0.0..=1.0).contains(&r.recall_score));
    }

    #[test]
    fn ground_truth_as_predictions_is_perfect(gt in boxes()) {
        let preds = detections(&gt, &[1.0; 8]);
        let ann = ground_truth(&gt);
        let r = compute_report(&preds, &ann, 0.5, None).unwrap();
        prop_assert_eq!(r.map_score, 1.0);
        prop_assert_eq!(r.recall_score, 1.0);
    }

    #[test]
    fn trailing_false_positive_never_raises_ap(
        gt in boxes(), pred in boxes(),
        scores in prop::collection::vec(0.1f64..=1.0, 8),
    ) {
        let ann = ground_truth(&gt);
        let mut preds = detections(&pred, &scores);
        let before = compute_report(&preds, &ann, 0.5, None).unwrap();
        preds.push(Detection::new("a.png", label(gt[0].0), BBox::new(199, 199, 1, 1), 0.0));
        let after = compute_report(&preds, &ann, 0.5, None).unwrap();
        prop_assert!(after.map_score <= before.map_score + 1e-12);
        prop_assert_eq!(after.recall_score, before.recall_score);
    }
}
