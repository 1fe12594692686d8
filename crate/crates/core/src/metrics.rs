//! Detection metrics: per-class average precision, mAP, AP extrema and
//! recall.
//!
//! Matching is greedy per image and class in descending score order (ties
//! keep input order): a detection is a true positive when some unmatched
//! ground-truth box of its class has IoU >= the threshold, and it claims the
//! highest-IoU such box. AP integrates the all-points interpolated
//! precision-recall curve.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_filename: String,
    pub label: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    image_filename: String,
    label: String,
    xmin: u32,
    ymin: u32,
    width: u32,
    height: u32,
    score: f64,
}

impl Detection {
    pub fn new(image_filename: impl Into<String>, label: impl Into<String>, bbox: BBox, score: f64) -> Self {
        Self {
            image_filename: image_filename.into(),
            label: label.into(),
            bbox,
            score,
        }
    }
}

/// One JSON object per line: image_filename, label, xmin, ymin, width,
/// height (0-based, exclusive) and score in `[0, 1]`.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(path, format!("line {}: {m}", n + 1));
        let d: DetectionLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&d.score) {
            return Err(err(format!("score {} outside [0, 1]", d.score)));
        }
        let bbox = BBox::try_new(d.xmin, d.ymin, d.width, d.height).map_err(|e| err(e.to_string()))?;
        out.push(Detection::new(d.image_filename, d.label, bbox, d.score));
    }
    Ok(out)
}

pub fn detections_to_jsonl(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let line = DetectionLine {
            image_filename: d.image_filename.clone(),
            label: d.label.clone(),
            xmin: d.bbox.xmin,
            ymin: d.bbox.ymin,
            width: d.bbox.width,
            height: d.bbox.height,
            score: d.score,
        };
        s.push_str(&serde_json::to_string(&line).expect("detection serialises"));
        s.push('\n');
    }
    s
}

/// Ground-truth boxes as detections with the given score.
pub fn annotations_as_detections(gts: &[Annotation], score: f64) -> Vec<Detection> {
    gts.iter()
        .flat_map(|a| {
            a.objects
                .iter()
                .map(move |o| Detection::new(a.image_filename.clone(), o.label.clone(), o.bbox, score))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// True-positive flag per detection, in input order.
    pub true_positive: Vec<bool>,
    /// Matched flag per ground-truth object, `[annotation][object]`.
    pub gt_matched: Vec<Vec<bool>>,
    /// Detection indices in evaluation order (score desc, input order on ties).
    pub order: Vec<usize>,
}

pub fn evaluation_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    order
}

pub fn match_detections(preds: &[Detection], gts: &[Annotation], iou_threshold: f64) -> MatchResult {
    let mut by_image: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    for (ai, a) in gts.iter().enumerate() {
        let slot = by_image.entry(a.image_filename.as_str()).or_default();
        slot.extend((0..a.objects.len()).map(|oi| (ai, oi)));
    }
    let mut gt_matched: Vec<Vec<bool>> = gts.iter().map(|a| vec![false; a.objects.len()]).collect();
    let mut true_positive = vec![false; preds.len()];
    let order = evaluation_order(preds);
    for &di in &order {
        let d = &preds[di];
        let Some(cands) = by_image.get(d.image_filename.as_str()) else {
            continue;
        };
        let mut best: Option<((usize, usize), f64)> = None;
        for &(ai, oi) in cands {
            let o = &gts[ai].objects[oi];
            if o.label != d.label || gt_matched[ai][oi] {
                continue;
            }
            let v = iou(&d.bbox, &o.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some(((ai, oi), v));
            }
        }
        if let Some(((ai, oi), _)) = best {
            gt_matched[ai][oi] = true;
            true_positive[di] = true;
        }
    }
    MatchResult {
        true_positive,
        gt_matched,
        order,
    }
}

/// All-points interpolated AP of a ranked TP/FP sequence.
pub fn average_precision(tp_flags: &[bool], total_gt: usize) -> Result<f64> {
    if total_gt == 0 {
        return Err(Error::ZeroGroundTruth(String::new()));
    }
    let mut recall = Vec::with_capacity(tp_flags.len() + 2);
    let mut precision = Vec::with_capacity(tp_flags.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let mut tp = 0usize;
    for (k, &flag) in tp_flags.iter().enumerate() {
        tp += usize::from(flag);
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    Ok((1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub ground_truth: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class_ap: BTreeMap<String, f64>,
    pub map_score: f64,
    pub ap_max: f64,
    pub ap_min: f64,
    pub recall_score: f64,
    pub iou_threshold: f64,
    pub score_suppress: Option<f64>,
    pub classes: BTreeMap<String, ClassRow>,
}

pub fn compute_report(
    preds: &[Detection],
    gts: &[Annotation],
    iou_threshold: f64,
    score_suppress: Option<f64>,
) -> Result<MetricsReport> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(Error::InvalidInput(format!("IoU threshold {iou_threshold} outside (0, 1)")));
    }
    let total_gt: usize = gts.iter().map(|a| a.objects.len()).sum();
    if total_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let kept: Vec<Detection> = preds
        .iter()
        .filter(|d| score_suppress.is_none_or(|s| d.score >= s))
        .cloned()
        .collect();
    let m = match_detections(&kept, gts, iou_threshold);

    let mut classes: BTreeMap<String, ClassRow> = BTreeMap::new();
    for o in gts.iter().flat_map(|a| &a.objects) {
        classes
            .entry(o.label.clone())
            .or_insert(ClassRow {
                ground_truth: 0,
                detections: 0,
                true_positives: 0,
                ap: 0.0,
            })
            .ground_truth += 1;
    }
    let mut flags: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for &di in &m.order {
        let d = &kept[di];
        if classes.contains_key(&d.label) {
            flags.entry(d.label.as_str()).or_default().push(m.true_positive[di]);
        }
    }
    for (label, row) in classes.iter_mut() {
        let f = flags.get(label.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        row.detections = f.len();
        row.true_positives = f.iter().filter(|&&b| b).count();
        row.ap = average_precision(f, row.ground_truth)?;
    }

    let per_class_ap: BTreeMap<String, f64> = classes.iter().map(|(k, r)| (k.clone(), r.ap)).collect();
    let aps: Vec<f64> = per_class_ap.values().copied().collect();
    let matched: usize = m.gt_matched.iter().flatten().filter(|&&b| b).count();
    Ok(MetricsReport {
        map_score: aps.iter().sum::<f64>() / aps.len() as f64,
        ap_max: aps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ap_min: aps.iter().copied().fold(f64::INFINITY, f64::min),
        recall_score: matched as f64 / total_gt as f64,
        per_class_ap,
        iou_threshold,
        score_suppress,
        classes,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Summary rows (mAP, AP_max, AP_min, recall) followed by the per-class
    /// table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>8}", "metric", "value");
        for (name, v) in [
            ("mAP", self.map_score),
            ("AP_max", self.ap_max),
            ("AP_min", self.ap_min),
            ("recall", self.recall_score),
        ] {
            let _ = writeln!(s, "{name:<8} {v:>8.4}");
        }
        let width = self.classes.keys().map(|k| k.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<width$} {:>6} {:>6} {:>6} {:>8}", "class", "gt", "det", "tp", "AP");
        for (k, r) in &self.classes {
            let _ = writeln!(
                s,
                "{k:<width$} {:>6} {:>6} {:>6} {:>8.4}",
                r.ground_truth, r.detections, r.true_positives, r.ap
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Object;

    fn gt(file: &str, objs: &[(&str, BBox)]) -> Annotation {
        Annotation::new(file, 200, 200).with_objects(objs.iter().map(|(l, b)| Object::new(*l, *b)).collect())
    }

    #[test]
    fn exact_prediction_is_tp() {
        let b = BBox::new(10, 10, 30, 30);
        let g = [gt("a", &[("x", b)])];
        let m = match_detections(&[Detection::new("a", "x", b, 0.9)], &g, 0.5);
        assert_eq!(m.true_positive, vec![true]);
        assert_eq!(m.gt_matched, vec![vec![true]]);
    }

    #[test]
    fn wrong_label_is_fp() {
        let b = BBox::new(10, 10, 30, 30);
        let g = [gt("a", &[("x", b)])];
        let m = match_detections(&[Detection::new("a", "y", b, 0.9)], &g, 0.5);
        assert_eq!(m.true_positive, vec![false]);
        assert_eq!(m.gt_matched, vec![vec![false]]);
    }

    #[test]
    fn duplicate_detection_loses() {
        let b = BBox::new(10, 10, 30, 30);
        let g = [gt("a", &[("x", b)])];
        let preds = [
            Detection::new("a", "x", BBox::new(11, 10, 30, 30), 0.8),
            Detection::new("a", "x", b, 0.9),
        ];
        let m = match_detections(&preds, &g, 0.5);
        assert_eq!(m.true_positive, vec![false, true]);
    }

    #[test]
    fn highest_iou_gt_is_claimed() {
        let g = [gt("a", &[("x", BBox::new(0, 0, 40, 40)), ("x", BBox::new(10, 0, 40, 40))])];
        let m = match_detections(&[Detection::new("a", "x", BBox::new(9, 0, 40, 40), 1.0)], &g, 0.5);
        assert_eq!(m.gt_matched, vec![vec![false, true]]);
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true, true], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[], 3).unwrap(), 0.0);
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12, "{ap}");
        assert!(matches!(average_precision(&[true], 0), Err(Error::ZeroGroundTruth(_))));
    }

    #[test]
    fn perfect_report() {
        let g = [
            gt("a", &[("x", BBox::new(0, 0, 20, 20)), ("y", BBox::new(50, 50, 20, 20))]),
            gt("b", &[("x", BBox::new(5, 5, 20, 20))]),
        ];
        let r = compute_report(&annotations_as_detections(&g, 1.0), &g, 0.5, None).unwrap();
        assert_eq!((r.map_score, r.ap_max, r.ap_min, r.recall_score), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_predictions() {
        let g = [gt("a", &[("x", BBox::new(0, 0, 20, 20))])];
        let r = compute_report(&[], &g, 0.5, None).unwrap();
        assert_eq!((r.map_score, r.recall_score), (0.0, 0.0));
        assert!(matches!(compute_report(&[], &[gt("a", &[])], 0.5, None), Err(Error::NoGroundTruth)));
    }

    #[test]
    fn two_class_hand_case() {
        let (ba, bb) = (BBox::new(0, 0, 20, 20), BBox::new(100, 100, 30, 30));
        let g = [gt("img", &[("A", ba), ("B", bb)])];
        let preds = [
            Detection::new("img", "A", ba, 0.9),
            Detection::new("img", "B", BBox::new(0, 150, 30, 30), 0.8),
            Detection::new("img", "B", bb, 0.7),
        ];
        let r = compute_report(&preds, &g, 0.5, None).unwrap();
        assert_eq!(r.per_class_ap["A"], 1.0);
        assert_eq!(r.per_class_ap["B"], 0.5);
        assert_eq!((r.map_score, r.ap_max, r.ap_min, r.recall_score), (0.75, 1.0, 0.5, 1.0));
        // suppressing below 0.75 drops B's only TP
        let s = compute_report(&preds, &g, 0.5, Some(0.75)).unwrap();
        assert_eq!(s.per_class_ap["B"], 0.0);
        assert_eq!(s.recall_score, 0.5);
        assert!(s.to_table().contains("mAP        0.5000"));
    }

    #[test]
    fn jsonl_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let dets = vec![Detection::new("a.png", "x", BBox::new(1, 2, 3, 4), 0.25)];
        std::fs::write(&p, detections_to_jsonl(&dets)).unwrap();
        assert_eq!(read_detections(&p).unwrap(), dets);
        std::fs::write(&p, r#"{"image_filename":"a","label":"x","xmin":0,"ymin":0,"width":3,"height":3,"score":1.5}"#).unwrap();
        assert!(matches!(read_detections(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, "not json").unwrap();
        assert!(matches!(read_detections(&p), Err(Error::Parse { .. })));
    }
}
