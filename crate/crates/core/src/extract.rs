//! Reduces a proposal set to exactly `N` boxes.
//!
//! Degenerate proposals (too small, too elongated, or spanning nearly the
//! whole image) are dropped first. Then passes of IoU-based merging run with
//! an adaptive threshold until `N` boxes remain. Each pass moves the
//! threshold by `(count - N) / 100`, lowering it (merging harder) while too
//! many boxes remain and raising it after a pass that overshoots below `N`.
//! An overshooting pass is rolled back before retrying.

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::proposal::{propose, ProposalConfig, ProposalSet};
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    /// Overlapping boxes are replaced by their bounding union.
    #[default]
    Union,
    /// Overlapping boxes are discarded in favour of the box already kept.
    Representative,
}

impl std::str::FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(MergeMode::Union),
            "representative" => Ok(MergeMode::Representative),
            other => Err(Error::InvalidInput(format!("unknown merge mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub initial_iou_threshold: f64,
    /// Minimum box area in pixels.
    pub area_min: u64,
    /// Maximum of `W/H` and `H/W`.
    pub aspect_max: f64,
    pub iou_threshold_max: f64,
    pub max_iterations: usize,
    pub merge_mode: MergeMode,
    /// Boxes covering more than this fraction of the image are dropped.
    pub area_max_fraction: f64,
    pub proposal: ProposalConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            initial_iou_threshold: 0.1,
            area_min: 500,
            aspect_max: 4.0,
            iou_threshold_max: 0.95,
            max_iterations: 100,
            merge_mode: MergeMode::Union,
            area_max_fraction: 0.9,
            proposal: ProposalConfig::default(),
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(0.0..1.0).contains(&self.initial_iou_threshold)
            || self.initial_iou_threshold >= self.iou_threshold_max
            || self.iou_threshold_max > 1.0
        {
            return bad(format!(
                "need 0 <= initial_iou_threshold ({}) < iou_threshold_max ({}) <= 1",
                self.initial_iou_threshold, self.iou_threshold_max
            ));
        }
        if self.area_min < 1 {
            return bad("area_min must be >= 1".into());
        }
        if !(self.aspect_max >= 1.0) {
            return bad(format!("aspect_max must be >= 1, got {}", self.aspect_max));
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1".into());
        }
        if !(self.area_max_fraction > 0.0 && self.area_max_fraction <= 1.0) {
            return bad(format!(
                "area_max_fraction must be in (0, 1], got {}",
                self.area_max_fraction
            ));
        }
        if self.proposal.segment.scale <= 0.0 {
            return bad("segment scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractResult {
    pub boxes: Vec<BBox>,
    pub iterations_used: usize,
    pub final_iou_threshold: f64,
}

/// Keeps boxes with `W*H >= area_min` and `max(W/H, H/W) <= aspect_max`.
pub fn filter_proposals(rp: &ProposalSet, area_min: u64, aspect_max: f64) -> ProposalSet {
    rp.boxes()
        .iter()
        .filter(|b| b.area() >= area_min && b.elongation() <= aspect_max)
        .copied()
        .collect()
}

/// Drops boxes whose area exceeds `fraction` of the image area.
pub fn filter_oversized(rp: &ProposalSet, image_area: u64, fraction: f64) -> ProposalSet {
    let limit = image_area as f64 * fraction;
    rp.boxes()
        .iter()
        .filter(|b| b.area() as f64 <= limit)
        .copied()
        .collect()
}

/// Largest area first; equal areas in ascending `(xmin, ymin, width, height)`.
pub fn sort_by_area_desc(boxes: &mut [BBox]) {
    boxes.sort_by(|a, b| b.area().cmp(&a.area()).then_with(|| a.cmp(b)));
}

/// Outcome of one merge pass with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub boxes: ProposalSet,
    /// For each input box (input order), the index of the output box that
    /// absorbed or kept it.
    pub assignment: Vec<usize>,
}

pub fn merge_pass(rp: &ProposalSet, iou_threshold: f64, mode: MergeMode) -> ProposalSet {
    merge_pass_traced(rp, iou_threshold, mode).boxes
}

pub fn merge_pass_traced(rp: &ProposalSet, iou_threshold: f64, mode: MergeMode) -> MergeOutcome {
    let mut order: Vec<usize> = (0..rp.len()).collect();
    let boxes = rp.boxes();
    order.sort_by(|&i, &j| {
        boxes[j]
            .area()
            .cmp(&boxes[i].area())
            .then_with(|| boxes[i].cmp(&boxes[j]))
    });

    let mut kept: Vec<BBox> = Vec::new();
    let mut assignment = vec![usize::MAX; rp.len()];
    for i in order {
        let p = boxes[i];
        match kept.iter().position(|q| iou(&p, q) > iou_threshold) {
            Some(k) => {
                if mode == MergeMode::Union {
                    kept[k] = kept[k].union(&p);
                }
                assignment[i] = k;
            }
            None => {
                assignment[i] = kept.len();
                kept.push(p);
            }
        }
    }

    // Unions can coincide; fold exact duplicates into their first occurrence.
    let mut remap = Vec::with_capacity(kept.len());
    let mut unique: Vec<BBox> = Vec::with_capacity(kept.len());
    for b in kept {
        match unique.iter().position(|u| *u == b) {
            Some(k) => remap.push(k),
            None => {
                remap.push(unique.len());
                unique.push(b);
            }
        }
    }
    for a in &mut assignment {
        *a = remap[*a];
    }
    MergeOutcome {
        boxes: ProposalSet(unique),
        assignment,
    }
}

/// `(current_count - n_objects) / 100`.
pub fn threshold_step(current_count: usize, n_objects: usize) -> f64 {
    (current_count as f64 - n_objects as f64) / 100.0
}

/// The merge loop over an existing proposal set for an image of the given
/// size.
pub fn extract_from_proposals(
    rp: &ProposalSet,
    image_width: u32,
    image_height: u32,
    n_objects: usize,
    config: &ExtractConfig,
) -> Result<ExtractResult> {
    config.validate()?;
    if n_objects < 1 {
        return Err(Error::InvalidInput("object count must be >= 1".into()));
    }
    let image_area = u64::from(image_width) * u64::from(image_height);
    let filtered = filter_proposals(rp, config.area_min, config.aspect_max);
    let mut current = filter_oversized(&filtered, image_area, config.area_max_fraction);
    if current.len() < n_objects {
        return Err(Error::InsufficientProposals {
            available: current.len(),
            required: n_objects,
        });
    }

    let mut threshold = config.initial_iou_threshold;
    let mut iterations = 0;
    while current.len() != n_objects {
        let non_convergence = |iterations, last_count| Error::NonConvergence {
            target: n_objects,
            iterations,
            last_count,
        };
        if iterations == config.max_iterations {
            return Err(non_convergence(iterations, current.len()));
        }
        iterations += 1;

        let next = merge_pass(&current, threshold, config.merge_mode);
        let updated = (threshold - threshold_step(next.len(), n_objects))
            .clamp(0.0, config.iou_threshold_max);
        let stalled = updated == threshold;
        threshold = updated;
        if next.len() < n_objects {
            // overshoot: keep the pre-pass set and retry with the raised threshold
            if stalled {
                return Err(non_convergence(iterations, next.len()));
            }
            continue;
        }
        if stalled && next == current {
            return Err(non_convergence(iterations, next.len()));
        }
        current = next;
    }

    Ok(ExtractResult {
        boxes: current.into_vec(),
        iterations_used: iterations,
        final_iou_threshold: threshold,
    })
}

/// Proposes, filters and merges until exactly `n_objects` boxes remain.
pub fn extract(img: &RasterImage, n_objects: usize, config: &ExtractConfig) -> Result<ExtractResult> {
    config.validate()?;
    let rp = propose(img, &config.proposal);
    extract_from_proposals(&rp, img.width(), img.height(), n_objects, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(boxes: &[(u32, u32, u32, u32)]) -> ProposalSet {
        boxes.iter().map(|&(x, y, w, h)| BBox::new(x, y, w, h)).collect()
    }

    #[test]
    fn filter_predicates() {
        let rp = set(&[(0, 0, 10, 10), (0, 0, 100, 10), (0, 0, 40, 30), (5, 5, 10, 100)]);
        assert_eq!(filter_proposals(&rp, 500, 4.0), set(&[(0, 0, 40, 30)]));
        // exactly at the limits is kept
        let edge = set(&[(0, 0, 20, 25), (0, 0, 80, 20)]);
        assert_eq!(filter_proposals(&edge, 500, 4.0), edge);
    }

    #[test]
    fn oversized_boxes_dropped() {
        let rp = set(&[(0, 0, 100, 100), (0, 0, 90, 100), (10, 10, 20, 20)]);
        assert_eq!(filter_oversized(&rp, 10_000, 0.9), set(&[(0, 0, 90, 100), (10, 10, 20, 20)]));
    }

    #[test]
    fn single_box_pass() {
        let rp = set(&[(3, 3, 9, 9)]);
        for t in [0.0, 0.5, 0.95] {
            assert_eq!(merge_pass(&rp, t, MergeMode::Union), rp);
            assert_eq!(merge_pass(&rp, t, MergeMode::Representative), rp);
        }
    }

    #[test]
    fn disjoint_boxes_survive() {
        let rp = set(&[(0, 0, 10, 10), (50, 50, 10, 10)]);
        assert_eq!(merge_pass(&rp, 0.1, MergeMode::Union), rp);
    }

    #[test]
    fn hand_traced_union_pass() {
        let rp = set(&[(0, 0, 10, 10), (5, 0, 10, 10), (30, 0, 4, 4)]);
        assert_eq!(
            merge_pass(&rp, 0.2, MergeMode::Union),
            set(&[(0, 0, 15, 10), (30, 0, 4, 4)])
        );
        assert_eq!(
            merge_pass(&rp, 0.2, MergeMode::Representative),
            set(&[(0, 0, 10, 10), (30, 0, 4, 4)])
        );
        // 1/3 is not above 0.34
        assert_eq!(merge_pass(&rp, 0.34, MergeMode::Union).len(), 3);
    }

    #[test]
    fn step_values() {
        assert!((threshold_step(300, 1) - 2.99).abs() < 1e-12);
        assert_eq!(threshold_step(7, 7), 0.0);
        assert!((threshold_step(5, 3) - 0.02).abs() < 1e-12);
        assert!((threshold_step(2, 3) + 0.01).abs() < 1e-12);
    }

    #[test]
    fn already_at_count_is_untouched() {
        let rp = set(&[(0, 0, 40, 40), (100, 100, 30, 30)]);
        let r = extract_from_proposals(&rp, 400, 400, 2, &ExtractConfig::default()).unwrap();
        assert_eq!(r.boxes, rp.into_vec());
        assert_eq!(r.iterations_used, 0);
        assert_eq!(r.final_iou_threshold, 0.1);
    }

    #[test]
    fn fragments_collapse_to_objects() {
        // two objects, each with a covering box and nested fragments
        let rp = set(&[
            (10, 10, 100, 80),
            (12, 12, 30, 25),
            (60, 40, 45, 45),
            (20, 50, 40, 30),
            (200, 150, 90, 90),
            (205, 150, 40, 40),
            (240, 200, 50, 40),
        ]);
        let r = extract_from_proposals(&rp, 400, 300, 2, &ExtractConfig::default()).unwrap();
        let mut boxes = r.boxes.clone();
        boxes.sort();
        assert_eq!(boxes, vec![BBox::new(10, 10, 100, 80), BBox::new(200, 150, 90, 90)]);
        assert!(r.iterations_used >= 1);
    }

    #[test]
    fn too_few_proposals() {
        let rp = set(&[(0, 0, 40, 40), (0, 0, 5, 5)]);
        assert!(matches!(
            extract_from_proposals(&rp, 400, 400, 2, &ExtractConfig::default()),
            Err(Error::InsufficientProposals { available: 1, required: 2 })
        ));
    }

    #[test]
    fn undershoot_is_rolled_back() {
        // Three boxes in a chain; at threshold 0.1 the middle one glues all
        // three together, which undershoots N = 2.
        let rp = set(&[(0, 0, 40, 40), (30, 0, 40, 40), (60, 0, 40, 40)]);
        let cfg = ExtractConfig {
            initial_iou_threshold: 0.1,
            ..ExtractConfig::default()
        };
        let r = extract_from_proposals(&rp, 400, 400, 2, &cfg);
        match r {
            Ok(r) => assert_eq!(r.boxes.len(), 2),
            Err(e) => assert!(matches!(e, Error::NonConvergence { .. }), "{e}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ExtractConfig {
            initial_iou_threshold: 0.95,
            ..ExtractConfig::default()
        };
        assert!(cfg.validate().is_err());
        let rp = set(&[(0, 0, 40, 40)]);
        assert!(extract_from_proposals(&rp, 100, 100, 1, &cfg).is_err());
    }

    fn arb_set() -> impl Strategy<Value = ProposalSet> {
        prop::collection::vec((0u32..80, 0u32..80, 1u32..40, 1u32..40), 1..30)
            .prop_map(|v| v.into_iter().map(|(x, y, w, h)| BBox::new(x, y, w, h)).collect())
    }

    proptest! {
        #[test]
        fn union_pass_assigns_every_box_to_a_container(rp in arb_set(), t in 0.0f64..0.95) {
            let out = merge_pass_traced(&rp, t, MergeMode::Union);
            prop_assert!(out.boxes.len() <= rp.len());
            for (b, &k) in rp.boxes().iter().zip(&out.assignment) {
                prop_assert!(out.boxes.boxes()[k].contains(b));
            }
            let mut distinct = out.boxes.boxes().to_vec();
            distinct.sort();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), out.boxes.len());
        }

        #[test]
        fn representative_pass_keeps_subset(rp in arb_set(), t in 0.0f64..0.95) {
            let out = merge_pass(&rp, t, MergeMode::Representative);
            prop_assert!(out.boxes().iter().all(|b| rp.boxes().contains(b)));
            for b in rp.boxes() {
                if !out.boxes().contains(b) {
                    prop_assert!(out.boxes().iter().any(|k| iou(b, k) > t));
                }
            }
        }

        #[test]
        fn step_sign(count in 1usize..1000, n in 1usize..1000) {
            let s = threshold_step(count, n);
            prop_assert_eq!(s > 0.0, count > n);
            prop_assert_eq!(s == 0.0, count == n);
            prop_assert_eq!(s < 0.0, count < n);
        }

        #[test]
        fn exact_count_or_error(rp in arb_set(), n in 1usize..5) {
            let cfg = ExtractConfig { area_min: 1, ..ExtractConfig::default() };
            match extract_from_proposals(&rp, 120, 120, n, &cfg) {
                Ok(r) => {
                    prop_assert_eq!(r.boxes.len(), n);
                    prop_assert!(r.iterations_used <= cfg.max_iterations);
                }
                Err(Error::NonConvergence { iterations, .. }) => {
                    prop_assert!(iterations <= cfg.max_iterations)
                }
                Err(Error::InsufficientProposals { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {}", e),
            }
        }
    }
}
