//! Classifier gate for extracted boxes.
//!
//! A box is accepted only if the classifier's top label is a valid category
//! and its probability is strictly above the threshold. The bundled
//! classifier is a nearest-centroid model over colour/texture histograms;
//! any other model can be plugged in through [`Classifier`], including an
//! out-of-process scorer speaking the file protocol in [`ExternalScorer`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use crate::annotation::Object;
use crate::error::{Error, Result};
use crate::features::{image_descriptor, COLOR_LEN};
use crate::fsutil;
use crate::geometry::BBox;
use crate::raster::RasterImage;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub label: String,
    pub score: f64,
}

pub trait Classifier: Sync {
    /// Top label and probability for each crop, in input order.
    fn classify_batch(&self, crops: &[RasterImage]) -> Result<Vec<ClassScore>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmPolicy {
    pub score_threshold: f64,
    pub valid_labels: BTreeSet<String>,
}

impl ConfirmPolicy {
    pub fn new(score_threshold: f64, valid_labels: impl IntoIterator<Item = String>) -> Result<Self> {
        let p = Self {
            score_threshold,
            valid_labels: valid_labels.into_iter().collect(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidInput(format!(
                "score threshold {} outside [0, 1]",
                self.score_threshold
            )));
        }
        if self.valid_labels.is_empty() {
            return Err(Error::InvalidInput("valid label set is empty".into()));
        }
        Ok(())
    }

    pub fn judge(&self, s: &ClassScore) -> Option<RejectReason> {
        if !self.valid_labels.contains(&s.label) {
            Some(RejectReason::InvalidLabel)
        } else if s.score > self.score_threshold {
            None
        } else {
            Some(RejectReason::LowScore)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    LowScore,
    InvalidLabel,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::LowScore => "LowScore",
            RejectReason::InvalidLabel => "InvalidLabel",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub index: usize,
    pub bbox: BBox,
    pub verdict: ClassScore,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acceptance {
    pub index: usize,
    /// The box with the classifier's label.
    pub object: Object,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfirmOutcome {
    /// In input order.
    pub accepted: Vec<Acceptance>,
    pub rejected: Vec<Rejection>,
}

impl ConfirmOutcome {
    /// Whether the image belongs in the generated dataset: all boxes must
    /// pass unless partial images are allowed.
    pub fn keep_image(&self, keep_partial: bool) -> bool {
        if keep_partial {
            !self.accepted.is_empty()
        } else {
            self.rejected.is_empty() && !self.accepted.is_empty()
        }
    }
}

pub fn confirm_boxes<C: Classifier + ?Sized>(
    img: &RasterImage,
    boxes: &[BBox],
    classifier: &C,
    policy: &ConfirmPolicy,
) -> Result<ConfirmOutcome> {
    let crops = boxes.iter().map(|b| img.crop(b)).collect::<Result<Vec<_>>>()?;
    let verdicts = classifier.classify_batch(&crops)?;
    let mut out = ConfirmOutcome::default();
    for (index, (b, v)) in boxes.iter().zip(verdicts).enumerate() {
        match policy.judge(&v) {
            None => out.accepted.push(Acceptance {
                index,
                object: Object::new(v.label, *b),
                score: v.score,
            }),
            Some(reason) => out.rejected.push(Rejection {
                index,
                bbox: *b,
                verdict: v,
                reason,
            }),
        }
    }
    Ok(out)
}

/// Nearest-centroid classifier over concatenated colour and texture
/// histograms, with probabilities `softmax(-temperature * chi2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramModel {
    labels: Vec<String>,
    centroids: Vec<Vec<f64>>,
    pub temperature: f64,
}

pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// Chi-squared histogram distance, `0.5 * sum (a-b)^2 / (a+b)`.
pub fn chi_squared(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b)
        .filter(|(x, y)| *x + *y > 0.0)
        .map(|(x, y)| (x - y) * (x - y) / (x + y))
        .sum::<f64>()
}

/// Numerically stable `softmax(-temperature * d)`.
pub fn softmax_of_distances(distances: &[f64], temperature: f64) -> Vec<f64> {
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = distances
        .iter()
        .map(|d| (-temperature * (d - min)).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn train_baseline(
    samples: &[(String, RasterImage)],
    categories: &[String],
    temperature: f64,
) -> Result<HistogramModel> {
    let declared: BTreeSet<&String> = categories.iter().collect();
    if declared.len() < 2 {
        return Err(Error::InvalidInput("baseline needs at least 2 categories".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    let mut sums: BTreeMap<&String, (Vec<f64>, usize)> = BTreeMap::new();
    for (label, crop) in samples {
        if !declared.contains(label) {
            return Err(Error::InvalidInput(format!("crop labelled `{label}` is not a declared category")));
        }
        let d = image_descriptor(crop);
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; d.len()], 0));
        entry.0.iter_mut().zip(&d).for_each(|(s, v)| *s += v);
        entry.1 += 1;
    }
    let mut labels = Vec::new();
    let mut centroids = Vec::new();
    for label in declared {
        let (sum, n) = sums
            .remove(label)
            .ok_or_else(|| Error::EmptyCategory(label.clone()))?;
        labels.push(label.clone());
        centroids.push(sum.into_iter().map(|v| v / n as f64).collect());
    }
    Ok(HistogramModel {
        labels,
        centroids,
        temperature,
    })
}

impl HistogramModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn centroid(&self, label: &str) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.centroids[i].as_slice())
    }

    pub fn distances(&self, crop: &RasterImage) -> Vec<f64> {
        let d = image_descriptor(crop);
        self.centroids
            .iter()
            .map(|c| chi_squared(&d[..COLOR_LEN], &c[..COLOR_LEN]) + chi_squared(&d[COLOR_LEN..], &c[COLOR_LEN..]))
            .collect()
    }

    /// Probability per category, in [`Self::labels`] order.
    pub fn distribution(&self, crop: &RasterImage) -> Vec<f64> {
        softmax_of_distances(&self.distances(crop), self.temperature)
    }

    /// Top label; ties go to the earlier label in sorted order.
    pub fn classify(&self, crop: &RasterImage) -> ClassScore {
        let dist = self.distribution(crop);
        let (best, score) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        ClassScore {
            label: self.labels[best].clone(),
            score,
        }
    }
}

impl Classifier for HistogramModel {
    fn classify_batch(&self, crops: &[RasterImage]) -> Result<Vec<ClassScore>> {
        Ok(crops.iter().map(|c| self.classify(c)).collect())
    }
}

/// File-based exchange with an out-of-process scorer.
///
/// Each batch gets a directory `<root>/batch_<k>/` holding `crops/<id>.png`
/// and `manifest.tsv` (`<crop-id>\t<path>` per line). The scorer answers by
/// creating `response.tsv` in the same directory (`<crop-id>\t<label>\t<score>`
/// per line, score in `[0, 1]`); it should write to a temporary name and
/// rename so the file appears complete.
#[derive(Debug)]
pub struct ExternalScorer {
    root: PathBuf,
    poll_interval: Duration,
    timeout: Duration,
    next_batch: AtomicUsize,
}

pub const REQUEST_FILE: &str = "manifest.tsv";
pub const RESPONSE_FILE: &str = "response.tsv";

impl ExternalScorer {
    pub fn new(root: impl Into<PathBuf>, poll_interval: Duration, timeout: Duration) -> Self {
        Self {
            root: root.into(),
            poll_interval,
            timeout,
            next_batch: AtomicUsize::new(0),
        }
    }

    /// Writes crops and the request manifest; returns the batch directory and
    /// crop ids.
    pub fn write_request(&self, crops: &[RasterImage]) -> Result<(PathBuf, Vec<String>)> {
        let k = self.next_batch.fetch_add(1, Ordering::SeqCst);
        let dir = self.root.join(format!("batch_{k:06}"));
        let response = dir.join(RESPONSE_FILE);
        if response.exists() {
            std::fs::remove_file(&response).map_err(|e| Error::io(&response, e))?;
        }
        let mut ids = Vec::with_capacity(crops.len());
        let mut manifest = String::new();
        for (i, crop) in crops.iter().enumerate() {
            let id = format!("crop_{i:05}");
            let path = dir.join("crops").join(format!("{id}.png"));
            crop.save(&path)?;
            manifest.push_str(&format!("{id}\t{}\n", path.display()));
            ids.push(id);
        }
        fsutil::write_atomic(&dir.join(REQUEST_FILE), manifest.as_bytes())?;
        Ok((dir, ids))
    }

    fn wait_for_response(&self, dir: &Path, ids: &[String]) -> Result<String> {
        let path = dir.join(RESPONSE_FILE);
        let start = Instant::now();
        loop {
            match std::fs::read_to_string(&path) {
                Ok(text) => return Ok(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(&path, e)),
            }
            if start.elapsed() >= self.timeout {
                return Err(Error::ScorerProtocol {
                    crop_id: ids.first().cloned().unwrap_or_default(),
                    message: format!("no {} within {:?}", path.display(), self.timeout),
                });
            }
            std::thread::sleep(self.poll_interval);
        }
    }
}

/// Parses a scorer response, requiring exactly one well-formed line per id.
pub fn parse_response(text: &str, ids: &[String]) -> Result<Vec<ClassScore>> {
    let protocol = |crop_id: &str, message: String| Error::ScorerProtocol {
        crop_id: crop_id.to_string(),
        message,
    };
    let mut found: HashMap<&str, ClassScore> = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let id = cols[0];
        let [_, label, score] = cols[..] else {
            return Err(protocol(id, format!("expected 3 tab-separated fields in `{line}`")));
        };
        if !ids.iter().any(|i| i == id) {
            return Err(protocol(id, "unknown crop id".into()));
        }
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| protocol(id, format!("score `{score}` is not a number")))?;
        if !(0.0..=1.0).contains(&score) || label.is_empty() {
            return Err(protocol(id, format!("invalid label/score `{label}` {score}")));
        }
        if found
            .insert(id, ClassScore { label: label.to_string(), score })
            .is_some()
        {
            return Err(protocol(id, "duplicate response line".into()));
        }
    }
    ids.iter()
        .map(|id| {
            found
                .remove(id.as_str())
                .ok_or_else(|| protocol(id, "missing from response".into()))
        })
        .collect()
}

impl Classifier for ExternalScorer {
    fn classify_batch(&self, crops: &[RasterImage]) -> Result<Vec<ClassScore>> {
        if crops.is_empty() {
            return Ok(Vec::new());
        }
        let (dir, ids) = self.write_request(crops)?;
        let text = self.wait_for_response(&dir, &ids)?;
        parse_response(&text, &ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::COLOR_BINS_PER_CHANNEL;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn policy() -> ConfirmPolicy {
        ConfirmPolicy::new(0.8, labels(&["a", "b"])).unwrap()
    }

    fn score(label: &str, score: f64) -> ClassScore {
        ClassScore { label: label.into(), score }
    }

    #[test]
    fn gate_truth_table() {
        let p = policy();
        assert_eq!(p.judge(&score("a", 0.85)), None);
        assert_eq!(p.judge(&score("a", 0.80)), Some(RejectReason::LowScore));
        assert_eq!(p.judge(&score("a", 0.5)), Some(RejectReason::LowScore));
        assert_eq!(p.judge(&score("z", 0.95)), Some(RejectReason::InvalidLabel));
        assert_eq!(p.judge(&score("z", 0.2)), Some(RejectReason::InvalidLabel));
    }

    #[test]
    fn policy_validation() {
        assert!(ConfirmPolicy::new(1.2, labels(&["a"])).is_err());
        assert!(ConfirmPolicy::new(0.8, Vec::new()).is_err());
    }

    #[test]
    fn solid_color_centroids_peak_in_their_hue_bins() {
        let red = RasterImage::filled(8, 8, [255, 0, 0]);
        let blue = RasterImage::filled(8, 8, [0, 0, 255]);
        let m = train_baseline(
            &[("red".into(), red.clone()), ("blue".into(), blue)],
            &labels(&["red", "blue"]),
            DEFAULT_TEMPERATURE,
        )
        .unwrap();
        // hue red = 0 -> bin 0; hue blue = 2/3 -> bin 16
        let r = m.centroid("red").unwrap();
        let b = m.centroid("blue").unwrap();
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r[16], 0.0);
        assert!((b[(2 * COLOR_BINS_PER_CHANNEL) / 3] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(b[0], 0.0);
        assert_eq!(m.classify(&red).label, "red");
    }

    #[test]
    fn repeated_crop_centroid_equals_descriptor() {
        let crop = RasterImage::from_fn(9, 7, |x, y| [(x * 20) as u8, (y * 30) as u8, 90]);
        let other = RasterImage::filled(9, 7, [0, 200, 0]);
        let mut samples: Vec<_> = (0..5).map(|_| ("a".to_string(), crop.clone())).collect();
        samples.push(("b".into(), other));
        let m = train_baseline(&samples, &labels(&["a", "b"]), 10.0).unwrap();
        let d = image_descriptor(&crop);
        for (x, y) in m.centroid("a").unwrap().iter().zip(&d) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(m.classify(&crop).label, "a");
    }

    #[test]
    fn empty_category_error() {
        let crop = RasterImage::filled(4, 4, [1, 2, 3]);
        assert!(matches!(
            train_baseline(&[("a".into(), crop)], &labels(&["a", "b"]), 10.0),
            Err(Error::EmptyCategory(c)) if c == "b"
        ));
    }

    #[test]
    fn equidistant_categories_split_evenly() {
        let p = softmax_of_distances(&[0.3, 0.3], 10.0);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_softmax() {
        // d = [0, 0.1, 0.2], T = 10 -> weights 1, e^-1, e^-2
        let p = softmax_of_distances(&[0.0, 0.1, 0.2], 10.0);
        let z = 1.0 + (-1.0f64).exp() + (-2.0f64).exp();
        let expected = [1.0 / z, (-1.0f64).exp() / z, (-2.0f64).exp() / z];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_squared_basics() {
        assert_eq!(chi_squared(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((chi_squared(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn response_parsing() {
        let ids = labels(&["c0", "c1"]);
        let ok = parse_response("c1\tb\t0.5\nc0\ta\t0.9\n", &ids).unwrap();
        assert_eq!(ok, vec![score("a", 0.9), score("b", 0.5)]);
        let err = |t: &str| match parse_response(t, &ids) {
            Err(Error::ScorerProtocol { crop_id, .. }) => crop_id,
            other => panic!("expected protocol error, got {other:?}"),
        };
        assert_eq!(err("c0\ta\t0.9\n"), "c1");
        assert_eq!(err("c0\ta\t0.9\nc1\tb\n"), "c1");
        assert_eq!(err("c0\ta\tlots\nc1\tb\t0.1\n"), "c0");
        assert_eq!(err("c0\ta\t1.5\nc1\tb\t0.1\n"), "c0");
        assert_eq!(err("c0\ta\t0.9\nc1\tb\t0.1\nc9\tb\t0.1\n"), "c9");
    }

    #[test]
    fn external_scorer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let scorer = ExternalScorer::new(&root, Duration::from_millis(5), Duration::from_secs(10));
        let responder = std::thread::spawn(move || {
            let request = root.join("batch_000000").join(REQUEST_FILE);
            while !request.exists() {
                std::thread::sleep(Duration::from_millis(5));
            }
            let text = std::fs::read_to_string(&request).unwrap();
            let mut out = String::new();
            for line in text.lines() {
                let (id, path) = line.split_once('\t').unwrap();
                assert!(Path::new(path).exists());
                out.push_str(&format!("{id}\tshelf\t0.875\n"));
            }
            let tmp = request.with_file_name("response.tmp");
            std::fs::write(&tmp, out).unwrap();
            std::fs::rename(tmp, request.with_file_name(RESPONSE_FILE)).unwrap();
        });
        let img = RasterImage::filled(30, 30, [10, 20, 30]);
        let boxes = [BBox::new(0, 0, 10, 10), BBox::new(5, 5, 20, 20)];
        let p = ConfirmPolicy::new(0.8, labels(&["shelf"])).unwrap();
        let out = confirm_boxes(&img, &boxes, &scorer, &p).unwrap();
        responder.join().unwrap();
        assert_eq!(out.accepted.len(), 2);
        assert!(out.keep_image(false));
    }

    #[test]
    fn external_scorer_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let scorer = ExternalScorer::new(dir.path(), Duration::from_millis(1), Duration::from_millis(20));
        let r = scorer.classify_batch(&[RasterImage::filled(2, 2, [0; 3])]);
        assert!(matches!(r, Err(Error::ScorerProtocol { crop_id, .. }) if crop_id == "crop_00000"));
    }

    #[test]
    fn image_disposition() {
        let rej = Rejection {
            index: 1,
            bbox: BBox::new(0, 0, 1, 1),
            verdict: score("a", 0.1),
            reason: RejectReason::LowScore,
        };
        let mixed = ConfirmOutcome {
            accepted: vec![Acceptance {
                index: 0,
                object: Object::new("a", BBox::new(0, 0, 2, 2)),
                score: 0.9,
            }],
            rejected: vec![rej],
        };
        assert!(!mixed.keep_image(false));
        assert!(mixed.keep_image(true));
    }
}
