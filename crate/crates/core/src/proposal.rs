//! Selective-search region proposals.
//!
//! Over-segments the image, then greedily merges the most similar pair of
//! adjacent regions until one region remains. Every region that ever exists
//! (initial segments and merge results) contributes its bounding box.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{histogram_intersection, merge_histograms, PixelBins};
use crate::fsutil;
use crate::geometry::BBox;
use crate::raster::RasterImage;
use crate::segment::{oversegment, SegmentParams};

/// A region of the grouping hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: usize,
    pub size: usize,
    pub bbox: BBox,
    pub color_hist: Vec<f64>,
    pub texture_hist: Vec<f64>,
}

impl Segment {
    pub fn merge(&self, other: &Segment, id: usize) -> Segment {
        Segment {
            id,
            size: self.size + other.size,
            bbox: self.bbox.union(&other.bbox),
            color_hist: merge_histograms(&self.color_hist, self.size, &other.color_hist, other.size),
            texture_hist: merge_histograms(
                &self.texture_hist,
                self.size,
                &other.texture_hist,
                other.size,
            ),
        }
    }
}

/// Which similarity components are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityWeights {
    pub color: bool,
    pub texture: bool,
    pub size: bool,
    pub fill: bool,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            color: true,
            texture: true,
            size: true,
            fill: true,
        }
    }
}

/// Grouping score in `[0, 4]`: the sum of the enabled colour, texture, size
/// and fill components.
pub fn similarity(s1: &Segment, s2: &Segment, image_area: u64, weights: SimilarityWeights) -> f64 {
    let area = image_area as f64;
    let mut score = 0.0;
    if weights.color {
        score += histogram_intersection(&s1.color_hist, &s2.color_hist);
    }
    if weights.texture {
        score += histogram_intersection(&s1.texture_hist, &s2.texture_hist);
    }
    if weights.size {
        score += 1.0 - (s1.size + s2.size) as f64 / area;
    }
    if weights.fill {
        let bbox_area = s1.bbox.union(&s2.bbox).area() as f64;
        score += 1.0 - (bbox_area - s1.size as f64 - s2.size as f64) / area;
    }
    score
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProposalConfig {
    pub segment: SegmentParams,
    pub similarity: SimilarityWeights,
}

/// Ordered candidate boxes for one image.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProposalSet(pub Vec<BBox>);

impl ProposalSet {
    pub fn boxes(&self) -> &[BBox] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<BBox> {
        self.0
    }

    /// Debug dump: one `{"xmin":..,"ymin":..,"width":..,"height":..}` per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for b in &self.0 {
            serde_json::to_writer(&mut out, b).expect("box serialises");
            out.write_all(b"\n").expect("vec write");
        }
        fsutil::write_atomic(path, &out)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut boxes = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let b: BBox = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
            boxes.push(BBox::try_new(b.xmin, b.ymin, b.width, b.height)?);
        }
        Ok(Self(boxes))
    }
}

impl FromIterator<BBox> for ProposalSet {
    fn from_iter<I: IntoIterator<Item = BBox>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Counters from one grouping run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupingStats {
    pub initial_segments: usize,
    pub merges: usize,
    /// Boxes recorded before deduplication.
    pub raw_boxes: usize,
}

#[derive(Debug, PartialEq)]
struct Candidate {
    score: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    /// Highest score first; ties go to the smaller `(a, b)` pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Initial regions and their 4-adjacency, from an over-segmentation.
pub fn initial_segments(img: &RasterImage, params: &SegmentParams) -> (Vec<Segment>, Vec<BTreeSet<usize>>) {
    let seg = oversegment(img, params);
    let bins = PixelBins::compute(img);
    let (w, h) = (img.width() as usize, img.height() as usize);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); seg.count];
    for (i, &l) in seg.labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let segments = members
        .iter()
        .enumerate()
        .map(|(id, pix)| {
            let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
            for &i in pix {
                let (x, y) = ((i % w) as u32, (i / w) as u32);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
            let (color_hist, texture_hist) = bins.histograms(pix.iter().copied());
            Segment {
                id,
                size: pix.len(),
                bbox: BBox::from_corners(x0, y0, x1, y1).expect("segment has pixels"),
                color_hist,
                texture_hist,
            }
        })
        .collect();

    let mut neighbours = vec![BTreeSet::new(); seg.count];
    let mut link = |a: u32, b: u32| {
        if a != b {
            neighbours[a as usize].insert(b as usize);
            neighbours[b as usize].insert(a as usize);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                link(seg.labels[i], seg.labels[i + 1]);
            }
            if y + 1 < h {
                link(seg.labels[i], seg.labels[i + w]);
            }
        }
    }
    (segments, neighbours)
}

/// Runs hierarchical grouping and returns every region created, initial
/// segments first, in creation order.
pub fn group(
    mut regions: Vec<Segment>,
    mut neighbours: Vec<BTreeSet<usize>>,
    image_area: u64,
    weights: SimilarityWeights,
) -> Vec<Segment> {
    let mut alive = vec![true; regions.len()];
    let mut heap = BinaryHeap::new();
    for (a, nb) in neighbours.iter().enumerate() {
        for &b in nb.range(a + 1..) {
            heap.push(Candidate {
                score: similarity(&regions[a], &regions[b], image_area, weights),
                a,
                b,
            });
        }
    }

    while let Some(Candidate { a, b, .. }) = heap.pop() {
        if !alive[a] || !alive[b] {
            continue;
        }
        let id = regions.len();
        let merged = regions[a].merge(&regions[b], id);
        alive[a] = false;
        alive[b] = false;

        let joined: BTreeSet<usize> = neighbours[a]
            .union(&neighbours[b])
            .copied()
            .filter(|&n| n != a && n != b && alive[n])
            .collect();
        for &n in &joined {
            neighbours[n].remove(&a);
            neighbours[n].remove(&b);
            neighbours[n].insert(id);
            heap.push(Candidate {
                score: similarity(&regions[n], &merged, image_area, weights),
                a: n,
                b: id,
            });
        }
        neighbours[a].clear();
        neighbours[b].clear();
        neighbours.push(joined);
        regions.push(merged);
        alive.push(true);
    }
    regions
}

pub fn propose_with_stats(img: &RasterImage, config: &ProposalConfig) -> (ProposalSet, GroupingStats) {
    let (segments, neighbours) = initial_segments(img, &config.segment);
    let initial = segments.len();
    let area = img.pixel_count() as u64;
    let regions = group(segments, neighbours, area, config.similarity);

    let mut seen = std::collections::HashSet::new();
    let boxes = regions
        .iter()
        .map(|r| r.bbox)
        .filter(|b| seen.insert(*b))
        .collect();
    let stats = GroupingStats {
        initial_segments: initial,
        merges: regions.len() - initial,
        raw_boxes: regions.len(),
    };
    (ProposalSet(boxes), stats)
}

pub fn propose(img: &RasterImage, config: &ProposalConfig) -> ProposalSet {
    propose_with_stats(img, config).0
}
