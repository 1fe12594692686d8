//! Occlusion simulation: overwrite part of an annotated object with a black
//! block or a masked patch of another product.
//!
//! Compositing is exact: `out[i] = patch[i]` where the mask is set and
//! `out[i] = original[i]` elsewhere. Annotations are never modified.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::{BinaryMask, RasterImage, Rgb8};

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: RasterImage,
    pub mask: BinaryMask,
    pub source_label: String,
    pub source_image: String,
}

impl Patch {
    pub fn new(
        pixels: RasterImage,
        mask: BinaryMask,
        source_label: impl Into<String>,
        source_image: impl Into<String>,
    ) -> Result<Self> {
        if (mask.width(), mask.height()) != (pixels.width(), pixels.height()) {
            return Err(Error::InvalidInput(format!(
                "mask {}x{} does not match patch {}x{}",
                mask.width(),
                mask.height(),
                pixels.width(),
                pixels.height()
            )));
        }
        if mask.count_set() == 0 {
            return Err(Error::EmptyForeground);
        }
        Ok(Self {
            pixels,
            mask,
            source_label: source_label.into(),
            source_image: source_image.into(),
        })
    }

    /// Pixels resized bilinearly, mask by nearest neighbour.
    pub fn scaled(&self, width: u32, height: u32) -> Patch {
        Patch {
            pixels: self.pixels.resize_bilinear(width, height),
            mask: self.mask.resize_nearest(width, height),
            source_label: self.source_label.clone(),
            source_image: self.source_image.clone(),
        }
    }
}

/// How the background colour of a crop is estimated for thresholding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackgroundModel {
    /// Per-channel median of the crop's outermost ring of pixels.
    BorderMedian { tolerance: u8 },
    Fixed { color: Rgb8, tolerance: u8 },
}

pub const DEFAULT_MASK_TOLERANCE: u8 = 30;

impl Default for BackgroundModel {
    fn default() -> Self {
        BackgroundModel::BorderMedian {
            tolerance: DEFAULT_MASK_TOLERANCE,
        }
    }
}

impl BackgroundModel {
    pub fn estimate(&self, pixels: &RasterImage) -> (Rgb8, u8) {
        match *self {
            BackgroundModel::Fixed { color, tolerance } => (color, tolerance),
            BackgroundModel::BorderMedian { tolerance } => (border_median(pixels), tolerance),
        }
    }
}

pub fn border_median(img: &RasterImage) -> Rgb8 {
    let (w, h) = (img.width(), img.height());
    let mut ring = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                ring.push(img.get(x, y));
            }
        }
    }
    let mut out = [0u8; 3];
    for c in 0..3 {
        let mut v: Vec<u8> = ring.iter().map(|p| p[c]).collect();
        v.sort_unstable();
        out[c] = v[(v.len() - 1) / 2];
    }
    out
}

/// Foreground = max channel distance from `background` above `tolerance`,
/// reduced to its largest 4-connected component (earliest in scan order on
/// ties).
pub fn make_mask(pixels: &RasterImage, background: Rgb8, tolerance: u8) -> Result<BinaryMask> {
    let (w, h) = (pixels.width() as usize, pixels.height() as usize);
    let fg: Vec<bool> = pixels
        .pixels()
        .map(|p| {
            p.iter()
                .zip(background)
                .map(|(a, b)| a.abs_diff(b))
                .max()
                .unwrap_or(0)
                > tolerance
        })
        .collect();

    let mut label = vec![0u32; w * h];
    let (mut best, mut best_size, mut next) = (0u32, 0usize, 1u32);
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        let mut size = 0;
        label[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if fg[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        if size > best_size {
            best = next;
            best_size = size;
        }
        next += 1;
    }
    if best_size == 0 {
        return Err(Error::EmptyForeground);
    }
    BinaryMask::new(pixels.width(), pixels.height(), label.iter().map(|&l| l == best).collect())
}

pub fn harvest_patch(
    img: &RasterImage,
    bbox: &BBox,
    label: &str,
    source_image: &str,
    background: &BackgroundModel,
) -> Result<Patch> {
    let pixels = img.crop(bbox)?;
    let (bg, tolerance) = background.estimate(&pixels);
    let mask = make_mask(&pixels, bg, tolerance)?;
    Patch::new(pixels, mask, label, source_image)
}

/// Pastes `patch` with its top-left corner at `anchor` (may be negative or
/// past the edge); pixels falling outside `img` are ignored.
pub fn composite(img: &RasterImage, anchor: (i64, i64), patch: &Patch) -> Result<RasterImage> {
    let (ax, ay) = anchor;
    let (pw, ph) = (i64::from(patch.pixels.width()), i64::from(patch.pixels.height()));
    let (iw, ih) = (i64::from(img.width()), i64::from(img.height()));
    let x0 = ax.max(0);
    let y0 = ay.max(0);
    let x1 = (ax + pw).min(iw);
    let y1 = (ay + ph).min(ih);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::NoOverlap);
    }
    let mut out = img.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = ((x - ax) as u32, (y - ay) as u32);
            if patch.mask.get(px, py) {
                out.put(x as u32, y as u32, patch.pixels.get(px, py));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OcclusionMode {
    Black,
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];
}

impl OcclusionMode {
    pub const ALL: [OcclusionMode; 2] = [OcclusionMode::Black, OcclusionMode::Patch];
}

impl fmt::Display for OcclusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OcclusionMode::Black => "black",
            OcclusionMode::Patch => "patch",
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

impl FromStr for OcclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "black" => Ok(OcclusionMode::Black),
            "patch" => Ok(OcclusionMode::Patch),
            other => Err(Error::InvalidInput(format!("unknown occlusion mode `{other}`"))),
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            other => Err(Error::InvalidInput(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionSpec {
    pub mode: OcclusionMode,
    pub direction: Direction,
    /// Fraction in `(0, 1]` of the target's extent along the entry axis.
    pub coverage: f64,
    pub rng_seed: u64,
}

/// Part of `target` covered when entering from `direction`.
pub fn covered_region(target: &BBox, direction: Direction, coverage: f64) -> BBox {
    let span = |side: u32| ((coverage * f64::from(side)).round() as u32).clamp(1, side);
    match direction {
        Direction::Left => BBox::new(target.xmin, target.ymin, span(target.width), target.height),
        Direction::Right => {
            let w = span(target.width);
            BBox::new(target.xmax() - w, target.ymin, w, target.height)
        }
        Direction::Up => BBox::new(target.xmin, target.ymin, target.width, span(target.height)),
        Direction::Down => {
            let h = span(target.height);
            BBox::new(target.xmin, target.ymax() - h, target.width, h)
        }
    }
}

/// Occludes one randomly chosen object of `annotation`. Returns the new
/// image and the annotation unchanged.
pub fn simulate_occlusion(
    img: &RasterImage,
    annotation: &Annotation,
    spec: &OcclusionSpec,
    patches: &[Patch],
) -> Result<(RasterImage, Annotation)> {
    if !(spec.coverage > 0.0 && spec.coverage <= 1.0) {
        return Err(Error::InvalidInput(format!("coverage {} outside (0, 1]", spec.coverage)));
    }
    if annotation.objects.is_empty() {
        return Err(Error::InvalidInput("annotation has no objects to occlude".into()));
    }
    if spec.mode == OcclusionMode::Patch && patches.is_empty() {
        return Err(Error::EmptyPatchDb);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let target = annotation.objects[rng.random_range(0..annotation.objects.len())].bbox;
    img.check_bounds(&target)?;
    let region = covered_region(&target, spec.direction, spec.coverage);
    let out = match spec.mode {
        OcclusionMode::Black => {
            let mut out = img.clone();
            out.fill_box(&region, [0, 0, 0])?;
            out
        }
        OcclusionMode::Patch => {
            let patch = patches[rng.random_range(0..patches.len())].scaled(region.width, region.height);
            composite(img, (i64::from(region.xmin), i64::from(region.ymin)), &patch)?
        }
    };
    Ok((out, annotation.clone()))
}

/// Draws a coverage uniformly from `[lo, hi]`.
pub fn sample_coverage(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}
