//! Deterministic synthetic scenes with exact ground-truth boxes.
//!
//! Built-in sprites are rectangles and ellipses in one hue band per
//! category, rendered solid, as a value gradient, or striped.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotation::{write_manifest, write_xml, Annotation, DatasetManifest, ManifestEntry, Object};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::BBox;
use crate::raster::{hsv_to_rgb, BinaryMask, RasterImage, Rgb8};

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub label: String,
    pub pixels: RasterImage,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Solid,
    Gradient,
    Striped,
}

/// Look of one built-in category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryStyle {
    pub hue: f32,
    pub shape: Shape,
    pub pattern: Pattern,
}

pub fn category_label(index: usize) -> String {
    format!("cat{index:02}")
}

/// Style of built-in category `index` out of `count`; hues are spread evenly.
pub fn category_style(index: usize, count: usize) -> CategoryStyle {
    const LOOKS: [(Shape, Pattern); 6] = [
        (Shape::Rect, Pattern::Solid),
        (Shape::Ellipse, Pattern::Gradient),
        (Shape::Rect, Pattern::Striped),
        (Shape::Ellipse, Pattern::Solid),
        (Shape::Rect, Pattern::Gradient),
        (Shape::Ellipse, Pattern::Striped),
    ];
    let (shape, pattern) = LOOKS[index % LOOKS.len()];
    CategoryStyle {
        hue: index as f32 / count.max(1) as f32,
        shape,
        pattern,
    }
}

pub fn render_sprite(label: impl Into<String>, style: CategoryStyle, width: u32, height: u32) -> Sprite {
    let (w, h) = (width as f32, height as f32);
    let pixels = RasterImage::from_fn(width, height, |x, y| {
        let value = match style.pattern {
            Pattern::Solid => 0.8,
            Pattern::Gradient => 0.6 + 0.35 * (x as f32 + 0.5) / w,
            Pattern::Striped => {
                if (y / 8) % 2 == 0 {
                    0.9
                } else {
                    0.65
                }
            }
        };
        hsv_to_rgb([style.hue, 0.85, value])
    });
    let bits = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| match style.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let dx = (x as f32 + 0.5 - w / 2.0) / (w / 2.0);
                let dy = (y as f32 + 0.5 - h / 2.0) / (h / 2.0);
                dx * dx + dy * dy <= 1.0
            }
        })
        .collect();
    Sprite {
        label: label.into(),
        pixels,
        mask: BinaryMask::new(width, height, bits).expect("mask sized to sprite"),
    }
}

/// `per_category` sprites for each of `categories` built-in categories, with
/// sides drawn from `[side_min, side_max]` and aspect ratio at most 2.
pub fn builtin_sprites(categories: usize, per_category: usize, side_min: u32, side_max: u32, seed: u64) -> Vec<Sprite> {
    assert!(side_min >= 1 && side_min <= side_max, "invalid sprite side range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(categories * per_category);
    for c in 0..categories {
        let style = category_style(c, categories);
        for _ in 0..per_category {
            let w = rng.random_range(side_min..=side_max);
            let lo = side_min.max(w.div_ceil(2));
            let hi = side_max.min(w * 2).max(lo);
            let h = rng.random_range(lo..=hi);
            out.push(render_sprite(category_label(c), style, w, h));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub background: Rgb8,
    /// Uniform per-channel noise amplitude added to the background; 0 is off.
    pub noise: u8,
    pub sprites: Vec<Sprite>,
    pub n_objects: usize,
    pub min_gap: u32,
    pub seed: u64,
}

/// Separation between two boxes along the more separated axis; negative when
/// they overlap.
fn gap(a: &BBox, b: &BBox) -> i64 {
    let dx = (i64::from(b.xmin) - i64::from(a.xmax())).max(i64::from(a.xmin) - i64::from(b.xmax()));
    let dy = (i64::from(b.ymin) - i64::from(a.ymax())).max(i64::from(a.ymin) - i64::from(b.ymax()));
    dx.max(dy)
}

pub fn generate_scene(spec: &SceneSpec, image_filename: &str) -> Result<(RasterImage, Annotation)> {
    if spec.n_objects < 1 || spec.sprites.is_empty() {
        return Err(Error::InvalidInput(
            "scene needs n_objects >= 1 and a non-empty sprite set".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed: Vec<(usize, BBox)> = Vec::with_capacity(spec.n_objects);
    for k in 0..spec.n_objects {
        let mut found = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let idx = rng.random_range(0..spec.sprites.len());
            let s = &spec.sprites[idx];
            if s.pixels.width() > spec.canvas_width || s.pixels.height() > spec.canvas_height {
                continue;
            }
            let x = rng.random_range(0..=spec.canvas_width - s.pixels.width());
            let y = rng.random_range(0..=spec.canvas_height - s.pixels.height());
            let b = BBox::new(x, y, s.pixels.width(), s.pixels.height());
            if placed.iter().all(|(_, p)| gap(p, &b) >= i64::from(spec.min_gap)) {
                found = Some((idx, b));
                break;
            }
        }
        match found {
            Some(p) => placed.push(p),
            None => {
                return Err(Error::PlacementFailure {
                    placed: k,
                    requested: spec.n_objects,
                    attempts: MAX_PLACEMENT_ATTEMPTS,
                })
            }
        }
    }

    let mut img = RasterImage::filled(spec.canvas_width, spec.canvas_height, spec.background);
    if spec.noise > 0 {
        let amp = i16::from(spec.noise);
        for y in 0..spec.canvas_height {
            for x in 0..spec.canvas_width {
                let px = spec.background.map(|c| {
                    (i16::from(c) + rng.random_range(-amp..=amp)).clamp(0, 255) as u8
                });
                img.put(x, y, px);
            }
        }
    }
    let mut objects = Vec::with_capacity(placed.len());
    for (idx, b) in &placed {
        let s = &spec.sprites[*idx];
        for sy in 0..b.height {
            for sx in 0..b.width {
                if s.mask.get(sx, sy) {
                    img.put(b.xmin + sx, b.ymin + sy, s.pixels.get(sx, sy));
                }
            }
        }
        objects.push(Object::new(s.label.clone(), *b));
    }
    let ann = Annotation::new(image_filename, spec.canvas_width, spec.canvas_height).with_objects(objects);
    Ok((img, ann))
}

/// Template for a whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub count: usize,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub background: Rgb8,
    pub noise: u8,
    pub categories: usize,
    pub sprites_per_category: usize,
    pub sprite_min: u32,
    pub sprite_max: u32,
    /// Object counts drawn uniformly per scene.
    pub n_values: Vec<usize>,
    pub min_gap: u32,
    /// Extra single-object scenes per category (`single_<cat>_<k>.png`),
    /// giving every category labelled examples.
    pub singles_per_category: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 20,
            canvas_width: 640,
            canvas_height: 480,
            background: [200, 200, 200],
            noise: 0,
            categories: 10,
            sprites_per_category: 3,
            sprite_min: 60,
            sprite_max: 140,
            n_values: vec![1, 2, 3, 4, 5],
            min_gap: 20,
            singles_per_category: 0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return bad("canvas must be at least 1x1");
        }
        if self.categories < 1 || self.sprites_per_category < 1 {
            return bad("need at least one category and one sprite per category");
        }
        if self.sprite_min < 1 || self.sprite_min > self.sprite_max {
            return bad("need 1 <= sprite_min <= sprite_max");
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return bad("object counts must be non-empty and >= 1");
        }
        Ok(())
    }

    pub fn sprites(&self) -> Vec<Sprite> {
        builtin_sprites(
            self.categories,
            self.sprites_per_category,
            self.sprite_min,
            self.sprite_max,
            mix_seed(self.seed, u64::MAX),
        )
    }

    /// Scene `index` of the corpus; independent of every other scene.
    pub fn scene_spec(&self, index: usize, sprites: &[Sprite]) -> SceneSpec {
        let seed = mix_seed(self.seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_objects = self.n_values[rng.random_range(0..self.n_values.len())];
        SceneSpec {
            canvas_width: self.canvas_width,
            canvas_height: self.canvas_height,
            background: self.background,
            noise: self.noise,
            sprites: sprites.to_vec(),
            n_objects,
            min_gap: self.min_gap,
            seed: rng.random(),
        }
    }
}

impl CorpusSpec {
    /// Single-object scene `k` of category `category`.
    pub fn single_spec(&self, category: usize, k: usize, sprites: &[Sprite]) -> SceneSpec {
        let label = category_label(category);
        let stream = (category * self.singles_per_category + k) as u64;
        SceneSpec {
            canvas_width: self.canvas_width,
            canvas_height: self.canvas_height,
            background: self.background,
            noise: self.noise,
            sprites: sprites.iter().filter(|s| s.label == label).cloned().collect(),
            n_objects: 1,
            min_gap: self.min_gap,
            seed: mix_seed(self.seed ^ SINGLES_STREAM, stream),
        }
    }

    fn jobs(&self, sprites: &[Sprite]) -> Vec<(String, SceneSpec)> {
        let scenes = (0..self.count).map(|i| (format!("scene_{i:04}.png"), self.scene_spec(i, sprites)));
        let singles = (0..self.categories).flat_map(|c| {
            (0..self.singles_per_category).map(move |k| (format!("single_{c:02}_{k:02}.png"), c, k))
        });
        scenes
            .chain(singles.map(|(name, c, k)| (name, self.single_spec(c, k, sprites))))
            .collect()
    }
}

const SINGLES_STREAM: u64 = 0x5349_4E47_4C45_5321;

/// SplitMix64 finaliser over `seed ^ stream`, for per-item seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub manifest_path: PathBuf,
    pub labels_path: PathBuf,
    pub written: usize,
    /// `(scene name, reason)` for skipped scenes.
    pub skipped: Vec<(String, String)>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Known categories of single-object images: `<image>\t<label>` per line.
pub const LABELS_FILE: &str = "labels.tsv";

/// Writes `images/`, `gt/`, the manifest (pointing at ground truth) and the
/// single-object label file under `out_dir`. Scenes that cannot be placed
/// are skipped and reported.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusSummary> {
    spec.validate()?;
    let sprites = spec.sprites();
    let results: Vec<(String, Result<Annotation>)> = spec
        .jobs(&sprites)
        .into_par_iter()
        .map(|(name, scene)| {
            let r = generate_scene(&scene, &name).and_then(|(img, ann)| {
                img.save(&out_dir.join("images").join(&name))?;
                write_xml(&ann, &out_dir.join("gt").join(name.replace(".png", ".xml")))?;
                Ok(ann)
            });
            (name, r)
        })
        .collect();

    let mut entries = Vec::new();
    let mut labels = String::new();
    let mut skipped = Vec::new();
    for (name, r) in results {
        match r {
            Ok(ann) => {
                let image = format!("images/{name}");
                if let [only] = ann.objects.as_slice() {
                    labels.push_str(&format!("{image}\t{}\n", only.label));
                }
                entries.push(ManifestEntry::annotated(
                    image,
                    ann.objects.len(),
                    format!("gt/{}", name.replace(".png", ".xml")),
                ));
            }
            Err(e @ Error::PlacementFailure { .. }) => skipped.push((name, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let labels_path = out_dir.join(LABELS_FILE);
    write_manifest(&DatasetManifest::new(entries.clone()), &manifest_path)?;
    fsutil::write_atomic(&labels_path, labels.as_bytes())?;
    Ok(CorpusSummary {
        manifest_path,
        labels_path,
        written: entries.len(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::read_manifest;
    use crate::geometry::iou;

    fn spec(n: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            canvas_width: 640,
            canvas_height: 480,
            background: [200, 200, 200],
            noise: 0,
            sprites: builtin_sprites(10, 2, 60, 140, 7),
            n_objects: n,
            min_gap: 20,
            seed,
        }
    }

    #[test]
    fn sprite_masks_touch_every_edge() {
        for c in 0..6 {
            let s = render_sprite("x", category_style(c, 6), 37, 52);
            let m = &s.mask;
            assert!((0..m.height()).any(|y| m.get(0, y)));
            assert!((0..m.height()).any(|y| m.get(m.width() - 1, y)));
            assert!((0..m.width()).any(|x| m.get(x, 0)));
            assert!((0..m.width()).any(|x| m.get(x, m.height() - 1)));
        }
    }

    #[test]
    fn single_object_box_is_placement() {
        let s = spec(1, 3);
        let (img, ann) = generate_scene(&s, "a.png").unwrap();
        assert_eq!(ann.objects.len(), 1);
        let b = ann.objects[0].bbox;
        // every non-background pixel lies inside the box
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) != [200, 200, 200] {
                    assert!(b.contains_point(x, y));
                }
            }
        }
        assert!(ann.validate().is_ok());
    }

    #[test]
    fn same_seed_same_scene() {
        assert_eq!(generate_scene(&spec(3, 11), "a.png").unwrap(), generate_scene(&spec(3, 11), "a.png").unwrap());
        assert_ne!(generate_scene(&spec(3, 11), "a.png").unwrap().0, generate_scene(&spec(3, 12), "a.png").unwrap().0);
    }

    #[test]
    fn five_objects_keep_their_distance() {
        for seed in 0..20 {
            let (_, ann) = generate_scene(&spec(5, seed), "a.png").unwrap();
            for (i, a) in ann.objects.iter().enumerate() {
                for b in &ann.objects[i + 1..] {
                    assert!(gap(&a.bbox, &b.bbox) >= 20);
                    assert_eq!(iou(&a.bbox, &b.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn overcrowded_scene_fails() {
        let mut s = spec(1, 0);
        s.sprites = vec![render_sprite("big", category_style(0, 1), 700, 100)];
        assert!(matches!(generate_scene(&s, "a.png"), Err(Error::PlacementFailure { .. })));
    }

    #[test]
    fn noise_stays_near_background() {
        let mut s = spec(1, 5);
        s.noise = 6;
        let (img, ann) = generate_scene(&s, "a.png").unwrap();
        let b = ann.objects[0].bbox;
        let px = if b.xmin > 0 { img.get(0, 0) } else { img.get(639, 479) };
        assert!(px.iter().all(|&c| (194..=206).contains(&c)));
    }

    #[test]
    fn corpus_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            count: 4,
            n_values: vec![3],
            ..CorpusSpec::default()
        };
        let sa = generate_corpus(&spec, a.path()).unwrap();
        generate_corpus(&spec, b.path()).unwrap();
        assert_eq!(sa.written, 4);
        let m = read_manifest(&sa.manifest_path).unwrap();
        assert!(m.entries.iter().all(|e| e.n_objects == 3));
        for rel in ["manifest.tsv", "labels.tsv", "images/scene_0002.png", "gt/scene_0003.xml"] {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    #[test]
    fn singles_cover_every_category() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            count: 1,
            categories: 3,
            singles_per_category: 2,
            ..CorpusSpec::default()
        };
        let summary = generate_corpus(&spec, dir.path()).unwrap();
        assert_eq!(summary.written, 7);
        let labels = std::fs::read_to_string(&summary.labels_path).unwrap();
        for c in 0..3 {
            for k in 0..2 {
                let line = format!("images/single_{c:02}_{k:02}.png\tcat{c:02}");
                assert!(labels.lines().any(|l| l == line), "{line}");
            }
        }
    }
}
