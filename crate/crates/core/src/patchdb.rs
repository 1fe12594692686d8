//! On-disk patch database.
//!
//! Layout under the root directory:
//!
//! ```text
//! patches/<category>/<patch-id>.png   RGBA, alpha 255 = mask set, 0 = clear
//! index.jsonl                         one PatchRecord per line, append-only
//! ```
//!
//! The index is the source of truth for enumeration. Any number of readers
//! may open the same database; only one process may insert at a time.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::BBox;
use crate::occlusion::Patch;
use crate::raster::{from_rgba, to_rgba};

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub category: String,
    pub source_image: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug)]
pub struct PatchDb {
    root: PathBuf,
    records: Vec<PatchRecord>,
    ids: HashSet<String>,
}

fn path_safe(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    if cleaned.chars().all(|c| c == '.') {
        cleaned.replace('.', "_")
    } else {
        cleaned
    }
}

/// Stable id for the patch cut from `bbox` of `source_image`.
pub fn patch_id(source_image: &str, bbox: &BBox) -> String {
    let stem = Path::new(source_image)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path_safe(&format!("{stem}_{}_{}_{}_{}", bbox.xmin, bbox.ymin, bbox.width, bbox.height))
}

impl PatchDb {
    /// Opens (creating if needed) the database at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let index = root.join(INDEX_FILE);
        let mut records = Vec::new();
        if index.exists() {
            let file = std::fs::File::open(&index).map_err(|e| Error::io(&index, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&index, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: PatchRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(&index, format!("line {}: {e}", n + 1)))?;
                records.push(rec);
            }
        }
        let ids = records.iter().map(|r| r.patch_id.clone()).collect();
        Ok(Self { root, records, ids })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[PatchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, patch_id: &str) -> bool {
        self.ids.contains(patch_id)
    }

    pub fn patch_path(&self, rec: &PatchRecord) -> PathBuf {
        self.root
            .join("patches")
            .join(path_safe(&rec.category))
            .join(format!("{}.png", rec.patch_id))
    }

    /// Stores `patch` under `patch_id`; returns `false` if the id already
    /// exists (nothing is written).
    pub fn insert(&mut self, patch_id: &str, patch: &Patch) -> Result<bool> {
        if self.contains(patch_id) {
            return Ok(false);
        }
        if patch_id.is_empty() || path_safe(patch_id) != patch_id {
            return Err(Error::InvalidInput(format!("patch id `{patch_id}` is not path-safe")));
        }
        let rec = PatchRecord {
            patch_id: patch_id.to_string(),
            category: patch.source_label.clone(),
            source_image: patch.source_image.clone(),
            width: patch.pixels.width(),
            height: patch.pixels.height(),
        };
        let png = self.patch_path(&rec);
        let rgba = to_rgba(&patch.pixels, &patch.mask);
        fsutil::write_atomic_with(&png, |out| {
            rgba.write_to(out, image::ImageFormat::Png).map_err(|e| Error::Codec {
                path: png.clone(),
                source: e,
            })
        })?;

        let index = self.root.join(INDEX_FILE);
        let mut line = serde_json::to_string(&rec).expect("record serialises");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| Error::io(&index, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&index, e))?;
        self.ids.insert(rec.patch_id.clone());
        self.records.push(rec);
        Ok(true)
    }

    pub fn load(&self, rec: &PatchRecord) -> Result<Patch> {
        let path = self.patch_path(rec);
        let img = image::open(&path)
            .map_err(|e| Error::Codec {
                path: path.clone(),
                source: e,
            })?
            .to_rgba8();
        if img.dimensions() != (rec.width, rec.height) {
            return Err(Error::InvariantViolation {
                path,
                message: format!(
                    "stored patch is {:?}, index says {}x{}",
                    img.dimensions(),
                    rec.width,
                    rec.height
                ),
            });
        }
        let (pixels, mask) = from_rgba(&img)?;
        Patch::new(pixels, mask, rec.category.clone(), rec.source_image.clone())
    }

    /// Every indexed patch, in index order.
    pub fn load_all(&self) -> Result<Vec<Patch>> {
        self.records.iter().map(|r| self.load(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{BinaryMask, RasterImage};

    fn patch(label: &str, seed: u8) -> Patch {
        let pixels = RasterImage::from_fn(7, 5, |x, y| [seed, (x * 30) as u8, (y * 40) as u8]);
        let mut mask = BinaryMask::filled(7, 5, true);
        mask.set(0, 0, false);
        Patch::new(pixels, mask, label, "img_1.png").unwrap()
    }

    #[test]
    fn insert_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PatchDb::open(dir.path()).unwrap();
        let id = patch_id("images/img_1.png", &BBox::new(3, 4, 7, 5));
        assert_eq!(id, "img_1_3_4_7_5");
        assert!(db.insert(&id, &patch("cat01", 9)).unwrap());
        assert!(!db.insert(&id, &patch("cat01", 10)).unwrap());
        assert!(db.insert("other", &patch("a/b", 11)).unwrap());

        let reopened = PatchDb::open(dir.path()).unwrap();
        assert_eq!(reopened.records(), db.records());
        assert_eq!(reopened.load_all().unwrap(), vec![patch("cat01", 9), patch("a/b", 11)]);
        assert!(dir.path().join("patches/cat01/img_1_3_4_7_5.png").exists());
        assert!(dir.path().join("patches/a_b/other.png").exists());
        let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        assert_eq!(index.lines().count(), 2);
        assert!(index.starts_with(
            r#"{"patch_id":"img_1_3_4_7_5","category":"cat01","source_image":"img_1.png","width":7,"height":5}"#
        ));
    }

    #[test]
    fn unsafe_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = PatchDb::open(dir.path()).unwrap();
        assert!(db.insert("../escape", &patch("c", 1)).is_err());
    }

    #[test]
    fn corrupt_index_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(INDEX_FILE), "{not json\n").unwrap();
        assert!(matches!(PatchDb::open(dir.path()), Err(Error::Parse { .. })));
    }
}
