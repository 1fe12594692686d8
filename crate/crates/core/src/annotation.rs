//! VOC-style XML annotations and tab-separated dataset manifests.
//!
//! Boxes are 0-based with exclusive right/bottom edges in memory and 1-based
//! inclusive in XML: `xmin_xml = xmin + 1`, `xmax_xml = xmin + width`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use quick_xml::escape::escape;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Object {
    pub label: String,
    pub bbox: BBox,
}

impl Object {
    pub fn new(label: impl Into<String>, bbox: BBox) -> Self {
        Self {
            label: label.into(),
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub image_filename: String,
    pub image_width: u32,
    pub image_height: u32,
    pub objects: Vec<Object>,
}

/// Text that survives an XML round trip unchanged: non-empty, no surrounding
/// whitespace, no control characters.
fn check_text(what: &str, s: &str) -> std::result::Result<(), String> {
    if s.is_empty() || s.trim() != s || s.chars().any(char::is_control) {
        return Err(format!("{what} `{s}` must be non-empty without control characters or surrounding whitespace"));
    }
    Ok(())
}

impl Annotation {
    pub fn new(image_filename: impl Into<String>, image_width: u32, image_height: u32) -> Self {
        Self {
            image_filename: image_filename.into(),
            image_width,
            image_height,
            objects: Vec::new(),
        }
    }

    pub fn with_objects(mut self, objects: Vec<Object>) -> Self {
        self.objects = objects;
        self
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        check_text("filename", &self.image_filename)?;
        if self.image_width == 0 || self.image_height == 0 {
            return Err(format!(
                "image size {}x{} must be positive",
                self.image_width, self.image_height
            ));
        }
        for o in &self.objects {
            check_text("label", &o.label)?;
            if !o.bbox.fits_within(self.image_width, self.image_height) {
                return Err(format!(
                    "box {:?} exceeds {}x{} image",
                    o.bbox, self.image_width, self.image_height
                ));
            }
        }
        Ok(())
    }

    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        s.push_str("<annotation>\n");
        let _ = writeln!(s, "  <filename>{}</filename>", escape(&self.image_filename));
        let _ = writeln!(
            s,
            "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
            self.image_width, self.image_height
        );
        for o in &self.objects {
            let b = &o.bbox;
            let _ = writeln!(
                s,
                "  <object>\n    <name>{}</name>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
                escape(&o.label),
                b.xmin + 1,
                b.ymin + 1,
                b.xmax(),
                b.ymax()
            );
        }
        s.push_str("</annotation>\n");
        s
    }

    /// Parses and validates; `path` only labels errors.
    pub fn from_xml(text: &str, path: &Path) -> Result<Self> {
        if !text.trim_start().starts_with("<annotation") && !text.trim_start().starts_with("<?xml") {
            return Err(Error::parse(path, "missing <annotation> root"));
        }
        let raw: XmlAnnotation =
            quick_xml::de::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        let violation = |message: String| Error::InvariantViolation {
            path: path.to_path_buf(),
            message,
        };
        let mut objects = Vec::with_capacity(raw.objects.len());
        for o in raw.objects {
            let b = o.bndbox;
            if b.xmin < 1 || b.ymin < 1 || b.xmax < b.xmin || b.ymax < b.ymin {
                return Err(violation(format!(
                    "bndbox ({},{},{},{}) is not a positive inclusive range",
                    b.xmin, b.ymin, b.xmax, b.ymax
                )));
            }
            let to_u32 = |v: i64| u32::try_from(v).map_err(|_| violation(format!("coordinate {v} out of range")));
            let bbox = BBox::new(
                to_u32(b.xmin - 1)?,
                to_u32(b.ymin - 1)?,
                to_u32(b.xmax - b.xmin + 1)?,
                to_u32(b.ymax - b.ymin + 1)?,
            );
            objects.push(Object::new(o.name, bbox));
        }
        let a = Annotation {
            image_filename: raw.filename,
            image_width: raw.size.width,
            image_height: raw.size.height,
            objects,
        };
        a.validate().map_err(violation)?;
        Ok(a)
    }
}

#[derive(Deserialize)]
struct XmlAnnotation {
    filename: String,
    size: XmlSize,
    #[serde(rename = "object", default)]
    objects: Vec<XmlObject>,
}

#[derive(Deserialize)]
struct XmlSize {
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct XmlObject {
    name: String,
    bndbox: XmlBndBox,
}

#[derive(Deserialize)]
struct XmlBndBox {
    xmin: i64,
    ymin: i64,
    xmax: i64,
    ymax: i64,
}

pub fn write_xml(a: &Annotation, path: &Path) -> Result<()> {
    a.validate().map_err(|message| Error::InvariantViolation {
        path: path.to_path_buf(),
        message,
    })?;
    fsutil::write_atomic(path, a.to_xml().as_bytes())
}

pub fn read_xml(path: &Path) -> Result<Annotation> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Annotation::from_xml(&text, path)
}

/// What happened to a manifest image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryStatus {
    Annotated(PathBuf),
    Dropped(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub n_objects: usize,
    pub status: EntryStatus,
}

impl ManifestEntry {
    pub fn annotated(image: impl Into<PathBuf>, n_objects: usize, annotation: impl Into<PathBuf>) -> Self {
        Self {
            image: image.into(),
            n_objects,
            status: EntryStatus::Annotated(annotation.into()),
        }
    }

    pub fn dropped(image: impl Into<PathBuf>, n_objects: usize, reason: impl Into<String>) -> Self {
        Self {
            image: image.into(),
            n_objects,
            status: EntryStatus::Dropped(reason.into()),
        }
    }

    pub fn annotation_path(&self) -> Option<&Path> {
        match &self.status {
            EntryStatus::Annotated(p) => Some(p),
            EntryStatus::Dropped(_) => None,
        }
    }
}

/// One line per image: `<image>\t<N>\t<annotation | DROPPED:<reason>>`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

const DROPPED_PREFIX: &str = "DROPPED:";

fn field_ok(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\t', '\n', '\r'])
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn check(&self, path: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            let image = e.image.to_string_lossy();
            if !seen.insert(e.image.clone()) {
                return Err(Error::DuplicatePath(image.into_owned()));
            }
            let third = match &e.status {
                EntryStatus::Annotated(p) => p.to_string_lossy().into_owned(),
                EntryStatus::Dropped(r) => r.clone(),
            };
            if e.n_objects < 1 || !field_ok(&image) || !field_ok(&third) {
                return Err(Error::InvariantViolation {
                    path: path.to_path_buf(),
                    message: format!("unrepresentable manifest entry for `{image}`"),
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let third = match &e.status {
                EntryStatus::Annotated(p) => p.to_string_lossy().into_owned(),
                EntryStatus::Dropped(r) => format!("{DROPPED_PREFIX}{r}"),
            };
            let _ = writeln!(s, "{}\t{}\t{}", e.image.to_string_lossy(), e.n_objects, third);
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::parse(path, format!("line {}: {m}", i + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            let [image, n, third] = cols[..] else {
                return Err(err("expected 3 tab-separated fields"));
            };
            if image.is_empty() || third.is_empty() {
                return Err(err("empty field"));
            }
            let n_objects: usize = n.parse().map_err(|_| err("object count is not an integer"))?;
            if n_objects < 1 {
                return Err(err("object count must be >= 1"));
            }
            let status = match third.strip_prefix(DROPPED_PREFIX) {
                Some(reason) if !reason.is_empty() => EntryStatus::Dropped(reason.to_string()),
                Some(_) => return Err(err("empty drop reason")),
                None => EntryStatus::Annotated(PathBuf::from(third)),
            };
            if !seen.insert(image.to_string()) {
                return Err(Error::DuplicatePath(image.to_string()));
            }
            entries.push(ManifestEntry {
                image: PathBuf::from(image),
                n_objects,
                status,
            });
        }
        Ok(Self { entries })
    }

    pub fn annotated(&self) -> impl Iterator<Item = (&ManifestEntry, &Path)> {
        self.entries
            .iter()
            .filter_map(|e| e.annotation_path().map(|p| (e, p)))
    }
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.check(path)?;
    fsutil::write_atomic(path, m.to_text().as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text, path)
}

/// Resolves a manifest-relative path against the manifest's directory.
pub fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(p)
    }
}
