//! The batch subcommands.
//!
//! Every command writes only below its output directory and never touches
//! its inputs. Re-running a command with the same inputs rewrites the same
//! files; `harvest` additionally skips patches already in the database.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use countbox::annotation::{
    read_manifest, read_xml, resolve, write_manifest, write_xml, Annotation, DatasetManifest, ManifestEntry, Object,
};
use countbox::confirm::{confirm_boxes, train_baseline, Classifier, ConfirmPolicy, ExternalScorer};
use countbox::extract::extract;
use countbox::metrics::{compute_report, detections_to_jsonl, read_detections, Detection, MetricsReport};
use countbox::occlusion::{harvest_patch, sample_coverage, simulate_occlusion, OcclusionSpec, Patch};
use countbox::patchdb::{patch_id, PatchDb};
use countbox::synth::{generate_corpus, mix_seed, CorpusSpec, CorpusSummary, LABELS_FILE, MANIFEST_FILE};
use countbox::{write_atomic, BBox, Error, RasterImage};

use crate::config::{ConfigError, PipelineConfig, ScorerKind};
use crate::logfmt::Line;

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const CONFIG_DUMP: &str = "config.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Bad configuration, arguments or unreadable input. Exit code 1.
    Usage(String),
    /// The command ran but produced nothing useful. Exit code 2.
    NoOutput(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::NoOutput(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::NoOutput(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

fn input_error(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn output_error(e: Error) -> Failure {
    Failure::NoOutput(e.to_string())
}

/// Configuration, output directory and worker pool shared by a command.
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pool: Arc<rayon::ThreadPool>,
}

impl Context {
    pub fn new(config: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self, Failure> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Failure::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            config,
            out: out.into(),
            pool: Arc::new(pool),
        })
    }

    /// Same settings, output in `out/<name>`.
    pub fn child(&self, name: &str) -> Context {
        Context {
            config: self.config.clone(),
            out: self.out.join(name),
            pool: Arc::clone(&self.pool),
        }
    }
}

/// `path` relative to `base`, so manifests stay valid when the whole tree
/// moves.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    pathdiff::diff_paths(abs(path), abs(base)).unwrap_or_else(|| abs(path))
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.to_string_lossy().into_owned())
}

/// Output stem per entry, from the image file stem; clashes get the entry
/// index appended.
fn output_stems<'a>(images: impl Iterator<Item = &'a Path>) -> Vec<String> {
    let mut used = HashSet::new();
    images
        .enumerate()
        .map(|(i, p)| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("image_{i}"));
            let name = if used.contains(&stem) { format!("{stem}_{i}") } else { stem };
            used.insert(name.clone());
            name
        })
        .collect()
}

fn read_labels(path: &Path) -> Result<HashMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read label file {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match line.split_once('\t') {
            Some((image, label)) if !image.is_empty() && !label.is_empty() && !label.contains('\t') => {
                out.insert(image.to_string(), label.to_string());
            }
            _ => {
                return Err(Failure::Usage(format!(
                    "{}:{}: expected `<image>\\t<label>`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(output_error)
}

/// Maps a box from a resized working image back to the original image.
fn to_original(b: &BBox, work: (u32, u32), orig: (u32, u32)) -> BBox {
    if work == orig {
        return *b;
    }
    let sx = f64::from(orig.0) / f64::from(work.0);
    let sy = f64::from(orig.1) / f64::from(work.1);
    let x0 = ((f64::from(b.xmin) * sx).round() as u32).min(orig.0 - 1);
    let y0 = ((f64::from(b.ymin) * sy).round() as u32).min(orig.1 - 1);
    let x1 = ((f64::from(b.xmax()) * sx).round() as u32).clamp(x0 + 1, orig.0);
    let y1 = ((f64::from(b.ymax()) * sy).round() as u32).clamp(y0 + 1, orig.1);
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    pub annotated: usize,
    pub dropped: usize,
    pub manifest: PathBuf,
    pub detections: PathBuf,
}

struct Extracted {
    work: RasterImage,
    orig: (u32, u32),
    boxes: Vec<BBox>,
}

enum Disposition {
    Keep { objects: Vec<Object>, scores: Vec<f64> },
    Drop(String),
}

type Confirmer = (Box<dyn Classifier>, ConfirmPolicy);

fn extract_one(manifest_path: &Path, entry: &ManifestEntry, config: &PipelineConfig) -> countbox::Result<Extracted> {
    let img = RasterImage::load(&resolve(manifest_path, &entry.image))?;
    let orig = (img.width(), img.height());
    let work = match config.extract.resize_long_side {
        0 => img,
        side => img.resize_preserve_aspect(side),
    };
    let r = extract(&work, entry.n_objects, &config.extract.params)?;
    Ok(Extracted {
        work,
        orig,
        boxes: r.boxes,
    })
}

/// The classifier used for confirmation, or `None` when the baseline has
/// fewer than two categories to learn from.
fn build_confirmer(
    config: &PipelineConfig,
    stage1: &[countbox::Result<Extracted>],
    known: &[Option<&String>],
    labels: &HashMap<String, String>,
) -> Result<Option<Confirmer>, Failure> {
    let cf = &config.confirm;
    let (classifier, categories): (Box<dyn Classifier>, BTreeSet<String>) = match cf.scorer {
        ScorerKind::Baseline => {
            let mut samples = Vec::new();
            for (r, label) in stage1.iter().zip(known) {
                if let (Ok(x), Some(label)) = (r, label) {
                    samples.push(((*label).clone(), x.work.crop(&x.boxes[0]).map_err(output_error)?));
                }
            }
            let categories: BTreeSet<String> = samples.iter().map(|(l, _)| l.clone()).collect();
            if categories.len() < 2 {
                Line::new("-", "train")
                    .field("outcome", "skipped")
                    .field("reason", "fewer than 2 labelled categories")
                    .emit();
                return Ok(None);
            }
            let cats: Vec<String> = categories.iter().cloned().collect();
            let model = train_baseline(&samples, &cats, cf.temperature).map_err(input_error)?;
            Line::new("-", "train")
                .field("outcome", "ok")
                .field("categories", cats.len())
                .field("crops", samples.len())
                .emit();
            (Box::new(model), categories)
        }
        ScorerKind::External => {
            let dir = cf.external_dir.clone().expect("validated");
            let scorer = ExternalScorer::new(
                dir,
                Duration::from_millis(cf.poll_ms),
                Duration::from_millis(cf.timeout_ms),
            );
            (Box::new(scorer), labels.values().cloned().collect())
        }
    };
    let valid = if cf.valid_labels.is_empty() {
        categories
    } else {
        cf.valid_labels.iter().cloned().collect()
    };
    if valid.is_empty() {
        return Err(Failure::Usage(
            "no valid labels: set confirm.valid_labels or provide a label file".into(),
        ));
    }
    let policy = ConfirmPolicy::new(cf.score_threshold, valid).map_err(input_error)?;
    Ok(Some((classifier, policy)))
}

fn decide(
    x: &Extracted,
    known: Option<&String>,
    config: &PipelineConfig,
    confirmer: Option<&Confirmer>,
) -> countbox::Result<Disposition> {
    if let (Some(label), false) = (known, config.extract.force_confirm) {
        return Ok(Disposition::Keep {
            objects: vec![Object::new(label.clone(), x.boxes[0])],
            scores: vec![1.0],
        });
    }
    let Some((classifier, policy)) = confirmer else {
        return Ok(Disposition::Drop("NoClassifier".into()));
    };
    let out = confirm_boxes(&x.work, &x.boxes, classifier.as_ref(), policy)?;
    if out.keep_image(config.confirm.keep_partial) {
        Ok(Disposition::Keep {
            objects: out.accepted.iter().map(|a| a.object.clone()).collect(),
            scores: out.accepted.iter().map(|a| a.score).collect(),
        })
    } else {
        let reason = out.rejected.first().map_or("Rejected".to_string(), |r| r.reason.to_string());
        Ok(Disposition::Drop(reason))
    }
}

/// Proposes, extracts exactly N boxes and confirms them for every manifest
/// image. Writes `annotations/<stem>.xml`, `manifest.tsv` (failures marked
/// `DROPPED:<reason>`) and `detections.jsonl` under the output directory.
pub fn cmd_extract(ctx: &Context, manifest_path: &Path) -> Result<ExtractSummary, Failure> {
    let config = &ctx.config;
    let manifest = read_manifest(manifest_path).map_err(input_error)?;
    let labels = match &config.confirm.labels {
        Some(p) => read_labels(p)?,
        None => {
            let p = resolve(manifest_path, Path::new(LABELS_FILE));
            if p.exists() {
                read_labels(&p)?
            } else {
                HashMap::new()
            }
        }
    };
    let entries = &manifest.entries;
    let known: Vec<Option<&String>> = entries
        .iter()
        .map(|e| (e.n_objects == 1).then(|| labels.get(&*e.image.to_string_lossy())).flatten())
        .collect();

    let stage1: Vec<countbox::Result<Extracted>> = ctx.pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let start = Instant::now();
                let r = extract_one(manifest_path, e, config);
                let line = Line::new(&e.image.to_string_lossy(), "extract").field("n", e.n_objects);
                match &r {
                    Ok(_) => line.field("outcome", "ok"),
                    Err(err) => line.field("outcome", "dropped").field("reason", err.kind()),
                }
                .elapsed(start)
                .emit();
                r
            })
            .collect()
    });

    let needs_confirm = stage1
        .iter()
        .zip(&known)
        .any(|(r, k)| r.is_ok() && (k.is_none() || config.extract.force_confirm));
    let confirmer = if needs_confirm {
        build_confirmer(config, &stage1, &known, &labels)?
    } else {
        None
    };

    let dispositions: Vec<(Disposition, (u32, u32))> = ctx.pool.install(|| {
        stage1
            .par_iter()
            .zip(entries.par_iter())
            .zip(known.par_iter())
            .map(|((r, e), k)| {
                let x = match r {
                    Ok(x) => x,
                    Err(err) => return (Disposition::Drop(err.kind().to_string()), (0, 0)),
                };
                let start = Instant::now();
                let work = (x.work.width(), x.work.height());
                let d = match decide(x, *k, config, confirmer.as_ref()) {
                    Ok(Disposition::Keep { objects, scores }) => Disposition::Keep {
                        objects: objects
                            .into_iter()
                            .map(|o| Object::new(o.label, to_original(&o.bbox, work, x.orig)))
                            .collect(),
                        scores,
                    },
                    Ok(drop) => drop,
                    Err(err) => Disposition::Drop(err.kind().to_string()),
                };
                let line = Line::new(&e.image.to_string_lossy(), "confirm");
                match &d {
                    Disposition::Keep { objects, .. } => line.field("outcome", "ok").field("boxes", objects.len()),
                    Disposition::Drop(reason) => line.field("outcome", "dropped").field("reason", reason),
                }
                .elapsed(start)
                .emit();
                (d, x.orig)
            })
            .collect()
    });

    let stems = output_stems(entries.iter().map(|e| e.image.as_path()));
    let mut out_entries = Vec::with_capacity(entries.len());
    let mut detections = Vec::new();
    let mut annotated = 0;
    for ((e, (d, dims)), stem) in entries.iter().zip(dispositions).zip(&stems) {
        let image_path = relative_to(&resolve(manifest_path, &e.image), &ctx.out);
        match d {
            Disposition::Drop(reason) => out_entries.push(ManifestEntry::dropped(image_path, e.n_objects, reason)),
            Disposition::Keep { objects, scores } => {
                let name = file_name(&e.image);
                for (o, s) in objects.iter().zip(&scores) {
                    detections.push(Detection::new(name.clone(), o.label.clone(), o.bbox, *s));
                }
                let ann = Annotation::new(name, dims.0, dims.1).with_objects(objects);
                let rel = PathBuf::from("annotations").join(format!("{stem}.xml"));
                write_xml(&ann, &ctx.out.join(&rel)).map_err(output_error)?;
                out_entries.push(ManifestEntry::annotated(image_path, e.n_objects, rel));
                annotated += 1;
            }
        }
    }
    let manifest_out = ctx.out.join(MANIFEST_FILE);
    let detections_out = ctx.out.join(DETECTIONS_FILE);
    write_manifest(&DatasetManifest::new(out_entries), &manifest_out).map_err(output_error)?;
    write_text(&detections_out, &detections_to_jsonl(&detections))?;
    if annotated == 0 {
        return Err(Failure::NoOutput("no image was annotated".into()));
    }
    Ok(ExtractSummary {
        annotated,
        dropped: entries.len() - annotated,
        manifest: manifest_out,
        detections: detections_out,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestSummary {
    pub inserted: usize,
    /// Patch ids already in the database.
    pub existing: usize,
    /// Boxes or images that yielded no patch.
    pub skipped: usize,
    pub total: usize,
}

enum Harvested {
    Existing,
    New(Patch),
    Failed(Error),
}

fn harvest_entry(
    manifest_path: &Path,
    entry: &ManifestEntry,
    ann_path: &Path,
    db: &PatchDb,
    config: &PipelineConfig,
) -> countbox::Result<Vec<(String, Harvested)>> {
    let img = RasterImage::load(&resolve(manifest_path, &entry.image))?;
    let ann = read_xml(&resolve(manifest_path, ann_path))?;
    let bg = config.occlude.background_model();
    Ok(ann
        .objects
        .iter()
        .map(|o| {
            let id = patch_id(&ann.image_filename, &o.bbox);
            let h = if db.contains(&id) {
                Harvested::Existing
            } else {
                match harvest_patch(&img, &o.bbox, &o.label, &ann.image_filename, &bg) {
                    Ok(p) => Harvested::New(p),
                    Err(e) => Harvested::Failed(e),
                }
            };
            (id, h)
        })
        .collect())
}

/// Harvests a masked patch from every annotated box into the patch database
/// at the output directory. Patch ids already present are skipped.
pub fn cmd_harvest(ctx: &Context, manifest_path: &Path) -> Result<HarvestSummary, Failure> {
    let manifest = read_manifest(manifest_path).map_err(input_error)?;
    let mut db = PatchDb::open(&ctx.out).map_err(input_error)?;
    let annotated: Vec<(&ManifestEntry, &Path)> = manifest.annotated().collect();
    let results: Vec<countbox::Result<Vec<(String, Harvested)>>> = ctx.pool.install(|| {
        annotated
            .par_iter()
            .map(|(e, a)| harvest_entry(manifest_path, e, a, &db, &ctx.config))
            .collect()
    });

    let mut summary = HarvestSummary {
        inserted: 0,
        existing: 0,
        skipped: 0,
        total: 0,
    };
    for ((e, _), r) in annotated.iter().zip(results) {
        let start = Instant::now();
        let image = e.image.to_string_lossy();
        let patches = match r {
            Ok(p) => p,
            Err(err) => {
                summary.skipped += 1;
                Line::new(&image, "harvest")
                    .field("outcome", "skipped")
                    .field("reason", err.kind())
                    .emit();
                continue;
            }
        };
        let (mut new, mut existing, mut failed) = (0, 0, Vec::new());
        for (id, h) in patches {
            match h {
                Harvested::Existing => existing += 1,
                Harvested::New(p) => {
                    if db.insert(&id, &p).map_err(output_error)? {
                        new += 1;
                    } else {
                        existing += 1;
                    }
                }
                Harvested::Failed(err) => failed.push(format!("{id}:{}", err.kind())),
            }
        }
        summary.inserted += new;
        summary.existing += existing;
        summary.skipped += failed.len();
        let mut line = Line::new(&image, "harvest")
            .field("outcome", "ok")
            .field("new", new)
            .field("existing", existing);
        if !failed.is_empty() {
            line = line.field("skipped", failed.join(","));
        }
        line.elapsed(start).emit();
    }
    summary.total = db.len();
    if db.is_empty() {
        return Err(Failure::NoOutput("patch database is empty".into()));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentSummary {
    pub written: usize,
    pub failed: usize,
    pub manifest: PathBuf,
}

/// Writes `aug_<mode>_<direction>_<name>` for every annotated image and
/// every configured mode and direction, with the annotation copied
/// unchanged apart from its file name. Variant seeds derive from the run
/// seed, the image's position in the manifest and the variant's position.
pub fn cmd_augment(ctx: &Context, manifest_path: &Path, db_root: Option<&Path>) -> Result<AugmentSummary, Failure> {
    let oc = &ctx.config.occlude;
    let manifest = read_manifest(manifest_path).map_err(input_error)?;
    let patches: Vec<Patch> = if oc.modes.contains(&countbox::occlusion::OcclusionMode::Patch) {
        let root = db_root.ok_or_else(|| Failure::Usage("patch mode needs a patch database (--db)".into()))?;
        let db = PatchDb::open(root).map_err(input_error)?;
        if db.is_empty() {
            return Err(Failure::NoOutput(Error::EmptyPatchDb.to_string()));
        }
        db.load_all().map_err(input_error)?
    } else {
        Vec::new()
    };
    let variants: Vec<_> = oc
        .modes
        .iter()
        .flat_map(|&m| oc.directions.iter().map(move |&d| (m, d)))
        .collect();
    let annotated: Vec<(&ManifestEntry, &Path)> = manifest.annotated().collect();
    let stems = output_stems(annotated.iter().map(|(e, _)| e.image.as_path()));

    let results: Vec<Vec<Result<ManifestEntry, String>>> = ctx.pool.install(|| {
        annotated
            .par_iter()
            .zip(stems.par_iter())
            .enumerate()
            .map(|(i, ((e, ann_path), stem))| {
                let image = e.image.to_string_lossy();
                let loaded = RasterImage::load(&resolve(manifest_path, &e.image))
                    .and_then(|img| read_xml(&resolve(manifest_path, ann_path)).map(|a| (img, a)));
                let (img, ann) = match loaded {
                    Ok(x) => x,
                    Err(err) => {
                        Line::new(&image, "augment")
                            .field("outcome", "skipped")
                            .field("reason", err.kind())
                            .emit();
                        return vec![Err(err.kind().to_string()); variants.len()];
                    }
                };
                let ext = e
                    .image
                    .extension()
                    .map_or("png".to_string(), |x| x.to_string_lossy().into_owned());
                variants
                    .iter()
                    .enumerate()
                    .map(|(v, &(mode, direction))| {
                        let start = Instant::now();
                        let prefix = format!("aug_{mode}_{direction}_{stem}");
                        let name = format!("{prefix}.{ext}");
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(ctx.config.seed, i as u64), v as u64));
                        let spec = OcclusionSpec {
                            mode,
                            direction,
                            coverage: sample_coverage(&mut rng, oc.coverage_min, oc.coverage_max),
                            rng_seed: rng.random(),
                        };
                        let r = simulate_occlusion(&img, &ann, &spec, &patches).and_then(|(out, mut a)| {
                            a.image_filename = name.clone();
                            let image_rel = PathBuf::from("images").join(&name);
                            let ann_rel = PathBuf::from("annotations").join(format!("{prefix}.xml"));
                            out.save(&ctx.out.join(&image_rel))?;
                            write_xml(&a, &ctx.out.join(&ann_rel))?;
                            Ok(ManifestEntry::annotated(image_rel, e.n_objects, ann_rel))
                        });
                        let line = Line::new(&image, "augment").field("variant", &prefix);
                        match &r {
                            Ok(_) => line.field("outcome", "ok").field("coverage", format!("{:.3}", spec.coverage)),
                            Err(err) => line.field("outcome", "failed").field("reason", err.kind()),
                        }
                        .elapsed(start)
                        .emit();
                        r.map_err(|err| err.kind().to_string())
                    })
                    .collect()
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut failed = 0;
    for r in results.into_iter().flatten() {
        match r {
            Ok(e) => entries.push(e),
            Err(_) => failed += 1,
        }
    }
    let manifest_out = ctx.out.join(MANIFEST_FILE);
    let written = entries.len();
    write_manifest(&DatasetManifest::new(entries), &manifest_out).map_err(output_error)?;
    if written == 0 {
        return Err(Failure::NoOutput("no augmented image was written".into()));
    }
    Ok(AugmentSummary {
        written,
        failed,
        manifest: manifest_out,
    })
}

/// Ground truth from a manifest (annotated entries) or from a directory of
/// XML files.
pub fn load_ground_truth(path: &Path) -> Result<Vec<Annotation>, Failure> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Failure::Usage(format!("cannot list {}: {e}", path.display())))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "xml"))
            .collect();
        files.sort();
        files.iter().map(|p| read_xml(p).map_err(input_error)).collect()
    } else {
        let manifest = read_manifest(path).map_err(input_error)?;
        manifest
            .annotated()
            .map(|(_, a)| read_xml(&resolve(path, a)).map_err(input_error))
            .collect()
    }
}

/// Scores predictions against ground truth; writes `report.json` and
/// `report.txt`.
pub fn cmd_evaluate(ctx: &Context, predictions: &Path, ground_truth: &Path) -> Result<MetricsReport, Failure> {
    let start = Instant::now();
    let preds = read_detections(predictions).map_err(input_error)?;
    let gts = load_ground_truth(ground_truth)?;
    let ev = &ctx.config.eval;
    let report = compute_report(&preds, &gts, ev.iou_threshold, ev.score_suppress).map_err(|e| match e {
        Error::NoGroundTruth => Failure::NoOutput(e.to_string()),
        other => input_error(other),
    })?;
    write_text(&ctx.out.join(REPORT_JSON), &report.to_json())?;
    write_text(&ctx.out.join(REPORT_TEXT), &report.to_table())?;
    Line::new(&predictions.to_string_lossy(), "evaluate")
        .field("outcome", "ok")
        .field("mAP", format!("{:.4}", report.map_score))
        .field("recall", format!("{:.4}", report.recall_score))
        .elapsed(start)
        .emit();
    Ok(report)
}

/// Renders a synthetic corpus with the run seed.
pub fn cmd_synth(ctx: &Context) -> Result<CorpusSummary, Failure> {
    let start = Instant::now();
    let spec = CorpusSpec {
        seed: ctx.config.seed,
        ..ctx.config.synth.clone()
    };
    let summary = ctx
        .pool
        .install(|| generate_corpus(&spec, &ctx.out))
        .map_err(output_error)?;
    for (name, reason) in &summary.skipped {
        Line::new(name, "synth")
            .field("outcome", "skipped")
            .field("reason", reason)
            .emit();
    }
    Line::new("-", "synth")
        .field("outcome", "ok")
        .field("written", summary.written)
        .field("skipped", summary.skipped.len())
        .elapsed(start)
        .emit();
    if summary.written == 0 {
        return Err(Failure::NoOutput("no scene could be placed".into()));
    }
    Ok(summary)
}

/// synth, extract, harvest, augment and evaluate in `synth/`, `extract/`,
/// `patches/`, `augment/` and `evaluate/` below the output directory. The
/// extracted detections are evaluated against the synthetic ground truth.
pub fn cmd_pipeline(ctx: &Context) -> Result<MetricsReport, Failure> {
    write_text(&ctx.out.join(CONFIG_DUMP), &ctx.config.to_text())?;
    let synth = ctx.child("synth");
    cmd_synth(&synth)?;
    let synth_manifest = synth.out.join(MANIFEST_FILE);
    let ex = ctx.child("extract");
    let extracted = cmd_extract(&ex, &synth_manifest)?;
    let db = ctx.child("patches");
    cmd_harvest(&db, &extracted.manifest)?;
    cmd_augment(&ctx.child("augment"), &extracted.manifest, Some(&db.out))?;
    cmd_evaluate(&ctx.child("evaluate"), &extracted.detections, &synth_manifest)
}
