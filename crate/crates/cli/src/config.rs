//! Flat `key = value` configuration for every stage.
//!
//! Keys are namespaced by stage (`extract.*`, `confirm.*`, `occlude.*`,
//! `eval.*`, `synth.*`) plus the top-level `seed` and `workers`. Lines
//! starting with `#` are comments. Unknown keys are errors, and the whole
//! configuration is validated after all overrides are applied.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use countbox::extract::{ExtractConfig, MergeMode};
use countbox::occlusion::{BackgroundModel, Direction, OcclusionMode, DEFAULT_MASK_TOLERANCE};
use countbox::synth::CorpusSpec;
use countbox::Rgb8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    Baseline,
    External,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::Baseline => "baseline",
            ScorerKind::External => "external",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSection {
    pub params: ExtractConfig,
    /// Long side images are shrunk to before proposing; 0 disables.
    pub resize_long_side: u32,
    /// Confirm single-object images too, even when their label is known.
    pub force_confirm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmSection {
    pub score_threshold: f64,
    pub temperature: f64,
    pub keep_partial: bool,
    pub scorer: ScorerKind,
    pub external_dir: Option<PathBuf>,
    pub poll_ms: u64,
    pub timeout_ms: u64,
    /// Label file for single-object images; defaults to `labels.tsv` next
    /// to the input manifest.
    pub labels: Option<PathBuf>,
    /// Empty means every category seen in the label file.
    pub valid_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccludeSection {
    pub modes: Vec<OcclusionMode>,
    pub directions: Vec<Direction>,
    pub coverage_min: f64,
    pub coverage_max: f64,
    pub mask_tolerance: u8,
    /// `None` estimates the background from each crop's border.
    pub background: Option<Rgb8>,
}

impl OccludeSection {
    pub fn background_model(&self) -> BackgroundModel {
        match self.background {
            Some(color) => BackgroundModel::Fixed {
                color,
                tolerance: self.mask_tolerance,
            },
            None => BackgroundModel::BorderMedian {
                tolerance: self.mask_tolerance,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub iou_threshold: f64,
    pub score_suppress: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// 0 uses every available CPU.
    pub workers: usize,
    pub synth: CorpusSpec,
    pub extract: ExtractSection,
    pub confirm: ConfirmSection,
    pub occlude: OccludeSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            synth: CorpusSpec {
                singles_per_category: 2,
                ..CorpusSpec::default()
            },
            extract: ExtractSection {
                params: ExtractConfig::default(),
                resize_long_side: 640,
                force_confirm: false,
            },
            confirm: ConfirmSection {
                score_threshold: 0.8,
                temperature: countbox::confirm::DEFAULT_TEMPERATURE,
                keep_partial: false,
                scorer: ScorerKind::Baseline,
                external_dir: None,
                poll_ms: 200,
                timeout_ms: 600_000,
                labels: None,
                valid_labels: Vec::new(),
            },
            occlude: OccludeSection {
                modes: OcclusionMode::ALL.to_vec(),
                directions: Direction::ALL.to_vec(),
                coverage_min: 0.2,
                coverage_max: 0.5,
                mask_tolerance: DEFAULT_MASK_TOLERANCE,
                background: None,
            },
            eval: EvalSection {
                iou_threshold: 0.5,
                score_suppress: None,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_rgb(key: &str, value: &str) -> Result<Rgb8, ConfigError> {
    let v: Vec<u8> = parse_list(key, value)?;
    <[u8; 3]>::try_from(v).map_err(|_| ConfigError(format!("{key}: expected r,g,b, got `{value}`")))
}

fn parse_off<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError> {
    if value == "off" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let k = key;
        let ex = &mut self.extract;
        let cf = &mut self.confirm;
        let oc = &mut self.occlude;
        let sy = &mut self.synth;
        match key {
            "seed" => self.seed = parse(k, value)?,
            "workers" => self.workers = parse(k, value)?,

            "synth.count" => sy.count = parse(k, value)?,
            "synth.width" => sy.canvas_width = parse(k, value)?,
            "synth.height" => sy.canvas_height = parse(k, value)?,
            "synth.background" => sy.background = parse_rgb(k, value)?,
            "synth.noise" => sy.noise = parse(k, value)?,
            "synth.categories" => sy.categories = parse(k, value)?,
            "synth.sprites_per_category" => sy.sprites_per_category = parse(k, value)?,
            "synth.sprite_min" => sy.sprite_min = parse(k, value)?,
            "synth.sprite_max" => sy.sprite_max = parse(k, value)?,
            "synth.n_values" => sy.n_values = parse_list(k, value)?,
            "synth.min_gap" => sy.min_gap = parse(k, value)?,
            "synth.singles_per_category" => sy.singles_per_category = parse(k, value)?,

            "extract.initial_iou_threshold" => ex.params.initial_iou_threshold = parse(k, value)?,
            "extract.iou_threshold_max" => ex.params.iou_threshold_max = parse(k, value)?,
            "extract.area_min" => ex.params.area_min = parse(k, value)?,
            "extract.aspect_max" => ex.params.aspect_max = parse(k, value)?,
            "extract.area_max_fraction" => ex.params.area_max_fraction = parse(k, value)?,
            "extract.max_iterations" => ex.params.max_iterations = parse(k, value)?,
            "extract.merge_mode" => {
                ex.params.merge_mode = value.parse().map_err(|e: countbox::Error| ConfigError(format!("{k}: {e}")))?
            }
            "extract.segment_scale" => ex.params.proposal.segment.scale = parse(k, value)?,
            "extract.segment_sigma" => ex.params.proposal.segment.sigma = parse(k, value)?,
            "extract.segment_min_size" => ex.params.proposal.segment.min_size = parse(k, value)?,
            "extract.similarity" => {
                let parts: Vec<String> = parse_list(k, value)?;
                let w = &mut ex.params.proposal.similarity;
                (w.color, w.texture, w.size, w.fill) = (false, false, false, false);
                for p in parts {
                    match p.as_str() {
                        "color" => w.color = true,
                        "texture" => w.texture = true,
                        "size" => w.size = true,
                        "fill" => w.fill = true,
                        other => return Err(ConfigError(format!("{k}: unknown component `{other}`"))),
                    }
                }
            }
            "extract.resize_long_side" => ex.resize_long_side = parse(k, value)?,
            "extract.force_confirm" => ex.force_confirm = parse_bool(k, value)?,

            "confirm.score_threshold" => cf.score_threshold = parse(k, value)?,
            "confirm.temperature" => cf.temperature = parse(k, value)?,
            "confirm.keep_partial" => cf.keep_partial = parse_bool(k, value)?,
            "confirm.scorer" => {
                cf.scorer = match value {
                    "baseline" => ScorerKind::Baseline,
                    "external" => ScorerKind::External,
                    _ => return Err(ConfigError(format!("{k}: expected baseline or external, got `{value}`"))),
                }
            }
            "confirm.external_dir" => cf.external_dir = Some(PathBuf::from(value)),
            "confirm.poll_ms" => cf.poll_ms = parse(k, value)?,
            "confirm.timeout_ms" => cf.timeout_ms = parse(k, value)?,
            "confirm.labels" => cf.labels = Some(PathBuf::from(value)),
            "confirm.valid_labels" => cf.valid_labels = parse_list(k, value)?,

            "occlude.modes" => {
                oc.modes = parse_list::<String>(k, value)?
                    .iter()
                    .map(|s| s.parse().map_err(|e: countbox::Error| ConfigError(format!("{k}: {e}"))))
                    .collect::<Result<_, _>>()?
            }
            "occlude.directions" => {
                oc.directions = parse_list::<String>(k, value)?
                    .iter()
                    .map(|s| s.parse().map_err(|e: countbox::Error| ConfigError(format!("{k}: {e}"))))
                    .collect::<Result<_, _>>()?
            }
            "occlude.coverage_min" => oc.coverage_min = parse(k, value)?,
            "occlude.coverage_max" => oc.coverage_max = parse(k, value)?,
            "occlude.mask_tolerance" => oc.mask_tolerance = parse(k, value)?,
            "occlude.background" => {
                oc.background = if value == "border" {
                    None
                } else {
                    Some(parse_rgb(k, value)?)
                }
            }

            "eval.iou_threshold" => self.eval.iou_threshold = parse(k, value)?,
            "eval.score_suppress" => self.eval.score_suppress = parse_off(k, value)?,

            _ => return Err(ConfigError(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!("{origin}:{}: expected `key = value`", i + 1)));
            };
            self.set(key.trim(), value)
                .map_err(|e| ConfigError(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override `{kv}` is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        self.extract
            .params
            .validate()
            .map_err(|e| ConfigError(format!("extract: {e}")))?;
        self.synth.validate().map_err(|e| ConfigError(format!("synth: {e}")))?;
        let cf = &self.confirm;
        if !(0.0..=1.0).contains(&cf.score_threshold) {
            return bad(format!("confirm.score_threshold {} outside [0, 1]", cf.score_threshold));
        }
        if !(cf.temperature > 0.0 && cf.temperature.is_finite()) {
            return bad(format!("confirm.temperature must be positive, got {}", cf.temperature));
        }
        if cf.scorer == ScorerKind::External && cf.external_dir.is_none() {
            return bad("confirm.scorer = external needs confirm.external_dir".into());
        }
        if cf.poll_ms == 0 {
            return bad("confirm.poll_ms must be >= 1".into());
        }
        let oc = &self.occlude;
        if oc.modes.is_empty() || oc.directions.is_empty() {
            return bad("occlude.modes and occlude.directions must be non-empty".into());
        }
        if !(oc.coverage_min > 0.0 && oc.coverage_min <= oc.coverage_max && oc.coverage_max <= 1.0) {
            return bad(format!(
                "need 0 < occlude.coverage_min ({}) <= occlude.coverage_max ({}) <= 1",
                oc.coverage_min, oc.coverage_max
            ));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold < 1.0) {
            return bad(format!("eval.iou_threshold {} outside (0, 1)", self.eval.iou_threshold));
        }
        if let Some(s) = self.eval.score_suppress {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("eval.score_suppress {s} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Every key except `workers` with its current value, in a form
    /// [`apply_text`] accepts. Worker count never changes outputs, so it is
    /// left out of the dump written next to pipeline results.
    ///
    /// [`apply_text`]: PipelineConfig::apply_text
    pub fn to_text(&self) -> String {
        let ex = &self.extract;
        let p = &ex.params;
        let w = p.proposal.similarity;
        let cf = &self.confirm;
        let oc = &self.occlude;
        let sy = &self.synth;
        let sim: Vec<&str> = [("color", w.color), ("texture", w.texture), ("size", w.size), ("fill", w.fill)]
            .into_iter()
            .filter_map(|(n, on)| on.then_some(n))
            .collect();
        let merge = match p.merge_mode {
            MergeMode::Union => "union",
            MergeMode::Representative => "representative",
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut rows: Vec<(&str, Option<String>)> = vec![
            ("seed", Some(self.seed.to_string())),
            ("synth.count", Some(sy.count.to_string())),
            ("synth.width", Some(sy.canvas_width.to_string())),
            ("synth.height", Some(sy.canvas_height.to_string())),
            ("synth.background", Some(join(&sy.background))),
            ("synth.noise", Some(sy.noise.to_string())),
            ("synth.categories", Some(sy.categories.to_string())),
            ("synth.sprites_per_category", Some(sy.sprites_per_category.to_string())),
            ("synth.sprite_min", Some(sy.sprite_min.to_string())),
            ("synth.sprite_max", Some(sy.sprite_max.to_string())),
            ("synth.n_values", Some(join(&sy.n_values))),
            ("synth.min_gap", Some(sy.min_gap.to_string())),
            ("synth.singles_per_category", Some(sy.singles_per_category.to_string())),
            ("extract.initial_iou_threshold", Some(p.initial_iou_threshold.to_string())),
            ("extract.iou_threshold_max", Some(p.iou_threshold_max.to_string())),
            ("extract.area_min", Some(p.area_min.to_string())),
            ("extract.aspect_max", Some(p.aspect_max.to_string())),
            ("extract.area_max_fraction", Some(p.area_max_fraction.to_string())),
            ("extract.max_iterations", Some(p.max_iterations.to_string())),
            ("extract.merge_mode", Some(merge.to_string())),
            ("extract.segment_scale", Some(p.proposal.segment.scale.to_string())),
            ("extract.segment_sigma", Some(p.proposal.segment.sigma.to_string())),
            ("extract.segment_min_size", Some(p.proposal.segment.min_size.to_string())),
            ("extract.similarity", Some(sim.join(","))),
            ("extract.resize_long_side", Some(ex.resize_long_side.to_string())),
            ("extract.force_confirm", Some(ex.force_confirm.to_string())),
            ("confirm.score_threshold", Some(cf.score_threshold.to_string())),
            ("confirm.temperature", Some(cf.temperature.to_string())),
            ("confirm.keep_partial", Some(cf.keep_partial.to_string())),
            ("confirm.scorer", Some(cf.scorer.to_string())),
            ("confirm.external_dir", path(&cf.external_dir)),
            ("confirm.poll_ms", Some(cf.poll_ms.to_string())),
            ("confirm.timeout_ms", Some(cf.timeout_ms.to_string())),
            ("confirm.labels", path(&cf.labels)),
            ("confirm.valid_labels", (!cf.valid_labels.is_empty()).then(|| cf.valid_labels.join(","))),
            ("occlude.modes", Some(join(&oc.modes))),
            ("occlude.directions", Some(join(&oc.directions))),
            ("occlude.coverage_min", Some(oc.coverage_min.to_string())),
            ("occlude.coverage_max", Some(oc.coverage_max.to_string())),
            ("occlude.mask_tolerance", Some(oc.mask_tolerance.to_string())),
            (
                "occlude.background",
                Some(oc.background.map_or_else(|| "border".to_string(), |c| join(&c))),
            ),
            ("eval.iou_threshold", Some(self.eval.iou_threshold.to_string())),
            (
                "eval.score_suppress",
                Some(self.eval.score_suppress.map_or_else(|| "off".to_string(), |s| s.to_string())),
            ),
        ];
        let mut s = String::new();
        for (k, v) in rows.drain(..) {
            match v {
                Some(v) => {
                    let _ = writeln!(s, "{k} = {v}");
                }
                None => {
                    let _ = writeln!(s, "# {k} unset");
                }
            }
        }
        s
    }
}
