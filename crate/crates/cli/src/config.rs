//! Run configuration: `[section]` / `key = value` text files, CLI
//! overrides, and the resolved-config echo.
//!
//! Every accepted key lives in the table below with its default and a
//! one-line description; `--help` and the echo are generated from it.
//! Unknown keys are rejected with the offending line number.

use sfpp_core::codec::QualityMode;
use sfpp_core::loss::LossConfig;
use sfpp_core::model::ModelConfig;
use sfpp_core::synth::{Dynamics, WorldConfig};
use sfpp_core::track::{PenaltyMode, PostprocConfig, SizeDef, WindowMode};
use sfpp_core::train::TrainConfig;
use sfpp_core::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

/// The single source of truth for accepted keys.
pub const KEYS: &[KeySpec] = &[
    KeySpec { section: "run", key: "seed", default: "1", doc: "master seed; SFPP_SEED env and --seed override" },
    KeySpec { section: "run", key: "jobs", default: "1", doc: "sequence-level parallelism for track/eval" },
    KeySpec { section: "model", key: "template_size", default: "64", doc: "template patch side, px" },
    KeySpec { section: "model", key: "search_size", default: "128", doc: "search patch side, px" },
    KeySpec { section: "model", key: "stride", default: "8", doc: "total backbone stride (fixed by the architecture)" },
    KeySpec { section: "model", key: "backbone_channels", default: "16,32,32,32", doc: "output channels of the four backbone convs" },
    KeySpec { section: "model", key: "head_tower_depth", default: "2", doc: "3x3 convs after correlation, 1..=3" },
    KeySpec { section: "model", key: "crop_border", default: "0", doc: "border cropped from the backbone output (deep-backbone trick: 4)" },
    KeySpec { section: "model", key: "quality_mode", default: "pss", doc: "quality branch target: pss | iou | none" },
    KeySpec { section: "loss", key: "lambda", default: "1.0", doc: "weight of the quality and regression terms" },
    KeySpec { section: "loss", key: "focal_gamma", default: "2.0", doc: "focal loss focusing exponent" },
    KeySpec { section: "loss", key: "focal_alpha", default: "0.25", doc: "focal loss positive-class weight" },
    KeySpec { section: "loss", key: "n_pos_floor", default: "1", doc: "lower bound of the positive-count normalizer" },
    KeySpec { section: "train", key: "base_lr", default: "2e-3", doc: "peak learning rate after warmup" },
    KeySpec { section: "train", key: "warmup_start_lr", default: "1e-7", doc: "learning rate at step 0" },
    KeySpec { section: "train", key: "warmup_epochs", default: "1", doc: "linear warmup epochs" },
    KeySpec { section: "train", key: "total_epochs", default: "6", doc: "total epochs (warmup + cosine annealing)" },
    KeySpec { section: "train", key: "pairs_per_epoch", default: "2000", doc: "training pairs per epoch" },
    KeySpec { section: "train", key: "momentum", default: "0.9", doc: "SGD momentum" },
    KeySpec { section: "train", key: "batch_size", default: "8", doc: "pairs per optimizer step (gradient averaging)" },
    KeySpec { section: "train", key: "freeze", default: "", doc: "comma list of parameter-name prefixes to freeze" },
    KeySpec { section: "train", key: "max_interval", default: "20", doc: "max frame gap when sampling pairs" },
    KeySpec { section: "train", key: "negative_ratio", default: "0.1", doc: "fraction of negative pairs" },
    KeySpec { section: "train", key: "aug_max_shift", default: "8", doc: "uniform shift augmentation bound, px" },
    KeySpec { section: "train", key: "aug_scale_min", default: "0.85", doc: "uniform scale augmentation lower bound" },
    KeySpec { section: "train", key: "aug_scale_max", default: "1.18", doc: "uniform scale augmentation upper bound" },
    KeySpec { section: "track", key: "penalty_k", default: "0.04", doc: "scale/ratio penalty strength k" },
    KeySpec { section: "track", key: "window_influence", default: "0.3", doc: "cosine window influence in [0,1]" },
    KeySpec { section: "track", key: "size_lr", default: "0.4", doc: "target size interpolation rate in [0,1]" },
    KeySpec { section: "track", key: "window_mode", default: "hann", doc: "hann | verbatim" },
    KeySpec { section: "track", key: "penalty_mode", default: "normalized", doc: "normalized | verbatim" },
    KeySpec { section: "track", key: "size_def", default: "padded_sqrt", doc: "penalty size measure: padded_sqrt | area" },
    KeySpec { section: "world", key: "frame_w", default: "160", doc: "frame width, px" },
    KeySpec { section: "world", key: "frame_h", default: "160", doc: "frame height, px" },
    KeySpec { section: "world", key: "length", default: "60", doc: "frames per sequence" },
    KeySpec { section: "world", key: "textures", default: "8", doc: "size of the texture family" },
    KeySpec { section: "world", key: "init_size_min", default: "26", doc: "initial object side lower bound, px" },
    KeySpec { section: "world", key: "init_size_max", default: "46", doc: "initial object side upper bound, px" },
    KeySpec { section: "world", key: "size_min", default: "16", doc: "object side clamp, lower" },
    KeySpec { section: "world", key: "size_max", default: "72", doc: "object side clamp, upper" },
    KeySpec { section: "world", key: "translation_sigma", default: "2.5", doc: "per-frame center step std-dev, px" },
    KeySpec { section: "world", key: "log_scale_sigma", default: "0.02", doc: "per-frame log-area step std-dev" },
    KeySpec { section: "world", key: "log_ratio_sigma", default: "0.015", doc: "per-frame log-ratio step std-dev" },
    KeySpec { section: "world", key: "distractors", default: "2", doc: "distractor objects per sequence" },
    KeySpec { section: "world", key: "train_sequences", default: "32", doc: "sequences in the training world" },
    KeySpec { section: "world", key: "eval_sequences", default: "20", doc: "held-out sequences for evaluation" },
    KeySpec { section: "ablate", key: "anchor_ratios", default: "0.5,1,2", doc: "anchor aspect ratios (w/h) for the maxout variant" },
    KeySpec { section: "ablate", key: "anchor_scale", default: "32", doc: "anchor side scale, label-frame px" },
];

/// Fully-resolved key/value view plus typed accessors.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
}

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|k| k.section == section && k.key == key)
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut values = BTreeMap::new();
        for k in KEYS {
            values.insert((k.section.to_string(), k.key.to_string()), k.default.to_string());
        }
        RunConfig { values }
    }
}

impl RunConfig {
    /// Parses a config file over the defaults.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let text = std::fs::read_to_string(path)?;
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if section.is_empty() {
                return Err(err(format!("key {key} before any [section]")));
            }
            if !known(&section, key) {
                return Err(err(format!("unknown key {section}.{key}")));
            }
            cfg.values.insert((section.clone(), key.to_string()), value.trim().to_string());
        }
        Ok(cfg)
    }

    /// Applies a `section.key=value` override (CLI flag).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let bad = |detail: String| Error::Invalid { what: "--set", detail };
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| bad(format!("expected section.key=value, got {assignment:?}")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| bad(format!("expected section.key=value, got {assignment:?}")))?;
        if !known(section, key) {
            return Err(bad(format!("unknown key {section}.{key}")));
        }
        self.values
            .insert((section.to_string(), key.to_string()), value.trim().to_string());
        Ok(())
    }

    fn raw(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {section}.{key} missing from table"))
    }

    fn parse_err(&self, section: &str, key: &str, detail: String) -> Error {
        Error::Invalid { what: "config value", detail: format!("{section}.{key}: {detail}") }
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        let raw = self.raw(section, key);
        raw.parse().map_err(|e| self.parse_err(section, key, format!("{raw:?}: {e}")))
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        let raw = self.raw(section, key);
        raw.parse().map_err(|e| self.parse_err(section, key, format!("{raw:?}: {e}")))
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64> {
        let raw = self.raw(section, key);
        raw.parse().map_err(|e| self.parse_err(section, key, format!("{raw:?}: {e}")))
    }

    pub fn list_f64(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(section, key);
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| self.parse_err(section, key, format!("{s:?}: {e}")))
            })
            .collect()
    }

    pub fn list_usize(&self, section: &str, key: &str) -> Result<Vec<usize>> {
        Ok(self.list_f64(section, key)?.into_iter().map(|v| v as usize).collect())
    }

    pub fn list_string(&self, section: &str, key: &str) -> Vec<String> {
        self.raw(section, key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("run", "seed")
    }

    pub fn jobs(&self) -> Result<usize> {
        Ok(self.usize("run", "jobs")?.max(1))
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let quality_mode = QualityMode::parse(self.raw("model", "quality_mode"))?;
        let cfg = ModelConfig {
            backbone_channels: self.list_usize("model", "backbone_channels")?,
            stride: self.usize("model", "stride")?,
            template_size: self.usize("model", "template_size")?,
            search_size: self.usize("model", "search_size")?,
            head_tower_depth: self.usize("model", "head_tower_depth")?,
            crop_border: self.usize("model", "crop_border")?,
            quality_mode,
            quality_head: quality_mode != QualityMode::Off,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss(&self) -> Result<LossConfig> {
        let cfg = LossConfig {
            lambda_weight: self.f64("loss", "lambda")?,
            focal_gamma: self.f64("loss", "focal_gamma")?,
            focal_alpha: self.f64("loss", "focal_alpha")?,
            n_pos_floor: self.usize("loss", "n_pos_floor")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            base_lr: self.f64("train", "base_lr")?,
            warmup_start_lr: self.f64("train", "warmup_start_lr")?,
            warmup_epochs: self.usize("train", "warmup_epochs")?,
            total_epochs: self.usize("train", "total_epochs")?,
            pairs_per_epoch: self.usize("train", "pairs_per_epoch")?,
            momentum: self.f64("train", "momentum")?,
            batch_size: self.usize("train", "batch_size")?,
            seed: self.seed()?,
            freeze: self.list_string("train", "freeze"),
            max_interval: self.usize("train", "max_interval")?,
            negative_ratio: self.f64("train", "negative_ratio")?,
            aug_max_shift: self.f64("train", "aug_max_shift")?,
            aug_scale_range: (self.f64("train", "aug_scale_min")?, self.f64("train", "aug_scale_max")?),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn postproc(&self) -> Result<PostprocConfig> {
        let window_mode = match self.raw("track", "window_mode") {
            "hann" => WindowMode::StandardHann,
            "verbatim" => WindowMode::Verbatim,
            other => {
                return Err(self.parse_err("track", "window_mode", format!("{other:?} (hann | verbatim)")))
            }
        };
        let penalty_mode = match self.raw("track", "penalty_mode") {
            "normalized" => PenaltyMode::Normalized,
            "verbatim" => PenaltyMode::Verbatim,
            other => {
                return Err(self.parse_err(
                    "track",
                    "penalty_mode",
                    format!("{other:?} (normalized | verbatim)"),
                ))
            }
        };
        let size_def = match self.raw("track", "size_def") {
            "padded_sqrt" => SizeDef::PaddedSqrt,
            "area" => SizeDef::Area,
            other => {
                return Err(self.parse_err("track", "size_def", format!("{other:?} (padded_sqrt | area)")))
            }
        };
        let cfg = PostprocConfig {
            k: self.f64("track", "penalty_k")?,
            omega: self.f64("track", "window_influence")?,
            alpha: self.f64("track", "size_lr")?,
            window_mode,
            penalty_mode,
            size_def,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn world(&self) -> Result<WorldConfig> {
        Ok(WorldConfig {
            frame_h: self.usize("world", "frame_h")?,
            frame_w: self.usize("world", "frame_w")?,
            length: self.usize("world", "length")?,
            textures: self.usize("world", "textures")?,
            init_size: (self.f64("world", "init_size_min")?, self.f64("world", "init_size_max")?),
            size_bounds: (self.f64("world", "size_min")?, self.f64("world", "size_max")?),
            dynamics: Dynamics {
                translation_sigma: self.f64("world", "translation_sigma")?,
                log_scale_sigma: self.f64("world", "log_scale_sigma")?,
                log_ratio_sigma: self.f64("world", "log_ratio_sigma")?,
                distractors: self.usize("world", "distractors")?,
            },
        })
    }

    pub fn anchors(&self) -> Result<sfpp_core::anchor::AnchorConfig> {
        Ok(sfpp_core::anchor::AnchorConfig {
            ratios: self.list_f64("ablate", "anchor_ratios")?,
            scales: vec![self.f64("ablate", "anchor_scale")?],
            pos_iou: 0.5,
        })
    }

    /// Disjoint seed bases for the train and eval worlds.
    pub fn world_seeds(&self) -> Result<(u64, u64)> {
        let seed = self.seed()?;
        Ok((seed.wrapping_mul(1000), seed.wrapping_mul(1000).wrapping_add(500_000)))
    }

    /// Canonical text form of the resolved configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for spec in KEYS {
            if spec.section != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", spec.section);
                section = spec.section;
            }
            let v = self.raw(spec.section, spec.key);
            let _ = writeln!(out, "{} = {}", spec.key, v);
        }
        out
    }

    /// Help text listing every key with its default.
    pub fn help_keys() -> String {
        let mut out = String::new();
        let mut section = "";
        for spec in KEYS {
            if spec.section != section {
                let _ = writeln!(out, "  [{}]", spec.section);
                section = spec.section;
            }
            let _ = writeln!(out, "    {:<20} default {:<12} {}", spec.key, spec.default, spec.doc);
        }
        out
    }
}
