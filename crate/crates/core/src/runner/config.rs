use std::path::{Path, PathBuf};

use crate::data::{Dataset, SynthSpec};
use crate::error::{NialError, Result};
use crate::kv::KvMap;
use crate::model::ModelConfig;
use crate::optim::PlateauParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    Adaptive,
    Static,
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(SchedulerKind::Adaptive),
            "static" => Ok(SchedulerKind::Static),
            other => Err(format!("unknown scheduler {other:?} (adaptive|static)")),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchedulerKind::Adaptive => "adaptive",
            SchedulerKind::Static => "static",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv {
        train: PathBuf,
        val: Option<PathBuf>,
        test: Option<PathBuf>,
        expected_len: Option<usize>,
    },
    Synth(SynthSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocess {
    pub minmax: bool,
    pub standardize: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            minmax: true,
            standardize: false,
        }
    }
}

impl Preprocess {
    /// Min-max first, then z-score, each only if enabled.
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        if self.minmax {
            out = out.normalize_minmax();
        }
        if self.standardize {
            out = out.standardize();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopParams {
    pub enabled: bool,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopParams {
    fn default() -> Self {
        Self {
            enabled: true,
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

/// Everything one experiment needs. Built from flat dotted keys; see
/// [`TrainConfig::from_kv`] for the key list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data: DataSource,
    pub preprocess: Preprocess,
    pub train_frac: f64,
    pub val_frac: f64,
    /// Architecture preset; `input_len` and `n_classes` are filled in from
    /// the data unless given in `model_overrides`.
    pub model_preset: String,
    pub model_overrides: KvMap,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub scheduler: SchedulerKind,
    pub plateau: PlateauParams,
    pub early_stop: EarlyStopParams,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Record wall-clock times in logs and reports (breaks byte-identical
    /// reruns).
    pub wall_time: bool,
}

const KEYS: &[&str] = &[
    "data.train",
    "data.val",
    "data.test",
    "data.expected_len",
    "synth.classes",
    "synth.per_class",
    "synth.len",
    "synth.noise",
    "synth.seed",
    "preprocess.minmax",
    "preprocess.standardize",
    "split.train_frac",
    "split.val_frac",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.seed",
    "scheduler.kind",
    "scheduler.factor",
    "scheduler.patience",
    "scheduler.min_delta",
    "scheduler.min_lr",
    "early_stop.enabled",
    "early_stop.patience",
    "early_stop.min_delta",
    "output.dir",
    "log.wall_time",
];

const MODEL_KEYS: &[&str] = &[
    "preset",
    "input_len",
    "conv.count",
    "d_model",
    "n_heads",
    "ff_dim",
    "n_attn_layers",
    "dropout_p",
    "head_hidden",
    "n_classes",
];

const CONV_FIELDS: &[&str] = &[
    "out_channels",
    "kernel",
    "stride",
    "padding",
    "pool_window",
    "pool_stride",
];

fn known_model_key(k: &str) -> bool {
    if MODEL_KEYS.contains(&k) {
        return true;
    }
    let parts: Vec<&str> = k.split('.').collect();
    matches!(parts.as_slice(), ["conv", i, f] if i.parse::<usize>().is_ok() && CONV_FIELDS.contains(f))
}

impl TrainConfig {
    /// Reads a config file and applies `overrides` (`key=value`) on top.
    /// Relative paths resolve against the file's directory.
    pub fn from_file(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NialError::io(path, e))?;
        let mut map = KvMap::parse(&text)?;
        apply_overrides(&mut map, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_kv(&map, base)
    }

    /// Builds a config from keys (defaults in parentheses):
    ///
    /// - `data.train`, `data.val`, `data.test`, `data.expected_len`: CSV
    ///   inputs; without `data.train` a synthetic set is generated from
    ///   `synth.classes` (4), `synth.per_class` (200), `synth.len` (64),
    ///   `synth.noise` (0.05), `synth.seed` (`train.seed`)
    /// - `preprocess.minmax` (true), `preprocess.standardize` (false)
    /// - `split.train_frac` (0.8), `split.val_frac` (0.1); the remainder is
    ///   the test split, used only when `data.val` is absent
    /// - `model.preset` (mitbih | ptbdb | tiny) and `model.*` overrides
    /// - `train.epochs` (30), `train.batch_size` (32), `train.lr` (0.001),
    ///   `train.seed` (required)
    /// - `scheduler.kind` (adaptive | static), `scheduler.factor` (0.5),
    ///   `scheduler.patience` (3), `scheduler.min_delta` (1e-4),
    ///   `scheduler.min_lr` (1e-6)
    /// - `early_stop.enabled` (true), `early_stop.patience` (10),
    ///   `early_stop.min_delta` (1e-4)
    /// - `output.dir`, `log.wall_time` (false)
    pub fn from_kv(map: &KvMap, base_dir: &Path) -> Result<Self> {
        for k in map.keys() {
            let ok = KEYS.contains(&k) || k.strip_prefix("model.").is_some_and(known_model_key);
            if !ok {
                return Err(NialError::Config(format!("unknown key {k}")));
            }
        }
        let seed: u64 = map.require("train.seed")?;
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base_dir.join(p)
            } else {
                p
            }
        };
        let data = match map.get("data.train") {
            Some(train) => DataSource::Csv {
                train: resolve(train.to_string()),
                val: map.parse_opt::<String>("data.val")?.map(resolve),
                test: map.parse_opt::<String>("data.test")?.map(resolve),
                expected_len: map.parse_opt("data.expected_len")?,
            },
            None => DataSource::Synth(SynthSpec {
                n_classes: map.parse_or("synth.classes", 4)?,
                n_per_class: map.parse_or("synth.per_class", 200)?,
                len: map.parse_or("synth.len", 64)?,
                noise_sigma: map.parse_or("synth.noise", 0.05)?,
                seed: map.parse_or("synth.seed", seed)?,
            }),
        };
        let defaults = PlateauParams::default();
        let es = EarlyStopParams::default();
        let cfg = Self {
            data,
            preprocess: Preprocess {
                minmax: map.parse_or("preprocess.minmax", true)?,
                standardize: map.parse_or("preprocess.standardize", false)?,
            },
            train_frac: map.parse_or("split.train_frac", 0.8)?,
            val_frac: map.parse_or("split.val_frac", 0.1)?,
            model_preset: map.parse_or("model.preset", "mitbih".to_string())?,
            model_overrides: {
                let mut m = map.section("model");
                m.remove("preset");
                m
            },
            epochs: map.parse_or("train.epochs", 30)?,
            batch_size: map.parse_or("train.batch_size", 32)?,
            initial_lr: map.parse_or("train.lr", 1e-3)?,
            scheduler: map.parse_or("scheduler.kind", SchedulerKind::Adaptive)?,
            plateau: PlateauParams {
                factor: map.parse_or("scheduler.factor", defaults.factor)?,
                patience: map.parse_or("scheduler.patience", defaults.patience)?,
                min_delta: map.parse_or("scheduler.min_delta", defaults.min_delta)?,
                min_lr: map.parse_or("scheduler.min_lr", defaults.min_lr)?,
            },
            early_stop: EarlyStopParams {
                enabled: map.parse_or("early_stop.enabled", es.enabled)?,
                patience: map.parse_or("early_stop.patience", es.patience)?,
                min_delta: map.parse_or("early_stop.min_delta", es.min_delta)?,
            },
            seed,
            output_dir: map.parse_opt::<String>("output.dir")?.map(resolve),
            wall_time: map.parse_or("log.wall_time", false)?,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(NialError::Config(
                "train.batch_size must be at least 1".into(),
            ));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(NialError::Config("train.lr must be positive".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(NialError::Config(
                "split.train_frac must be in (0, 1)".into(),
            ));
        }
        if !(self.val_frac > 0.0 && self.train_frac + self.val_frac <= 1.0 + 1e-12) {
            return Err(NialError::Config(
                "split.val_frac must be positive with train_frac + val_frac <= 1".into(),
            ));
        }
        self.base_model(1, 1)?;
        if let DataSource::Csv {
            train, val, test, ..
        } = &self.data
        {
            for p in std::iter::once(train).chain(val).chain(test) {
                if !p.is_file() {
                    return Err(NialError::Config(format!(
                        "data file {} not found",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    fn base_model(&self, input_len: usize, n_classes: usize) -> Result<ModelConfig> {
        let base = match self.model_preset.as_str() {
            "mitbih" => ModelConfig::mitbih(),
            "ptbdb" => ModelConfig::ptbdb(),
            "tiny" => ModelConfig::tiny(input_len, n_classes),
            other => {
                return Err(NialError::Config(format!(
                    "unknown model.preset {other:?} (mitbih|ptbdb|tiny)"
                )))
            }
        };
        Ok(ModelConfig {
            input_len,
            n_classes,
            ..base
        })
    }

    /// Architecture for data with beats of `input_len` samples and
    /// `data_classes` label values. Binary data gets a single-logit head
    /// unless `model.n_classes` says otherwise.
    pub fn model_config(&self, input_len: usize, data_classes: usize) -> Result<ModelConfig> {
        let inferred = if data_classes <= 2 { 1 } else { data_classes };
        let base = self.base_model(input_len, inferred)?;
        let cfg = ModelConfig::from_kv_over(&self.model_overrides, &base)?;
        if cfg.input_len != input_len {
            return Err(NialError::Config(format!(
                "model.input_len {} but data rows have {input_len} samples",
                cfg.input_len
            )));
        }
        if cfg.label_classes() < data_classes {
            return Err(NialError::Config(format!(
                "model has {} outputs but data has {data_classes} classes",
                cfg.n_classes
            )));
        }
        Ok(cfg)
    }
}

pub fn apply_overrides(map: &mut KvMap, overrides: &[String]) -> Result<()> {
    for o in overrides {
        map.insert_assignment(o)
            .map_err(|msg| NialError::Config(format!("--set {o}: {msg}")))?;
    }
    Ok(())
}
