//! Run configuration: every setting the tool understands, as `key=value`
//! lines.
//!
//! Blank lines and `#` comments are ignored. Unknown and repeated keys are
//! errors. Keys not given keep their defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use densenet_core::{DenseNetConfig, ScheduleConfig, SynthConfig, TrainConfig, Variant};

use crate::error::{Error, Result};
use crate::fbank::FilterbankConfig;

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "variant",
    "depth",
    "blocks",
    "growth_rate",
    "compression",
    "input_channels",
    "input_height",
    "input_width",
    "num_classes",
    "first_conv_channels",
    "context_left",
    "context_right",
    "sample_rate",
    "frame_length_ms",
    "frame_shift_ms",
    "fft_size",
    "num_filters",
    "low_freq",
    "high_freq",
    "pre_emphasis",
    "log_floor",
    "initial_lr",
    "batch_size",
    "max_epochs",
    "momentum",
    "halving_factor",
    "improvement_threshold",
    "min_lr",
    "holdout_fraction",
    "seed",
    "deterministic",
    "synth_classes",
    "synth_frames_per_class",
    "synth_separation",
    "synth_utterance_frames",
    "manifest",
    "archive",
    "train_archive",
    "valid_archive",
    "eval_archive",
    "cmvn_stats",
    "checkpoint",
    "metrics_log",
];

/// Keys that describe the network itself; a checkpoint fixes these.
pub const MODEL_KEYS: &[&str] = &[
    "variant",
    "depth",
    "blocks",
    "growth_rate",
    "compression",
    "input_channels",
    "input_height",
    "input_width",
    "num_classes",
    "first_conv_channels",
    "context_left",
    "context_right",
];

const PATH_KEYS: &[&str] = &[
    "manifest",
    "archive",
    "train_archive",
    "valid_archive",
    "eval_archive",
    "cmvn_stats",
    "checkpoint",
    "metrics_log",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Output of `featurize` and `synthdata`.
    pub archive: Option<PathBuf>,
    pub train_archive: Option<PathBuf>,
    pub valid_archive: Option<PathBuf>,
    pub eval_archive: Option<PathBuf>,
    pub cmvn_stats: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub classes: usize,
    pub frames_per_class: usize,
    pub separation: f64,
    pub utterance_frames: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSettings {
            classes: d.num_classes,
            frames_per_class: d.frames_per_class,
            separation: d.separation,
            utterance_frames: d.utterance_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: DenseNetConfig,
    pub context_left: usize,
    pub context_right: usize,
    pub filterbank: FilterbankConfig,
    pub train: TrainConfig,
    /// Fraction of training utterances held out for the schedule when no
    /// validation archive is given.
    pub holdout_fraction: f64,
    pub synth: SynthSettings,
    pub paths: Paths,
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: DenseNetConfig::default(),
            context_left: 5,
            context_right: 5,
            filterbank: FilterbankConfig::default(),
            train: TrainConfig::default(),
            holdout_fraction: 0.05,
            synth: SynthSettings::default(),
            paths: Paths::default(),
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}` as {}", std::any::type_name::<T>())))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Parses configuration text over the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_relative(text, None)
    }

    /// Like [`RunConfig::parse`]; relative paths resolve against `base`.
    pub fn parse_relative(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path.parent())?;
        Ok(cfg)
    }

    /// Applies `key=value` lines without validating. Repeating a key within
    /// one text is an error.
    pub fn apply_text(&mut self, text: &str, base: Option<&Path>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected key=value", n + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, format!("line {}: key given twice", n + 1)));
            }
            self.set_relative(key, value.trim(), base)?;
        }
        Ok(())
    }

    /// Applies a single `KEY=VALUE` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like KEY=VALUE"))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_relative(key, value, None)
    }

    fn set_relative(&mut self, key: &str, v: &str, base: Option<&Path>) -> Result<()> {
        let m = &mut self.model;
        let fb = &mut self.filterbank;
        let t = &mut self.train;
        let path = || -> Option<PathBuf> {
            if v.is_empty() {
                return None;
            }
            let p = PathBuf::from(v);
            Some(match base {
                Some(b) if p.is_relative() && !b.as_os_str().is_empty() => b.join(p),
                _ => p,
            })
        };
        match key {
            "variant" => m.variant = Variant::from_str(v).map_err(|e| Error::config(key, e.to_string()))?,
            "depth" => m.depth = parse(key, v)?,
            "blocks" => m.blocks = parse(key, v)?,
            "growth_rate" => m.growth_rate = parse(key, v)?,
            "compression" => m.compression = parse(key, v)?,
            "input_channels" => m.input_channels = parse(key, v)?,
            "input_height" => m.input_height = parse(key, v)?,
            "input_width" => m.input_width = parse(key, v)?,
            "num_classes" => m.num_classes = parse(key, v)?,
            "first_conv_channels" => m.first_conv_channels = parse(key, v)?,
            "context_left" => self.context_left = parse(key, v)?,
            "context_right" => self.context_right = parse(key, v)?,
            "sample_rate" => fb.sample_rate = parse(key, v)?,
            "frame_length_ms" => fb.frame_length_ms = parse(key, v)?,
            "frame_shift_ms" => fb.frame_shift_ms = parse(key, v)?,
            "fft_size" => fb.fft_size = parse(key, v)?,
            "num_filters" => fb.num_filters = parse(key, v)?,
            "low_freq" => fb.low_freq = parse(key, v)?,
            "high_freq" => fb.high_freq = parse(key, v)?,
            "pre_emphasis" => fb.pre_emphasis = parse(key, v)?,
            "log_floor" => fb.log_floor = parse(key, v)?,
            "initial_lr" => t.initial_lr = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "max_epochs" => t.max_epochs = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "halving_factor" => t.schedule.halving_factor = parse(key, v)?,
            "improvement_threshold" => t.schedule.improvement_threshold = parse(key, v)?,
            "min_lr" => t.schedule.min_lr = parse(key, v)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "deterministic" => t.deterministic = parse_bool(key, v)?,
            "synth_classes" => self.synth.classes = parse(key, v)?,
            "synth_frames_per_class" => self.synth.frames_per_class = parse(key, v)?,
            "synth_separation" => self.synth.separation = parse(key, v)?,
            "synth_utterance_frames" => self.synth.utterance_frames = parse(key, v)?,
            "manifest" => self.paths.manifest = path(),
            "archive" => self.paths.archive = path(),
            "train_archive" => self.paths.train_archive = path(),
            "valid_archive" => self.paths.valid_archive = path(),
            "eval_archive" => self.paths.eval_archive = path(),
            "cmvn_stats" => self.paths.cmvn_stats = path(),
            "checkpoint" => self.paths.checkpoint = path(),
            "metrics_log" => self.paths.metrics_log = path(),
            _ => return Err(Error::config(key, "unknown key")),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Whether `key` was set by a config file or override rather than
    /// defaulted.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let fb = &self.filterbank;
        let t = &self.train;
        let p = &self.paths;
        Some(match key {
            "variant" => m.variant.key().to_string(),
            "depth" => m.depth.to_string(),
            "blocks" => m.blocks.to_string(),
            "growth_rate" => m.growth_rate.to_string(),
            "compression" => m.compression.to_string(),
            "input_channels" => m.input_channels.to_string(),
            "input_height" => m.input_height.to_string(),
            "input_width" => m.input_width.to_string(),
            "num_classes" => m.num_classes.to_string(),
            "first_conv_channels" => m.first_conv_channels.to_string(),
            "context_left" => self.context_left.to_string(),
            "context_right" => self.context_right.to_string(),
            "sample_rate" => fb.sample_rate.to_string(),
            "frame_length_ms" => fb.frame_length_ms.to_string(),
            "frame_shift_ms" => fb.frame_shift_ms.to_string(),
            "fft_size" => fb.fft_size.to_string(),
            "num_filters" => fb.num_filters.to_string(),
            "low_freq" => fb.low_freq.to_string(),
            "high_freq" => fb.high_freq.to_string(),
            "pre_emphasis" => fb.pre_emphasis.to_string(),
            "log_floor" => fb.log_floor.to_string(),
            "initial_lr" => t.initial_lr.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "momentum" => t.momentum.to_string(),
            "halving_factor" => t.schedule.halving_factor.to_string(),
            "improvement_threshold" => t.schedule.improvement_threshold.to_string(),
            "min_lr" => t.schedule.min_lr.to_string(),
            "holdout_fraction" => self.holdout_fraction.to_string(),
            "seed" => t.seed.to_string(),
            "deterministic" => t.deterministic.to_string(),
            "synth_classes" => self.synth.classes.to_string(),
            "synth_frames_per_class" => self.synth.frames_per_class.to_string(),
            "synth_separation" => self.synth.separation.to_string(),
            "synth_utterance_frames" => self.synth.utterance_frames.to_string(),
            "manifest" => path_text(&p.manifest),
            "archive" => path_text(&p.archive),
            "train_archive" => path_text(&p.train_archive),
            "valid_archive" => path_text(&p.valid_archive),
            "eval_archive" => path_text(&p.eval_archive),
            "cmvn_stats" => path_text(&p.cmvn_stats),
            "checkpoint" => path_text(&p.checkpoint),
            "metrics_log" => path_text(&p.metrics_log),
            _ => return None,
        })
    }

    /// Canonical text form. Floats print in shortest round-trip form, so
    /// parsing the text back yields an equal configuration.
    pub fn to_text(&self, include_paths: bool) -> String {
        KEYS.iter()
            .filter(|k| include_paths || !PATH_KEYS.contains(k))
            .map(|k| format!("{k}={}\n", self.get(k).unwrap()))
            .collect()
    }

    /// The network part only, for checkpoint headers.
    pub fn model_text(&self) -> String {
        MODEL_KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).unwrap())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.filterbank.validate()?;
        self.train.validate()?;
        let m = &self.model;
        if !matches!(m.input_channels, 1 | 3) {
            return Err(Error::config(
                "input_channels",
                format!("{} is neither 1 (static) nor 3 (static with deltas)", m.input_channels),
            ));
        }
        let height = self.context_left + 1 + self.context_right;
        if m.input_height != height {
            return Err(Error::config(
                "input_height",
                format!(
                    "{} does not equal context_left + 1 + context_right = {height}",
                    m.input_height
                ),
            ));
        }
        if m.input_width != self.filterbank.num_filters {
            return Err(Error::config(
                "input_width",
                format!("{} does not equal num_filters = {}", m.input_width, self.filterbank.num_filters),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction", format!("{} is not in [0, 1)", self.holdout_fraction)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> &ScheduleConfig {
        &self.train.schedule
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.synth.classes,
            frames_per_class: self.synth.frames_per_class,
            separation: self.synth.separation,
            channels: self.model.input_channels,
            bins: self.model.input_width,
            utterance_frames: self.synth.utterance_frames,
            seed: self.train.seed,
        }
    }

    /// `CxHxW` of the spliced network input.
    pub fn geometry(&self) -> String {
        let m = &self.model;
        format!("{}x{}x{}, {} classes", m.input_channels, m.input_height, m.input_width, m.num_classes)
    }
}
