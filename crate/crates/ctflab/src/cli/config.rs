//! Experiment configuration: a plain-text sectioned key–value format with
//! strict validation, plus the canonical serialization used for hashing.
//!
//! Grammar, line by line:
//! - blank lines and lines starting with `#` are ignored;
//! - `[section]` opens a section (`dataset`, `detector`, `augment`,
//!   `optim`, `ctf`, `run`);
//! - `key = value` sets `section.key`; a dotted `section.key = value` works
//!   anywhere, with or without an open section;
//! - every key must be one the program knows — unknown keys are errors with
//!   their line number, so typos can never pass silently.

use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::ctf::{CtfConfig, Representative, ResetPolicy};
use crate::detector::config::DetectorConfig;
use crate::error::{Error, Result};
use crate::synthdata::augment::AugmentationSpec;
use crate::synthdata::generate::DatasetConfig;

/// Which augmentation preset a view stream uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugPreset {
    Identity,
    Labeled,
    Weak,
    Strong,
}

impl AugPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            AugPreset::Identity => "identity",
            AugPreset::Labeled => "labeled",
            AugPreset::Weak => "weak",
            AugPreset::Strong => "strong",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(AugPreset::Identity),
            "labeled" => Some(AugPreset::Labeled),
            "weak" => Some(AugPreset::Weak),
            "strong" => Some(AugPreset::Strong),
            _ => None,
        }
    }

    /// Materializes the preset for a canvas size.
    pub fn spec(self, image_size: usize) -> AugmentationSpec {
        match self {
            AugPreset::Identity => AugmentationSpec::identity(),
            AugPreset::Labeled => AugmentationSpec::labeled(image_size),
            AugPreset::Weak => AugmentationSpec::weak(image_size),
            AugPreset::Strong => AugmentationSpec::strong(image_size),
        }
    }
}

/// Everything one experiment needs: data, model shape, view pipelines,
/// training loop settings, and where outputs go. One global seed drives
/// dataset generation and every training-time random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub trunk_channels: Vec<usize>,
    pub labeled_aug: AugPreset,
    pub weak_aug: AugPreset,
    pub strong_aug: AugPreset,
    pub ctf: CtfConfig,
    pub seed: u64,
    pub burn_in_iters: u64,
    pub burn_in_batch: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = ExperimentConfig {
            dataset: DatasetConfig::default(),
            trunk_channels: vec![8, 16, 32],
            labeled_aug: AugPreset::Labeled,
            weak_aug: AugPreset::Weak,
            strong_aug: AugPreset::Strong,
            ctf: CtfConfig { eval_every: 50, ..CtfConfig::default() },
            seed: 0,
            burn_in_iters: 500,
            burn_in_batch: 4,
            output_dir: PathBuf::from("runs/default"),
        };
        cfg.apply_seed();
        cfg
    }
}

impl ExperimentConfig {
    fn apply_seed(&mut self) {
        self.dataset.master_seed = self.seed;
        self.ctf.master_seed = self.seed;
    }

    /// Detector implied by the dataset shape and trunk channels.
    pub fn detector(&self) -> Result<DetectorConfig> {
        DetectorConfig::for_image_size(
            self.dataset.image_size,
            self.dataset.num_classes,
            self.trunk_channels.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.detector()?;
        self.ctf.validate()?;
        if self.burn_in_batch == 0 {
            return Err(Error::InvalidConfig("run.burn_in_batch must be at least 1".to_string()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("run.output_dir must not be empty".to_string()));
        }
        Ok(())
    }

    /// The canonical text form: every key in a fixed order, so two configs
    /// are equal exactly when their canonical strings are equal. This is
    /// the byte stream the config hash is computed over.
    pub fn canonical_string(&self) -> String {
        let list = |xs: &[usize]| {
            xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        };
        let seeds =
            self.ctf.pair_seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let reset = match self.ctf.reset_policy {
            ResetPolicy::Reset => "reset",
            ResetPolicy::Continue => "continue",
        };
        let representative = match self.ctf.representative {
            Representative::Teacher => "teacher",
            Representative::Student => "student",
        };
        format!(
            "dataset.image_size = {}\n\
             dataset.num_classes = {}\n\
             dataset.n_labeled = {}\n\
             dataset.n_unlabeled = {}\n\
             dataset.n_val = {}\n\
             dataset.min_objects = {}\n\
             dataset.max_objects = {}\n\
             detector.trunk_channels = {}\n\
             augment.labeled = {}\n\
             augment.weak = {}\n\
             augment.strong = {}\n\
             optim.learning_rate = {}\n\
             optim.momentum = {}\n\
             optim.weight_decay = {}\n\
             ctf.num_pairs = {}\n\
             ctf.pair_seeds = {}\n\
             ctf.stage_length = {}\n\
             ctf.max_iter = {}\n\
             ctf.lambda_u = {}\n\
             ctf.beta = {}\n\
             ctf.ema_rate = {}\n\
             ctf.pseudo_threshold = {}\n\
             ctf.reset_policy = {}\n\
             ctf.representative = {}\n\
             ctf.labeled_batch = {}\n\
             ctf.unlabeled_batch = {}\n\
             ctf.eval_every = {}\n\
             ctf.verify_no_backprop = {}\n\
             run.seed = {}\n\
             run.burn_in_iters = {}\n\
             run.burn_in_batch = {}\n\
             run.output_dir = {}\n",
            self.dataset.image_size,
            self.dataset.num_classes,
            self.dataset.n_labeled,
            self.dataset.n_unlabeled,
            self.dataset.n_val,
            self.dataset.min_objects,
            self.dataset.max_objects,
            list(&self.trunk_channels),
            self.labeled_aug.as_str(),
            self.weak_aug.as_str(),
            self.strong_aug.as_str(),
            self.ctf.optim.learning_rate,
            self.ctf.optim.momentum,
            self.ctf.optim.weight_decay,
            self.ctf.num_pairs,
            seeds,
            self.ctf.stage_length,
            self.ctf.max_iter,
            self.ctf.lambda_u,
            self.ctf.beta,
            self.ctf.ema_rate,
            self.ctf.pseudo_threshold,
            reset,
            representative,
            self.ctf.labeled_batch,
            self.ctf.unlabeled_batch,
            self.ctf.eval_every,
            self.ctf.verify_no_backprop,
            self.seed,
            self.burn_in_iters,
            self.burn_in_batch,
            self.output_dir.display(),
        )
    }

    /// SHA-256 of the canonical string; stored in checkpoints so a resumed
    /// run can detect that it was launched with a different configuration.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.canonical_string().as_bytes());
        h.finalize().into()
    }
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::ConfigParse { line, detail: detail.into() }
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| parse_err(line, format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| parse_err(line, format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| parse_err(line, format!("{key}: expected a number, got {v:?}")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("{key}: value must be finite, got {v:?}")));
    }
    Ok(x)
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(line, format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_usize_list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|part| parse_usize(line, key, part.trim()))
        .collect()
}

fn parse_u64_list(line: usize, key: &str, v: &str) -> Result<Vec<u64>> {
    v.split(',')
        .map(|part| parse_u64(line, key, part.trim()))
        .collect()
}

fn parse_preset(line: usize, key: &str, v: &str) -> Result<AugPreset> {
    AugPreset::parse(v).ok_or_else(|| {
        parse_err(line, format!("{key}: expected identity|labeled|weak|strong, got {v:?}"))
    })
}

const SECTIONS: [&str; 6] = ["dataset", "detector", "augment", "optim", "ctf", "run"];

/// Parses a config file, starting from the full defaults. Either every line
/// applies and the complete result validates, or an error pinpointing the
/// offending line is returned and no configuration is produced at all.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, format!("unterminated section header {content:?}")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(parse_err(
                    line,
                    format!("unknown section [{name}]; expected one of {SECTIONS:?}"),
                ));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key_part, value) = content
            .split_once('=')
            .ok_or_else(|| parse_err(line, format!("expected `key = value`, got {content:?}")))?;
        let key_part = key_part.trim();
        let value = value.trim();
        if key_part.is_empty() {
            return Err(parse_err(line, "empty key"));
        }
        let full_key = if key_part.contains('.') {
            key_part.to_string()
        } else {
            match &section {
                Some(s) => format!("{s}.{key_part}"),
                None => {
                    return Err(parse_err(
                        line,
                        format!("key {key_part:?} outside any section; open a [section] or use a dotted key"),
                    ))
                }
            }
        };
        apply_key(&mut cfg, line, &full_key, value)?;
    }
    cfg.apply_seed();
    cfg.validate().map_err(|e| match e {
        Error::ConfigParse { .. } => e,
        other => Error::InvalidConfig(format!("configuration is inconsistent: {other}")),
    })?;
    Ok(cfg)
}

fn apply_key(cfg: &mut ExperimentConfig, line: usize, key: &str, v: &str) -> Result<()> {
    match key {
        "dataset.image_size" => cfg.dataset.image_size = parse_usize(line, key, v)?,
        "dataset.num_classes" => cfg.dataset.num_classes = parse_usize(line, key, v)?,
        "dataset.n_labeled" => cfg.dataset.n_labeled = parse_usize(line, key, v)?,
        "dataset.n_unlabeled" => cfg.dataset.n_unlabeled = parse_usize(line, key, v)?,
        "dataset.n_val" => cfg.dataset.n_val = parse_usize(line, key, v)?,
        "dataset.min_objects" => cfg.dataset.min_objects = parse_usize(line, key, v)?,
        "dataset.max_objects" => cfg.dataset.max_objects = parse_usize(line, key, v)?,
        "detector.trunk_channels" => cfg.trunk_channels = parse_usize_list(line, key, v)?,
        "augment.labeled" => cfg.labeled_aug = parse_preset(line, key, v)?,
        "augment.weak" => cfg.weak_aug = parse_preset(line, key, v)?,
        "augment.strong" => cfg.strong_aug = parse_preset(line, key, v)?,
        "optim.learning_rate" => cfg.ctf.optim.learning_rate = parse_f64(line, key, v)?,
        "optim.momentum" => cfg.ctf.optim.momentum = parse_f64(line, key, v)?,
        "optim.weight_decay" => cfg.ctf.optim.weight_decay = parse_f64(line, key, v)?,
        "ctf.num_pairs" => cfg.ctf.num_pairs = parse_usize(line, key, v)?,
        "ctf.pair_seeds" => cfg.ctf.pair_seeds = parse_u64_list(line, key, v)?,
        "ctf.stage_length" => cfg.ctf.stage_length = parse_u64(line, key, v)?,
        "ctf.max_iter" => cfg.ctf.max_iter = parse_u64(line, key, v)?,
        "ctf.lambda_u" => cfg.ctf.lambda_u = parse_f64(line, key, v)?,
        "ctf.beta" => cfg.ctf.beta = parse_f64(line, key, v)?,
        "ctf.ema_rate" => cfg.ctf.ema_rate = parse_f64(line, key, v)?,
        "ctf.pseudo_threshold" => cfg.ctf.pseudo_threshold = parse_f64(line, key, v)?,
        "ctf.reset_policy" => {
            cfg.ctf.reset_policy = match v {
                "reset" => ResetPolicy::Reset,
                "continue" => ResetPolicy::Continue,
                _ => return Err(parse_err(line, format!("{key}: expected reset|continue, got {v:?}"))),
            }
        }
        "ctf.representative" => {
            cfg.ctf.representative = match v {
                "teacher" => Representative::Teacher,
                "student" => Representative::Student,
                _ => return Err(parse_err(line, format!("{key}: expected teacher|student, got {v:?}"))),
            }
        }
        "ctf.labeled_batch" => cfg.ctf.labeled_batch = parse_usize(line, key, v)?,
        "ctf.unlabeled_batch" => cfg.ctf.unlabeled_batch = parse_usize(line, key, v)?,
        "ctf.eval_every" => cfg.ctf.eval_every = parse_u64(line, key, v)?,
        "ctf.verify_no_backprop" => cfg.ctf.verify_no_backprop = parse_bool(line, key, v)?,
        "run.seed" => cfg.seed = parse_u64(line, key, v)?,
        "run.burn_in_iters" => cfg.burn_in_iters = parse_u64(line, key, v)?,
        "run.burn_in_batch" => cfg.burn_in_batch = parse_usize(line, key, v)?,
        "run.output_dir" => {
            if v.is_empty() {
                return Err(parse_err(line, "run.output_dir: empty path"));
            }
            cfg.output_dir = PathBuf::from(v);
        }
        _ => return Err(parse_err(line, format!("unknown key {key:?}"))),
    }
    Ok(())
}
