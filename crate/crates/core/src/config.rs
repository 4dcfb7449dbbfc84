//! Flat `key = value` run configuration.
//!
//! Every key can be set from a config file or overridden from the command line
//! through [`TrainConfig::set`]. The canonical text form (sorted keys) is what
//! the config hash is computed over.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::DatasetSpec;
use crate::data::NUM_MASK_CLASSES;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SupervisedTask};
use crate::permset::generate_permutation_set;
use crate::pretext::{JigsawConfig, Pretext, PretextTask, RotationConfig};

/// Expected supervised steps per self-supervised step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainingRatio {
    /// Supervised only (the R → ∞ limit).
    Baseline,
    Ratio(u32),
}

impl fmt::Display for TrainingRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainingRatio::Baseline => f.write_str("baseline"),
            TrainingRatio::Ratio(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for TrainingRatio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            return Ok(TrainingRatio::Baseline);
        }
        let r: u32 = s
            .parse()
            .map_err(|_| Error::invalid(format!("ratio must be `baseline` or an integer, got `{s}`")))?;
        if r < 1 {
            return Err(Error::invalid("ratio must be at least 1"));
        }
        Ok(TrainingRatio::Ratio(r))
    }
}

/// Where self-supervised images come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfSupSource {
    /// The supervised training images.
    Same,
    /// Only the extra unlabeled pool.
    Extra,
    /// Supervised images plus the extra pool.
    Both,
}

impl fmt::Display for SelfSupSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelfSupSource::Same => "same",
            SelfSupSource::Extra => "extra",
            SelfSupSource::Both => "both",
        })
    }
}

impl FromStr for SelfSupSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(SelfSupSource::Same),
            "extra" => Ok(SelfSupSource::Extra),
            "both" => Ok(SelfSupSource::Both),
            other => Err(Error::invalid(format!(
                "selfsup_source must be same|extra|both, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupervisedKind {
    Segmentation,
    Classification,
}

impl fmt::Display for SupervisedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupervisedKind::Segmentation => "segmentation",
            SupervisedKind::Classification => "classification",
        })
    }
}

impl FromStr for SupervisedKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segmentation" => Ok(SupervisedKind::Segmentation),
            "classification" => Ok(SupervisedKind::Classification),
            other => Err(Error::invalid(format!("unknown supervised task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub ratio: TrainingRatio,
    pub omega: f32,
    pub total_steps: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub selfsup_batch_size: usize,
    pub seed: u64,
    pub selfsup_task: PretextTask,
    pub selfsup_source: SelfSupSource,
    pub supervised_task: SupervisedKind,
    pub checkpoint_every: usize,
    pub grid_n: usize,
    /// Total random-gap slack per tile axis, in pixels.
    pub gap: usize,
    pub fill_value: f32,
    pub perm_count: usize,
    pub rotations: usize,
    pub branch_at: usize,
    pub coord_channels: bool,
    pub data_seed: u64,
    pub n_samples: usize,
    pub test_fraction: f64,
    pub n_unlabeled: usize,
    pub image_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ratio: TrainingRatio::Ratio(6),
            omega: 1.0,
            total_steps: 6000,
            learning_rate: 0.02,
            momentum: 0.9,
            batch_size: 2,
            selfsup_batch_size: 2,
            seed: 1,
            selfsup_task: PretextTask::Rotation,
            selfsup_source: SelfSupSource::Same,
            supervised_task: SupervisedKind::Segmentation,
            checkpoint_every: 1000,
            grid_n: 3,
            gap: 20,
            fill_value: 0.0,
            perm_count: 30,
            rotations: 4,
            branch_at: 4,
            coord_channels: true,
            data_seed: 0,
            n_samples: 600,
            test_fraction: 0.2,
            n_unlabeled: 400,
            image_size: 96,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "ratio",
        "omega",
        "total_steps",
        "learning_rate",
        "momentum",
        "batch_size",
        "selfsup_batch_size",
        "seed",
        "selfsup_task",
        "selfsup_source",
        "supervised_task",
        "checkpoint_every",
        "grid_n",
        "gap",
        "fill_value",
        "perm_count",
        "rotations",
        "branch_at",
        "coord_channels",
        "data_seed",
        "n_samples",
        "test_fraction",
        "n_unlabeled",
        "image_size",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "ratio" => self.ratio = value.parse()?,
            "omega" => self.omega = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "selfsup_batch_size" => self.selfsup_batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "selfsup_task" => self.selfsup_task = value.parse()?,
            "selfsup_source" => self.selfsup_source = value.parse()?,
            "supervised_task" => self.supervised_task = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "grid_n" => self.grid_n = parse(key, value)?,
            "gap" => self.gap = parse(key, value)?,
            "fill_value" => self.fill_value = parse(key, value)?,
            "perm_count" => self.perm_count = parse(key, value)?,
            "rotations" => self.rotations = parse(key, value)?,
            "branch_at" => self.branch_at = parse(key, value)?,
            "coord_channels" => self.coord_channels = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "n_unlabeled" => self.n_unlabeled = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "ratio" => self.ratio.to_string(),
            "omega" => self.omega.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "selfsup_batch_size" => self.selfsup_batch_size.to_string(),
            "seed" => self.seed.to_string(),
            "selfsup_task" => self.selfsup_task.name().to_string(),
            "selfsup_source" => self.selfsup_source.to_string(),
            "supervised_task" => self.supervised_task.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "grid_n" => self.grid_n.to_string(),
            "gap" => self.gap.to_string(),
            "fill_value" => self.fill_value.to_string(),
            "perm_count" => self.perm_count.to_string(),
            "rotations" => self.rotations.to_string(),
            "branch_at" => self.branch_at.to_string(),
            "coord_channels" => self.coord_channels.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "n_samples" => self.n_samples.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "n_unlabeled" => self.n_unlabeled.to_string(),
            "image_size" => self.image_size.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 1 {
            return Err(Error::invalid("total_steps must be at least 1"));
        }
        if self.batch_size < 1 || self.selfsup_batch_size < 1 {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::invalid("omega must be non-negative"));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("learning_rate must be >= 0 and momentum in [0, 1)"));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        Ok(())
    }

    /// Canonical `key = value` text, one line per key in sorted order.
    pub fn to_text(&self) -> String {
        let mut keys = Self::KEYS.to_vec();
        keys.sort_unstable();
        keys.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Applies `key = value` lines (`#` comments and blank lines ignored).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Short hex digest of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..6])
    }

    /// Keys whose values differ between two configs.
    pub fn diff(&self, other: &TrainConfig) -> Vec<&'static str> {
        Self::KEYS
            .iter()
            .copied()
            .filter(|k| self.get(k) != other.get(k))
            .collect()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_samples: self.n_samples,
            test_fraction: self.test_fraction,
            image_size: self.image_size,
            split_seed: self.data_seed,
            ..DatasetSpec::default()
        }
    }

    pub fn pretext(&self) -> Result<Pretext> {
        Ok(match self.selfsup_task {
            PretextTask::Jigsaw => Pretext::Jigsaw {
                permutations: generate_permutation_set(self.grid_n * self.grid_n, self.perm_count)?,
                config: JigsawConfig {
                    grid_n: self.grid_n,
                    gap: self.gap,
                    fill_value: self.fill_value,
                },
            },
            PretextTask::Rotation => Pretext::Rotation(RotationConfig { k: self.rotations }),
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let supervised = match self.supervised_task {
            SupervisedKind::Segmentation => SupervisedTask::Segmentation {
                classes: NUM_MASK_CLASSES,
            },
            SupervisedKind::Classification => SupervisedTask::Classification {
                classes: NUM_MASK_CLASSES,
            },
        };
        let selfsup_classes = match self.selfsup_task {
            PretextTask::Jigsaw => self.perm_count,
            PretextTask::Rotation => self.rotations,
        };
        ModelConfig {
            supervised,
            selfsup_classes,
            branch_at: self.branch_at,
            coord_channels: self.coord_channels,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }
}
