//! JSON run configuration: schema, defaults, validation.
//!
//! Unknown keys are rejected with the offending name; every path is checked
//! at validation time; the seed is mandatory so no run carries implicit
//! randomness.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use muse_core::data::{load_cifar_bin, load_idx, LabeledDataset};
use muse_core::nn::{Architecture, BackboneSpec};
use muse_core::objective::{MuseVariant, ObjectiveConfig};
use muse_core::train::{Schedule, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[serde(rename = "self")]
    SelfDistill,
    Online,
    Offline,
    MiBench,
    Count,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub architecture: String,
    pub num_classes: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default)]
    pub module_boundaries: Option<Vec<usize>>,
}

fn default_in_channels() -> usize {
    1
}

impl BackboneConfig {
    pub fn to_spec(&self) -> Result<BackboneSpec> {
        let arch = Architecture::parse(&self.architecture)?;
        let mut spec = BackboneSpec::new(arch, self.num_classes, self.in_channels);
        if let Some(b) = &self.module_boundaries {
            spec.module_boundaries = b.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default = "default_variant")]
    pub muse_variant: String,
    #[serde(default = "default_true")]
    pub use_ce_heads: bool,
    #[serde(default = "default_true")]
    pub use_kd_heads: bool,
    #[serde(default = "default_lambda")]
    pub lambda_muse: f64,
    #[serde(default = "default_lambda")]
    pub lambda_kd: f64,
    #[serde(default = "default_temperature")]
    pub kd_temperature: f64,
    #[serde(default = "default_embed")]
    pub embed: usize,
}

fn default_variant() -> String {
    "additive".into()
}
fn default_true() -> bool {
    true
}
fn default_lambda() -> f64 {
    1.0
}
fn default_temperature() -> f64 {
    4.0
}
fn default_embed() -> usize {
    64
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            muse_variant: default_variant(),
            use_ce_heads: true,
            use_kd_heads: true,
            lambda_muse: 1.0,
            lambda_kd: 1.0,
            kd_temperature: default_temperature(),
            embed: default_embed(),
        }
    }
}

impl ObjectiveSection {
    pub fn to_objective(&self) -> Result<ObjectiveConfig> {
        let obj = ObjectiveConfig {
            muse_variant: MuseVariant::parse(&self.muse_variant)?,
            use_ce_heads: self.use_ce_heads,
            use_kd_heads: self.use_kd_heads,
            lambda_muse: self.lambda_muse,
            lambda_kd: self.lambda_kd,
            kd_temperature: self.kd_temperature,
            embed: self.embed,
        };
        obj.validate()?;
        Ok(obj)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "format", deny_unknown_fields)]
pub enum DataSection {
    #[serde(rename = "idx")]
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    #[serde(rename = "cifar")]
    Cifar {
        train_bin: PathBuf,
        test_bin: PathBuf,
        #[serde(default)]
        coarse: bool,
    },
}

impl DataSection {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DataSection::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
            DataSection::Cifar {
                train_bin, test_bin, ..
            } => vec![train_bin, test_bin],
        }
    }

    pub fn load(&self, per_class_limit: Option<usize>) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = match self {
            DataSection::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx(train_images, train_labels).context("loading train IDX pair")?,
                load_idx(test_images, test_labels).context("loading test IDX pair")?,
            ),
            DataSection::Cifar {
                train_bin,
                test_bin,
                coarse,
            } => (
                load_cifar_bin(train_bin, *coarse).context("loading train CIFAR file")?,
                load_cifar_bin(test_bin, *coarse).context("loading test CIFAR file")?,
            ),
        };
        Ok(match per_class_limit {
            Some(k) => (train.subset_per_class(k), test),
            None => (train, test),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub base_lr: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub total_epochs: usize,
}

fn default_gamma() -> f64 {
    0.1
}

impl ScheduleSection {
    pub fn to_schedule(&self) -> Result<Schedule> {
        Ok(Schedule::new(
            self.base_lr,
            self.milestones.clone(),
            self.gamma,
            self.total_epochs,
        )?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub backbone: BackboneConfig,
    /// Second network for online mode; defaults to `backbone`.
    #[serde(default)]
    pub backbone2: Option<BackboneConfig>,
    /// Seed of the second network in online mode; defaults to seed + 1.
    #[serde(default)]
    pub net2_seed: Option<u64>,
    /// Teacher checkpoint for offline mode.
    #[serde(default)]
    pub teacher_ckpt: Option<PathBuf>,
    /// Teacher architecture for offline mode; defaults to `backbone`.
    #[serde(default)]
    pub teacher_backbone: Option<BackboneConfig>,
    #[serde(default)]
    pub objective: ObjectiveSection,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub per_class_limit: Option<usize>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_batch() -> usize {
    64
}
fn default_eval_every() -> usize {
    1
}

/// Parse and validate a config file. Unknown keys, missing files, and
/// out-of-range values are all rejected here, before any training starts.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &RunConfig) -> Result<()> {
    config.backbone.to_spec()?;
    if let Some(b2) = &config.backbone2 {
        b2.to_spec()?;
    }
    if let Some(tb) = &config.teacher_backbone {
        tb.to_spec()?;
    }
    config.objective.to_objective()?;
    config.schedule.to_schedule()?;
    if config.batch_size < 2 {
        bail!("batch_size must be at least 2");
    }
    if config.eval_every == 0 {
        bail!("eval_every must be positive");
    }
    for p in config.data.paths() {
        if !p.exists() {
            bail!("data path does not exist: {}", p.display());
        }
    }
    match config.mode {
        RunMode::Offline => {
            let t = config
                .teacher_ckpt
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("offline mode requires teacher_ckpt"))?;
            if !t.exists() {
                bail!("teacher checkpoint does not exist: {}", t.display());
            }
        }
        RunMode::MiBench | RunMode::Count => {
            bail!(
                "mode {:?} is driven by its own subcommand flags, not `train --config`",
                config.mode
            );
        }
        _ => {}
    }
    Ok(())
}

impl RunConfig {
    pub fn train_options(&self, run_id: String) -> Result<TrainOptions> {
        Ok(TrainOptions {
            batch_size: self.batch_size,
            schedule: self.schedule.to_schedule()?,
            momentum: self.optim.momentum,
            weight_decay: self.optim.weight_decay,
            augment: self.augment,
            seed: self.seed,
            eval_every: self.eval_every,
            run_id,
        })
    }

    /// Deterministic run identifier: mode, seed, and architecture hash.
    pub fn run_id(&self) -> Result<String> {
        let spec = self.backbone.to_spec()?;
        let fp = muse_core::checkpoint::fingerprint(&spec);
        let mode = match self.mode {
            RunMode::SelfDistill => "self",
            RunMode::Online => "online",
            RunMode::Offline => "offline",
            RunMode::MiBench => "mi-bench",
            RunMode::Count => "count",
        };
        Ok(format!(
            "{mode}-s{}-{}",
            self.seed,
            &muse_core::checkpoint::hex(&fp)[..8]
        ))
    }
}
