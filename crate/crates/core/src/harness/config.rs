use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::data::{AugmentPipeline, DatasetSpec, SplitSpec};
use crate::models::{MiniResNetConfig, ModelConfig};
use crate::optim::{OptimizerSpec, SchedulerSpec, SearchSpace};
use crate::stylize::StylizeConfig;

/// Schema version of [`ExperimentConfig`] files.
pub const CONFIG_VERSION: u32 = 1;

/// Mixed into every cache key so results from older code are not reused.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"), "-r1");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Base,
    Stylized,
    Mixed,
    Dann,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Base, Regime::Stylized, Regime::Mixed, Regime::Dann];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Base => "base",
            Regime::Stylized => "stylized",
            Regime::Mixed => "mixed",
            Regime::Dann => "dann",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| format!("unknown regime {s}"))
    }
}

/// How the dann weight evolves over training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSchedule {
    /// λ from the first batch on.
    Constant,
    /// λ · (2 / (1 + exp(−10 p)) − 1), with p the fraction of planned steps done.
    #[default]
    Ramp,
}

impl LambdaSchedule {
    pub fn weight(self, lambda: f64, progress: f64) -> f64 {
        match self {
            LambdaSchedule::Constant => lambda,
            LambdaSchedule::Ramp => lambda * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopSpec {
    pub patience: usize,
}

impl Default for EarlyStopSpec {
    fn default() -> Self {
        Self { patience: 20 }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_batch() -> usize {
    64
}
fn default_top_k() -> usize {
    2
}
fn default_cue_conflict() -> usize {
    600
}

/// Complete description of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Label used in result tables for the dataset.
    pub dataset_name: String,
    pub regime: Regime,
    pub seed: u64,
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_schedule: LambdaSchedule,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_cue_conflict")]
    pub cue_conflict_size: usize,
    pub model: ModelConfig,
    pub optimizer: OptimizerSpec,
    pub scheduler: SchedulerSpec,
    pub early_stop: EarlyStopSpec,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub augment: AugmentPipeline,
    pub stylize: StylizeConfig,
}

/// Desk-scale defaults: six shape classes with ρ = 1, 600 samples per class at
/// 64 px, MiniResNet trained with Adam at 3e-3 for up to 30 epochs.
impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            dataset_name: "shapes".into(),
            regime: Regime::Base,
            seed: 0,
            max_epochs: 30,
            batch_size: 64,
            lambda: None,
            lambda_schedule: LambdaSchedule::Ramp,
            top_k: 2,
            cue_conflict_size: 600,
            model: ModelConfig::Resnet(MiniResNetConfig::default()),
            optimizer: OptimizerSpec { backbone_lr: 3e-3, classifier_lr: 3e-3, ..OptimizerSpec::default() },
            scheduler: SchedulerSpec { milestones: vec![22], gamma: 0.2, plateau_epochs: None },
            early_stop: EarlyStopSpec::default(),
            dataset: DatasetSpec { per_class: 600, size: 64, ..DatasetSpec::default() },
            split: SplitSpec::default(),
            augment: AugmentPipeline::default(),
            stylize: StylizeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version));
        }
        match (self.regime, self.lambda) {
            (Regime::Dann, None) => return fail("regime dann requires lambda".into()),
            (Regime::Dann, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return fail(format!("lambda must be finite and non-negative, got {l}"))
            }
            (r, Some(_)) if r != Regime::Dann => {
                return fail(format!("lambda is only valid for dann, not {}", r.name()))
            }
            _ => {}
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return fail("max_epochs and batch_size must be positive".into());
        }
        if self.early_stop.patience == 0 {
            return fail("patience must be positive".into());
        }
        self.model.validate()?;
        let classes = self.model.num_classes();
        if classes != self.dataset.num_shape_classes {
            return fail(format!("model predicts {classes} classes, dataset has {}", self.dataset.num_shape_classes));
        }
        if self.top_k == 0 || self.top_k > classes {
            return fail(format!("top_k must be in 1..={classes}, got {}", self.top_k));
        }
        if self.cue_conflict_size == 0 {
            return fail("cue_conflict_size must be positive".into());
        }
        self.model.check_input_size(self.augment.size)?;
        if self.stylize.size != self.augment.size {
            return fail(format!(
                "stylized size {} differs from canonical size {}",
                self.stylize.size, self.augment.size
            ));
        }
        self.optimizer.validate()?;
        self.scheduler.validate()?;
        self.dataset.validate()?;
        self.augment.validate().map_err(HarnessError::Config)?;
        self.stylize.validate()?;
        Ok(())
    }

    /// Canonical JSON used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Cache key: SHA-256 over the code version and the canonical config.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(CODE_VERSION.as_bytes());
        h.update([0u8]);
        h.update(self.canonical_json().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// The mixed-regime run a dann run is compared against.
    pub fn mixed_counterpart(&self) -> ExperimentConfig {
        ExperimentConfig { regime: Regime::Mixed, lambda: None, ..self.clone() }
    }

    pub fn with_regime(&self, regime: Regime, lambda: Option<f64>) -> ExperimentConfig {
        ExperimentConfig { regime, lambda: if regime == Regime::Dann { lambda } else { None }, ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Overrides a named hyperparameter; used by the grid search.
    pub fn set_hyperparameter(&mut self, name: &str, value: f64) -> Result<(), HarnessError> {
        match name {
            "lambda" => self.lambda = Some(value),
            "backbone_lr" => self.optimizer.backbone_lr = value,
            "classifier_lr" => self.optimizer.classifier_lr = value,
            "weight_decay" => self.optimizer.weight_decay = value,
            "gamma" => self.scheduler.gamma = value,
            other => return Err(HarnessError::Config(format!("unknown hyperparameter {other}"))),
        }
        Ok(())
    }
}

/// A template config expanded over regimes and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
    /// Fixed λ for dann runs; ignored when `lambda_search` is set.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Grid searched with the first seed; the winner is reused for every seed.
    #[serde(default)]
    pub lambda_search: Option<SearchSpace>,
    pub template: ExperimentConfig,
}

impl SuiteSpec {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("suite serializes to TOML")
    }

    /// Configs for every (seed, regime) pair given the dann λ.
    pub fn expand(&self, lambda: Option<f64>) -> Result<Vec<ExperimentConfig>, HarnessError> {
        if self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::Config("suite needs at least one regime and one seed".into()));
        }
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &r in &self.regimes {
                let mut c = self.template.with_regime(r, lambda);
                c.seed = seed;
                c.validate()?;
                out.push(c);
            }
        }
        Ok(out)
    }
}
