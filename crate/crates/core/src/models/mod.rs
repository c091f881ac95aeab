//! Miniature residual and fire-module classifiers, and the domain-adversarial
//! composition built on top of either.
//!
//! Parameters are partitioned into groups: `backbone`, `classifier-head`, and
//! (for [`DannModel`]) `domain-head`. Initialization is fan-in scaled normal
//! for weights, zero biases, unit batch-norm scale; each tensor draws from a
//! stream keyed by its name, so adding a head never perturbs the others.

mod layers;
mod resnet;
mod squeezenet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use resnet::MiniResNetConfig;
pub use squeezenet::{FireSpec, MiniSqueezeNetConfig};

use crate::tensor::{BatchNormStats, CheckpointRecord, ParamStore, Real, Tape, Tensor, TensorError, Var};
use layers::{pooled, Fwd, Lin};
use resnet::MiniResNet;
use squeezenet::MiniSqueezeNet;

pub const BACKBONE: &str = "backbone";
pub const CLASSIFIER_HEAD: &str = "classifier-head";
pub const DOMAIN_HEAD: &str = "domain-head";

/// Hidden width of the domain classifier.
pub const DOMAIN_HIDDEN: usize = 64;

#[derive(Clone, Debug)]
pub(crate) struct Buffers<T> {
    pub names: Vec<String>,
    pub stats: Vec<BatchNormStats<T>>,
}

impl<T> Default for Buffers<T> {
    fn default() -> Self {
        Self { names: Vec::new(), stats: Vec::new() }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint does not match model: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Resnet(MiniResNetConfig),
    Squeezenet(MiniSqueezeNetConfig),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Resnet(MiniResNetConfig::default())
    }
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Resnet(c) => c.num_classes,
            ModelConfig::Squeezenet(c) => c.num_classes,
        }
    }

    pub fn feature_channels(&self) -> usize {
        match self {
            ModelConfig::Resnet(c) => c.feature_channels(),
            ModelConfig::Squeezenet(c) => c.feature_channels(),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ModelConfig::Resnet(_) => "ResNet",
            ModelConfig::Squeezenet(_) => "SNet",
        }
    }

    fn downsampling(&self) -> usize {
        match self {
            ModelConfig::Resnet(c) => c.downsampling(),
            ModelConfig::Squeezenet(c) => c.downsampling(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes() < 2 {
            return Err(ModelError::Config(format!("num_classes must be at least 2, got {}", self.num_classes())));
        }
        match self {
            ModelConfig::Resnet(c) => {
                if c.stem_channels == 0
                    || c.stage_widths.is_empty()
                    || c.stage_widths.contains(&0)
                    || c.blocks_per_stage == 0
                {
                    return Err(ModelError::Config(
                        "resnet needs a stem, at least one stage and one block per stage".into(),
                    ));
                }
            }
            ModelConfig::Squeezenet(c) => {
                if c.stem_channels == 0 || c.fires.is_empty() {
                    return Err(ModelError::Config("squeezenet needs a stem and at least one fire module".into()));
                }
                if c.fires.iter().any(|f| f.squeeze == 0 || f.expand1 == 0 || f.expand3 == 0) {
                    return Err(ModelError::Config("fire module widths must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Spatial input sizes must be a positive multiple of the network's total downsampling.
    pub fn check_input_size(&self, size: usize) -> Result<(), ModelError> {
        let d = self.downsampling();
        if size == 0 || !size.is_multiple_of(d) {
            return Err(ModelError::Config(format!(
                "input size {size} incompatible with the downsampling chain (needs a positive multiple of {d})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Resnet(MiniResNet),
    Squeezenet(MiniSqueezeNet),
}

/// A feature extractor with its label head.
#[derive(Clone, Debug)]
pub struct Classifier<T: Real = f32> {
    pub params: ParamStore<T>,
    buffers: Buffers<T>,
    arch: Arch,
    config: ModelConfig,
}

impl<T: Real> Classifier<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut buffers = Buffers::default();
        let arch = match config {
            ModelConfig::Resnet(c) => Arch::Resnet(MiniResNet::build(c, seed, &mut params, &mut buffers)),
            ModelConfig::Squeezenet(c) => Arch::Squeezenet(MiniSqueezeNet::build(c, seed, &mut params)),
        };
        Ok(Self { params, buffers, arch, config: config.clone() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes()
    }

    pub fn batchnorm_stats(&self) -> impl Iterator<Item = (&str, &BatchNormStats<T>)> {
        self.buffers.names.iter().map(String::as_str).zip(&self.buffers.stats)
    }

    fn check_images(&self, tape: &Tape<T>, x: Var) -> Result<(), ModelError> {
        let s = tape.value(x).shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(
                TensorError::Shape { op: "model input", detail: format!("expected [N,3,H,W], got {s:?}") }.into()
            );
        }
        if s[2] != s[3] {
            return Err(ModelError::Config(format!("expected square images, got {}x{}", s[2], s[3])));
        }
        self.config.check_input_size(s[2])
    }

    fn fwd<'a>(&'a mut self, tape: &'a mut Tape<T>, training: bool, grad: bool) -> (Fwd<'a, T>, &'a Arch) {
        let Self { params, buffers, arch, .. } = self;
        (Fwd { tape, params, bn: &mut buffers.stats, training, grad }, arch)
    }

    /// Final feature map `[N, C, h, w]`.
    pub fn features(&mut self, tape: &mut Tape<T>, x: Var, training: bool) -> Result<Var, ModelError> {
        self.check_images(tape, x)?;
        let (mut f, arch) = self.fwd(tape, training, true);
        Ok(match arch {
            Arch::Resnet(m) => m.features(&mut f, x)?,
            Arch::Squeezenet(m) => m.features(&mut f, x)?,
        })
    }

    pub fn label_head(&mut self, tape: &mut Tape<T>, features: Var) -> Result<Var, ModelError> {
        let (mut f, arch) = self.fwd(tape, false, true);
        Ok(match arch {
            Arch::Resnet(m) => m.head(&mut f, features)?,
            Arch::Squeezenet(m) => m.head(&mut f, features)?,
        })
    }

    /// Logits `[N, num_classes]` with parameters recorded as differentiable leaves.
    pub fn forward_label(&mut self, tape: &mut Tape<T>, x: Var, training: bool) -> Result<Var, ModelError> {
        let feats = self.features(tape, x, training)?;
        self.label_head(tape, feats)
    }

    /// Evaluation-mode logits; nothing is recorded for differentiation.
    pub fn predict(&mut self, images: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(images);
        self.check_images(&tape, x)?;
        let (mut f, arch) = self.fwd(&mut tape, false, false);
        let logits = match arch {
            Arch::Resnet(m) => {
                let h = m.features(&mut f, x)?;
                m.head(&mut f, h)?
            }
            Arch::Squeezenet(m) => {
                let h = m.features(&mut f, x)?;
                m.head(&mut f, h)?
            }
        };
        Ok(tape.value(logits).clone())
    }

    /// Parameters and batch-norm running statistics as checkpoint records.
    pub fn to_records(&self) -> Vec<CheckpointRecord> {
        let mut out: Vec<CheckpointRecord> = self
            .params
            .ids()
            .map(|id| {
                let t = self.params.get(id);
                CheckpointRecord {
                    name: self.params.name(id).to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().iter().map(|v| v.as_f64() as f32).collect(),
                }
            })
            .collect();
        for (name, s) in self.buffers.names.iter().zip(&self.buffers.stats) {
            let c = s.channels();
            for (suffix, v) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                out.push(CheckpointRecord {
                    name: format!("{name}.{suffix}"),
                    shape: vec![c],
                    values: v.iter().map(|x| x.as_f64() as f32).collect(),
                });
            }
        }
        out
    }

    /// Loads values by name; every parameter and statistic must be present with a matching shape.
    pub fn load_records(&mut self, records: &[CheckpointRecord]) -> Result<(), ModelError> {
        let find = |name: &str, shape: &[usize]| -> Result<Vec<T>, ModelError> {
            let r = records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing record {name}")))?;
            if r.shape != shape {
                return Err(ModelError::Checkpoint(format!("{name}: shape {:?}, expected {shape:?}", r.shape)));
            }
            Ok(r.values.iter().map(|&v| T::of(v as f64)).collect())
        };
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let shape = self.params.get(id).shape().to_vec();
            let values = find(self.params.name(id), &shape)?;
            *self.params.get_mut(id) = Tensor::new(shape, values)?;
        }
        for (name, s) in self.buffers.names.iter().zip(&mut self.buffers.stats) {
            let c = s.channels();
            s.mean = find(&format!("{name}.running_mean"), &[c])?;
            s.var = find(&format!("{name}.running_var"), &[c])?;
        }
        Ok(())
    }

    /// Snapshot of parameters and running statistics (used by early stopping).
    pub fn state(&self) -> ModelState<T> {
        ModelState { params: self.params.values(), buffers: self.buffers.stats.clone() }
    }

    pub fn restore(&mut self, state: &ModelState<T>) {
        self.params.set_values(state.params.clone());
        self.buffers.stats.clone_from(&state.buffers);
    }

    #[cfg(test)]
    pub(crate) fn resnet(&self) -> Option<&MiniResNet> {
        match &self.arch {
            Arch::Resnet(m) => Some(m),
            Arch::Squeezenet(_) => None,
        }
    }
}

/// Saved parameter values and batch-norm statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T = f32> {
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<BatchNormStats<T>>,
}

/// Two-way domain classifier: global pooling, one hidden ReLU layer, two logits.
#[derive(Clone, Debug)]
struct DomainHead {
    hidden: Lin,
    out: Lin,
}

/// A classifier plus a domain head reached through gradient reversal.
///
/// Both heads read the same final feature map. Training minimizes
/// `label_loss + λ · domain_loss`; because the reversal sits between the
/// features and the domain head, the backbone receives the label gradient
/// minus λ times the domain gradient.
#[derive(Clone, Debug)]
pub struct DannModel<T: Real = f32> {
    pub classifier: Classifier<T>,
    head: DomainHead,
    pub lambda: f64,
}

/// Outputs of one DANN forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DannOutputs {
    pub features: Var,
    pub label_logits: Var,
    pub domain_logits: Var,
}

impl<T: Real> DannModel<T> {
    pub fn new(config: &ModelConfig, seed: u64, lambda: f64) -> Result<Self, ModelError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ModelError::Config(format!("lambda must be finite and non-negative, got {lambda}")));
        }
        let mut classifier = Classifier::new(config, seed)?;
        let c = config.feature_channels();
        let p = &mut classifier.params;
        let head = DomainHead {
            hidden: Lin::new(p, seed, "domain.hidden", DOMAIN_HEAD, c, DOMAIN_HIDDEN),
            out: Lin::new(p, seed, "domain.out", DOMAIN_HEAD, DOMAIN_HIDDEN, 2),
        };
        Ok(Self { classifier, head, lambda })
    }

    pub fn domain_head(&mut self, tape: &mut Tape<T>, features: Var, grad: bool) -> Result<Var, ModelError> {
        let (mut f, _) = self.classifier.fwd(tape, false, grad);
        let p = pooled(&mut f, features)?;
        let h = self.head.hidden.forward(&mut f, p)?;
        let h = f.tape.relu(h)?;
        Ok(self.head.out.forward(&mut f, h)?)
    }

    /// Label logits and domain logits; every sample passes through both heads.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, training: bool) -> Result<DannOutputs, ModelError> {
        let features = self.classifier.features(tape, x, training)?;
        let label_logits = self.classifier.label_head(tape, features)?;
        let reversed = tape.grad_reverse(features)?;
        let domain_logits = self.domain_head(tape, reversed, true)?;
        Ok(DannOutputs { features, label_logits, domain_logits })
    }

    /// Evaluation-mode domain logits `[N, 2]`.
    pub fn predict_domain(&mut self, images: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(images);
        self.classifier.check_images(&tape, x)?;
        let feats = {
            let (mut f, arch) = self.classifier.fwd(&mut tape, false, false);
            match arch {
                Arch::Resnet(m) => m.features(&mut f, x)?,
                Arch::Squeezenet(m) => m.features(&mut f, x)?,
            }
        };
        let logits = self.domain_head(&mut tape, feats, false)?;
        Ok(tape.value(logits).clone())
    }

    pub fn predict(&mut self, images: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.classifier.predict(images)
    }
}

/// `label_loss + λ · domain_loss`.
pub fn dann_loss<T: Real>(
    tape: &mut Tape<T>,
    out: &DannOutputs,
    labels: &[usize],
    domains: &[usize],
    lambda: f64,
) -> Result<Var, TensorError> {
    let label = tape.softmax_cross_entropy(out.label_logits, labels)?;
    let domain = tape.softmax_cross_entropy(out.domain_logits, domains)?;
    let weighted = tape.scale(domain, lambda)?;
    tape.add(label, weighted)
}
