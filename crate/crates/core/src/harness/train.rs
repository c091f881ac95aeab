use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{domain_confusion, evaluate, in_top_k, shape_bias_score, Accuracy, ShapeBias};
use super::{ExperimentConfig, HarnessError, Regime};
use crate::data::{
    augment_for, build_cue_conflict_set, build_dataset, images_to_tensor, split_indices, ImageSample, Split,
};
use crate::models::{dann_loss, Classifier, DannModel, ModelState};
use crate::optim::{Adam, EarlyStopDecision, EarlyStopping, MultiStepScheduler};
use crate::seed;
use crate::stylize::stylize_dataset;
use crate::tensor::{Tape, Var};

/// Base and stylized splits with matching indices, plus the cue-conflict set.
#[derive(Debug)]
pub struct Materialized {
    pub base: Split,
    pub stylized: Split,
    pub cue_conflict: Vec<ImageSample>,
}

fn data_key(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(&(&cfg.dataset, &cfg.split, &cfg.stylize, cfg.cue_conflict_size)).expect("serializes")
}

/// Generates (or reuses) the data a config trains and evaluates on. The most
/// recent result is kept in memory so consecutive runs on the same data skip
/// regeneration.
pub fn materialize(cfg: &ExperimentConfig) -> Result<Arc<Materialized>, HarnessError> {
    static LAST: OnceLock<Mutex<HashMap<String, Arc<Materialized>>>> = OnceLock::new();
    let key = data_key(cfg);
    let memo = LAST.get_or_init(Default::default);
    if let Some(m) = memo.lock().expect("memo lock").get(&key) {
        return Ok(Arc::clone(m));
    }
    let full = build_dataset(&cfg.dataset)?;
    let stylized = stylize_dataset(&full, &cfg.stylize)?;
    let labels: Vec<usize> = full.iter().map(|s| s.shape_class).collect();
    let idx = split_indices(&labels, &cfg.split);
    let take = |src: &[ImageSample], ix: &[usize]| ix.iter().map(|&i| src[i].clone()).collect::<Vec<_>>();
    let part = |src: &[ImageSample]| Split {
        train: take(src, &idx.train),
        val: take(src, &idx.val),
        test: take(src, &idx.test),
    };
    let m = Arc::new(Materialized {
        base: part(&full),
        stylized: part(&stylized),
        cue_conflict: build_cue_conflict_set(&cfg.dataset, cfg.cue_conflict_size)?,
    });
    let mut guard = memo.lock().expect("memo lock");
    guard.clear();
    guard.insert(key, Arc::clone(&m));
    Ok(m)
}

/// The network trained by a regime: a plain classifier or one with a domain head.
#[derive(Clone, Debug)]
pub enum Net {
    Plain(Classifier<f32>),
    Dann(DannModel<f32>),
}

impl Net {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let init = seed::derive_seed(cfg.seed, "init", 0);
        Ok(match (cfg.regime, cfg.lambda) {
            (Regime::Dann, Some(l)) => Net::Dann(DannModel::new(&cfg.model, init, l)?),
            _ => Net::Plain(Classifier::new(&cfg.model, init)?),
        })
    }

    pub fn classifier(&mut self) -> &mut Classifier<f32> {
        match self {
            Net::Plain(c) => c,
            Net::Dann(d) => &mut d.classifier,
        }
    }

    pub fn classifier_ref(&self) -> &Classifier<f32> {
        match self {
            Net::Plain(c) => c,
            Net::Dann(d) => &d.classifier,
        }
    }

    /// Training-mode loss and label logits for one batch.
    pub fn loss(
        &mut self,
        tape: &mut Tape<f32>,
        x: Var,
        labels: &[usize],
        domains: &[usize],
        lambda: f64,
    ) -> Result<(Var, Var), HarnessError> {
        match self {
            Net::Plain(c) => {
                let logits = c.forward_label(tape, x, true)?;
                Ok((tape.softmax_cross_entropy(logits, labels)?, logits))
            }
            Net::Dann(d) => {
                let out = d.forward(tape, x, true)?;
                Ok((dann_loss(tape, &out, labels, domains, lambda)?, out.label_logits))
            }
        }
    }

    pub fn state(&self) -> ModelState<f32> {
        self.classifier_ref().state()
    }

    pub fn restore(&mut self, state: &ModelState<f32>) {
        self.classifier().restore(state);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_backbone: f64,
    pub lr_classifier: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_top1: f64,
}

/// Everything persisted about a finished run except wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub dataset_name: String,
    pub model: String,
    pub regime: Regime,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub base_test: Accuracy,
    pub stylized_test: Accuracy,
    pub shape_bias: ShapeBias,
    /// Domain-head accuracy on the union of both test sets (dann only).
    pub domain_accuracy: Option<f64>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    pub report: RunReport,
    pub net: Net,
}

fn sets<'a>(
    m: &'a Materialized,
    regime: Regime,
    pick: impl Fn(&'a Split) -> &'a [ImageSample],
) -> Vec<&'a ImageSample> {
    match regime {
        Regime::Base => pick(&m.base).iter().collect(),
        Regime::Stylized => pick(&m.stylized).iter().collect(),
        Regime::Mixed | Regime::Dann => pick(&m.base).iter().chain(pick(&m.stylized)).collect(),
    }
}

/// Training samples a regime sees: base, stylized, or both concatenated.
pub fn training_samples(m: &Materialized, regime: Regime) -> Vec<&ImageSample> {
    sets(m, regime, |s| &s.train)
}

/// Validation samples a regime selects its best epoch on.
pub fn validation_samples(m: &Materialized, regime: Regime) -> Vec<&ImageSample> {
    sets(m, regime, |s| &s.val)
}

/// Visiting order of the `n` training samples in `epoch` (zero-based).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, "shuffle", epoch as u64));
    order
}

/// Evaluates a trained network on every test set of `m`.
pub fn evaluate_all(
    cfg: &ExperimentConfig,
    net: &mut Net,
    m: &Materialized,
) -> Result<(Accuracy, Accuracy, ShapeBias, Option<f64>), HarnessError> {
    let s = cfg.augment.size;
    let base = evaluate(net.classifier(), &m.base.test, s, cfg.top_k)?;
    let stylized = evaluate(net.classifier(), &m.stylized.test, s, cfg.top_k)?;
    let bias = shape_bias_score(net.classifier(), &m.cue_conflict, s)?;
    let domain = match net {
        Net::Dann(d) => {
            let both: Vec<ImageSample> = m.base.test.iter().chain(&m.stylized.test).cloned().collect();
            Some(domain_confusion(d, &both, s)?)
        }
        Net::Plain(_) => None,
    };
    Ok((base, stylized, bias, domain))
}

/// Trains one config to completion, calling `observe` after every epoch.
pub fn train(cfg: &ExperimentConfig, mut observe: impl FnMut(&EpochRecord)) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let data = materialize(cfg)?;
    let train_set = training_samples(&data, cfg.regime);
    let val_set: Vec<ImageSample> = validation_samples(&data, cfg.regime).into_iter().cloned().collect();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let mut net = Net::new(cfg)?;
    let mut adam = Adam::new(cfg.optimizer.clone())?;
    let mut scheduler = MultiStepScheduler::new(cfg.scheduler.clone())?;
    let mut stopper: EarlyStopping<ModelState<f32>> = EarlyStopping::new(cfg.early_stop.patience);
    let mut history = Vec::new();
    let mut stopped_early = false;
    let n = train_set.len();
    let total_steps = (cfg.max_epochs * n.div_ceil(cfg.batch_size)) as f64;
    let mut step = 0usize;

    for epoch in 0..cfg.max_epochs {
        let scale = scheduler.scale(epoch);
        let (lr_b, lr_c) = (cfg.optimizer.backbone_lr * scale, cfg.optimizer.classifier_lr * scale);
        let order = epoch_order(cfg.seed, epoch, n);
        let aug_seed = seed::derive_seed(cfg.seed, "augment", epoch as u64);
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<_> = chunk
                .par_iter()
                .map(|&i| {
                    let s = train_set[i];
                    augment_for(&s.pixels, s.domain, &cfg.augment, &mut seed::stream(aug_seed, "sample", i as u64))
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set[i].shape_class).collect();
            let domains: Vec<usize> = chunk.iter().map(|&i| train_set[i].domain.index()).collect();
            let mut tape = Tape::new();
            let x = tape.constant(images_to_tensor(&images));
            let lambda = cfg.lambda_schedule.weight(cfg.lambda.unwrap_or(0.0), step as f64 / total_steps);
            step += 1;
            let (loss, logits) = net.loss(&mut tape, x, &labels, &domains, lambda)?;
            let value = tape.value(loss).item() as f64;
            let non_finite = || HarnessError::NonFinite {
                loss: value,
                epoch: epoch + 1,
                batch: batch + 1,
                lr_backbone: lr_b,
                lr_classifier: lr_c,
            };
            if !value.is_finite() {
                return Err(non_finite());
            }
            let c = tape.value(logits).shape()[1];
            hits += tape.value(logits).data().chunks_exact(c).zip(&labels).filter(|(r, &t)| in_top_k(r, t, 1)).count();
            loss_sum += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            if grads.params().any(|(_, g)| !g.is_finite()) {
                return Err(non_finite());
            }
            adam.step(&mut net.classifier().params, &grads, scale)?;
        }
        let val = evaluate(net.classifier(), &val_set, cfg.augment.size, 1)?.top1;
        let train_loss = loss_sum / n as f64;
        scheduler.observe(epoch + 1, train_loss);
        let record = EpochRecord {
            epoch: epoch + 1,
            lr_backbone: lr_b,
            lr_classifier: lr_c,
            train_loss,
            train_top1: hits as f64 / n as f64,
            val_top1: val,
        };
        observe(&record);
        history.push(record);
        if stopper.update(epoch + 1, val, || net.state()) == EarlyStopDecision::Stop {
            stopped_early = true;
            break;
        }
    }

    let best_epoch = stopper.best_epoch();
    let best_val_top1 = stopper.best_metric().unwrap_or(0.0);
    if let Some(state) = stopper.into_snapshot() {
        net.restore(&state);
    }
    let (base_test, stylized_test, shape_bias, domain_accuracy) = evaluate_all(cfg, &mut net, &data)?;
    let report = RunReport {
        config_hash: cfg.hash(),
        dataset_name: cfg.dataset_name.clone(),
        model: cfg.model.short_name().to_string(),
        regime: cfg.regime,
        seed: cfg.seed,
        lambda: cfg.lambda,
        base_test,
        stylized_test,
        shape_bias,
        domain_accuracy,
        best_epoch,
        best_val_top1,
        epochs_run: history.len(),
        stopped_early,
        history,
    };
    Ok(TrainOutcome { report, net })
}
