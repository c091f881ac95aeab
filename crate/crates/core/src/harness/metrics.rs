use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{images_to_tensor, ImageSample};
use crate::models::{Classifier, DannModel};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 128;

/// Whether `target` is among the `k` largest entries of `logits`; equal
/// scores rank the lower class index first.
pub fn in_top_k(logits: &[f32], target: usize, k: usize) -> bool {
    let t = logits[target];
    let ahead = logits.iter().enumerate().filter(|&(j, &v)| v > t || (v == t && j < target)).count();
    ahead < k
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub topk: f64,
    pub k: usize,
    pub n: usize,
}

pub fn accuracy_from_logits(logits: &Tensor<f32>, targets: &[usize], k: usize) -> Result<Accuracy, HarnessError> {
    if targets.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let c = logits.shape()[1];
    if k == 0 || k > c {
        return Err(HarnessError::Config(format!("k must be in 1..={c}, got {k}")));
    }
    let rows: Vec<&[f32]> = logits.data().chunks_exact(c).collect();
    let n = targets.len();
    let top1 = rows.iter().zip(targets).filter(|(r, &t)| in_top_k(r, t, 1)).count();
    let topk = rows.iter().zip(targets).filter(|(r, &t)| in_top_k(r, t, k)).count();
    Ok(Accuracy { top1: top1 as f64 / n as f64, topk: topk as f64 / n as f64, k, n })
}

fn batched(
    samples: &[ImageSample],
    size: usize,
    mut f: impl FnMut(Tensor<f32>) -> Result<Tensor<f32>, HarnessError>,
) -> Result<Tensor<f32>, HarnessError> {
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in samples.chunks(EVAL_BATCH) {
        let resized: Vec<_> = chunk
            .iter()
            .map(|s| {
                if s.pixels.height() == size && s.pixels.width() == size {
                    s.pixels.clone()
                } else {
                    s.pixels.resize(size, size)
                }
            })
            .collect();
        let out = f(images_to_tensor(&resized))?;
        width = out.shape()[1];
        data.extend_from_slice(out.data());
    }
    Ok(Tensor::new(vec![samples.len(), width], data)?)
}

/// Evaluation-mode label logits for samples resized to `size`.
pub fn predict_logits(
    model: &mut Classifier<f32>,
    samples: &[ImageSample],
    size: usize,
) -> Result<Tensor<f32>, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    batched(samples, size, |x| Ok(model.predict(x)?))
}

pub fn evaluate(
    model: &mut Classifier<f32>,
    samples: &[ImageSample],
    size: usize,
    k: usize,
) -> Result<Accuracy, HarnessError> {
    let logits = predict_logits(model, samples, size)?;
    let targets: Vec<usize> = samples.iter().map(|s| s.shape_class).collect();
    accuracy_from_logits(&logits, &targets, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeBias {
    /// `None` when no prediction matched either cue.
    pub score: Option<f64>,
    pub shape_matches: usize,
    pub texture_matches: usize,
    pub neither: usize,
    pub shape_rate: f64,
    pub texture_rate: f64,
}

/// Fraction of cue-matching predictions that follow the shape; predictions
/// matching neither cue are left out of the ratio.
pub fn shape_bias_from_predictions(predictions: &[usize], samples: &[ImageSample]) -> Result<ShapeBias, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let (mut shape, mut texture, mut neither) = (0, 0, 0);
    for (&p, s) in predictions.iter().zip(samples) {
        let t = s
            .texture_class
            .ok_or_else(|| HarnessError::Config("cue-conflict samples need a vocabulary texture label".into()))?;
        if p == s.shape_class {
            shape += 1;
        } else if p == t {
            texture += 1;
        } else {
            neither += 1;
        }
    }
    let n = samples.len() as f64;
    let denom = shape + texture;
    Ok(ShapeBias {
        score: (denom > 0).then(|| shape as f64 / denom as f64),
        shape_matches: shape,
        texture_matches: texture,
        neither,
        shape_rate: shape as f64 / n,
        texture_rate: texture as f64 / n,
    })
}

pub fn shape_bias_score(
    model: &mut Classifier<f32>,
    cue_conflict: &[ImageSample],
    size: usize,
) -> Result<ShapeBias, HarnessError> {
    let logits = predict_logits(model, cue_conflict, size)?;
    let c = logits.shape()[1];
    let preds: Vec<usize> = logits.data().chunks_exact(c).map(argmax).collect();
    shape_bias_from_predictions(&preds, cue_conflict)
}

pub fn domain_accuracy_from_logits(logits: &Tensor<f32>, domains: &[usize]) -> Result<f64, HarnessError> {
    if domains.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    if domains.iter().all(|&d| d == domains[0]) {
        return Err(HarnessError::SingleDomain);
    }
    let hits = logits.data().chunks_exact(2).zip(domains).filter(|(r, &d)| argmax(r) == d).count();
    Ok(hits as f64 / domains.len() as f64)
}

/// Accuracy of the domain head on samples tagged with both domains.
pub fn domain_confusion(model: &mut DannModel<f32>, samples: &[ImageSample], size: usize) -> Result<f64, HarnessError> {
    let domains: Vec<usize> = samples.iter().map(|s| s.domain.index()).collect();
    if domains.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    if domains.iter().all(|&d| d == domains[0]) {
        return Err(HarnessError::SingleDomain);
    }
    let logits = batched(samples, size, |x| Ok(model.predict_domain(x)?))?;
    domain_accuracy_from_logits(&logits, &domains)
}
