//! Adam with per-group learning rates, multi-step learning-rate scaling,
//! early stopping with a best-model snapshot, and the grid search with
//! boundary expansion.

mod early_stop;
mod schedule;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use early_stop::{EarlyStopDecision, EarlyStopping};
pub use schedule::{scheduler_scale, MultiStepScheduler, SchedulerSpec};
pub use search::{
    grid_search, grid_search_logged, write_audit_csv, Assignment, AuditRow, SearchAxis, SearchFailure, SearchOutcome,
    SearchSpace,
};

use crate::models::{BACKBONE, CLASSIFIER_HEAD, DOMAIN_HEAD};
use crate::tensor::{Gradients, ParamStore, Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("gradient for {name} has shape {got:?}, parameter has {expected:?}")]
    GradientShape { name: String, got: Vec<usize>, expected: Vec<usize> },
    #[error("invalid optimizer settings: {0}")]
    Spec(String),
    #[error("no learning rate for parameter group {0}")]
    UnknownGroup(String),
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Adam hyperparameters. The backbone group uses `backbone_lr`; the
/// randomly initialized heads (label and domain) use `classifier_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub backbone_lr: f64,
    pub classifier_lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self { backbone_lr: 1e-3, classifier_lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<(), OptimError> {
        let ok = self.backbone_lr >= 0.0
            && self.classifier_lr >= 0.0
            && self.backbone_lr.is_finite()
            && self.classifier_lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::Spec(format!("{self:?}")))
        }
    }

    pub fn group_lr(&self, group: &str) -> Result<f64, OptimError> {
        match group {
            BACKBONE => Ok(self.backbone_lr),
            CLASSIFIER_HEAD | DOMAIN_HEAD => Ok(self.classifier_lr),
            other => Err(OptimError::UnknownGroup(other.to_string())),
        }
    }
}

/// Moment estimates and step counter for one parameter store.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    spec: OptimizerSpec,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(spec: OptimizerSpec) -> Result<Self, OptimError> {
        spec.validate()?;
        Ok(Self { spec, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One Adam update of every parameter. The effective gradient is
    /// `grad + weight_decay · param`; the step size is the parameter's group
    /// learning rate times `lr_scale`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr_scale: f64) -> Result<(), OptimError> {
        for id in params.ids() {
            let g = grads.param(id).ok_or_else(|| OptimError::MissingGradient(params.name(id).to_string()))?;
            if g.shape() != params.get(id).shape() {
                return Err(OptimError::GradientShape {
                    name: params.name(id).to_string(),
                    got: g.shape().to_vec(),
                    expected: params.get(id).shape().to_vec(),
                });
            }
        }
        let lrs: Vec<f64> = params.ids().map(|id| self.spec.group_lr(params.group_of(id))).collect::<Result<_, _>>()?;
        if self.m.len() != params.len() {
            self.m = params.ids().map(|id| vec![T::zero(); params.get(id).len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let s = &self.spec;
        let (b1, b2) = (T::of(s.beta1), T::of(s.beta2));
        let c1 = T::one() - T::of(s.beta1.powi(self.step as i32));
        let c2 = T::one() - T::of(s.beta2.powi(self.step as i32));
        let (eps, wd) = (T::of(s.eps), T::of(s.weight_decay));
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let lr = T::of(lrs[i] * lr_scale);
            let g = grads.param(id).expect("checked above").data();
            let p: &mut Tensor<T> = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let grad = g[j] + wd * *w;
                m[j] = b1 * m[j] + (T::one() - b1) * grad;
                v[j] = b2 * v[j] + (T::one() - b2) * grad * grad;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamId, Tape};

    fn one_param(value: f64, group: &str) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", group, Tensor::scalar(value));
        s
    }

    fn grads_for(store: &ParamStore<f64>, g: &[f64]) -> Gradients<f64> {
        let mut tape = Tape::new();
        let mut terms = Vec::new();
        for (id, &gv) in store.ids().zip(g) {
            let p = tape.param(id, store.get(id).clone());
            let c = tape.constant(Tensor::scalar(gv));
            terms.push(tape.mul(p, c).unwrap());
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t).unwrap();
        }
        tape.backward(total).unwrap()
    }

    #[test]
    fn first_step_matches_closed_form() {
        let spec = OptimizerSpec { backbone_lr: 1e-3, classifier_lr: 1e-3, ..Default::default() };
        let mut store = one_param(1.0, BACKBONE);
        let mut adam = Adam::new(spec).unwrap();
        let g = grads_for(&store, &[0.1]);
        adam.step(&mut store, &g, 1.0).unwrap();
        // m̂ = g, v̂ = g², so the update is lr · g / (|g| + eps).
        let closed = 1.0 - 1e-3 * 0.1 / (0.1 + 1e-8);
        assert!((store.get(ParamId(0)).item() - closed).abs() < 1e-9);
        assert!((store.get(ParamId(0)).item() - 0.999).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut store = one_param(0.75, BACKBONE);
        let mut adam = Adam::new(OptimizerSpec::default()).unwrap();
        for _ in 0..5 {
            let g = grads_for(&store, &[0.0]);
            adam.step(&mut store, &g, 1.0).unwrap();
        }
        assert_eq!(store.get(ParamId(0)).item(), 0.75);
    }

    #[test]
    fn weight_decay_acts_as_l2_gradient() {
        let spec = OptimizerSpec { weight_decay: 0.1, ..Default::default() };
        let mut decayed = one_param(1.0, BACKBONE);
        Adam::new(spec).unwrap().step(&mut decayed, &grads_for(&one_param(1.0, BACKBONE), &[0.0]), 1.0).unwrap();
        let mut plain = one_param(1.0, BACKBONE);
        Adam::new(OptimizerSpec::default())
            .unwrap()
            .step(&mut plain, &grads_for(&one_param(1.0, BACKBONE), &[0.1]), 1.0)
            .unwrap();
        assert!((decayed.get(ParamId(0)).item() - plain.get(ParamId(0)).item()).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let spec = OptimizerSpec { backbone_lr: 1e-2, ..Default::default() };
        let mut store = one_param(5.0, BACKBONE);
        let mut adam = Adam::new(spec).unwrap();
        let mut reached = None;
        for step in 1..=2000 {
            let x = store.get(ParamId(0)).item();
            let g = grads_for(&store, &[2.0 * x]);
            adam.step(&mut store, &g, 1.0).unwrap();
            if store.get(ParamId(0)).item().abs() < 0.05 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "final x = {}", store.get(ParamId(0)).item());
    }

    #[test]
    fn zero_classifier_lr_freezes_head_exactly() {
        let spec = OptimizerSpec { classifier_lr: 0.0, weight_decay: 1e-3, ..Default::default() };
        let mut store = ParamStore::<f64>::new();
        store.add("body", BACKBONE, Tensor::scalar(0.3));
        store.add("head", CLASSIFIER_HEAD, Tensor::scalar(-0.7));
        let mut adam = Adam::new(spec).unwrap();
        for i in 0..10 {
            let g = grads_for(&store, &[0.2 * i as f64 - 0.5, 1.5]);
            adam.step(&mut store, &g, 1.0).unwrap();
        }
        assert_eq!(store.get(ParamId(1)).item().to_bits(), (-0.7f64).to_bits());
        assert_ne!(store.get(ParamId(0)).item(), 0.3);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = one_param(1.0, BACKBONE);
        store.add("extra", CLASSIFIER_HEAD, Tensor::scalar(2.0));
        let only_first = {
            let mut tape = Tape::new();
            let p = tape.param(ParamId(0), Tensor::scalar(1.0));
            tape.backward(p).unwrap()
        };
        let mut adam = Adam::new(OptimizerSpec::default()).unwrap();
        assert_eq!(adam.step(&mut store, &only_first, 1.0), Err(OptimError::MissingGradient("extra".into())));
    }
}
