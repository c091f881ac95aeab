//! Central-difference gradient checks in 64-bit precision.
//!
//! Relu and maxpool make the computations piecewise smooth. A probe whose
//! `±step` interval changes any relu sign or maxpool winner straddles a kink,
//! where a finite difference measures nothing useful; such probes are counted
//! as skipped and replaced by fresh random ones.

use rand::seq::index::sample;
use rand::seq::SliceRandom as _;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::models::{dann_loss, Classifier, DannModel, ModelConfig, ModelError, DOMAIN_HEAD};
use crate::seed;
use crate::tensor::{BatchNormStats, Gradients, Tape, Tensor, TensorError, Var};

/// Candidate probes drawn per requested probe before giving up.
const DRAWS_PER_PROBE: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSpec {
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Probes per checked tensor (per model for [`check_model`]).
    pub probes: usize,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self { step: 1e-3, tolerance: 1e-4, probes: 100, floor: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub target: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub probes: Vec<Probe>,
    /// Candidates rejected because their interval crossed a kink.
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        !self.probes.is_empty() && self.max_rel_error() <= tolerance
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Candidate indices in random order: every index when `len` is small,
/// otherwise a random subset large enough to absorb skipped probes.
fn candidates(len: usize, count: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let draws = count.saturating_mul(DRAWS_PER_PROBE).min(len);
    sample(rng, len, draws).into_vec()
}

/// Reduces any tensor to a scalar through a fixed random projection so every
/// output entry influences the loss.
pub fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = seed::stream(seed, "projection", n as u64);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Checks the gradient of the scalar built by `f` with respect to every input,
/// probing up to `spec.probes` entries per input.
pub fn check_function(
    inputs: &[Tensor<f64>],
    spec: &GradcheckSpec,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
) -> Result<GradcheckReport, TensorError> {
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.input(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape.value(loss).item(), tape.activation_pattern()))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let pattern = tape.activation_pattern();
    let grads = tape.backward(loss)?;
    let mut rng = seed::stream(spec.seed, "gradcheck", inputs.len() as u64);
    let mut report = GradcheckReport::default();
    for (j, var) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[j].shape());
        let g = grads.wrt(*var).unwrap_or(&zero);
        let mut accepted = 0;
        for i in candidates(inputs[j].len(), spec.probes, &mut rng) {
            if accepted == spec.probes {
                break;
            }
            let mut values = inputs.to_vec();
            values[j].data_mut()[i] += spec.step;
            let (up, p_up) = eval(&values)?;
            values[j].data_mut()[i] -= 2.0 * spec.step;
            let (down, p_down) = eval(&values)?;
            if p_up != pattern || p_down != pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * spec.step);
            let analytic = g.data()[i];
            accepted += 1;
            report.probes.push(Probe {
                target: format!("input{j}"),
                index: i,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, spec.floor),
            });
        }
    }
    Ok(report)
}

fn uniform(shape: &[usize], stream: u64, seed: u64) -> Tensor<f64> {
    let n = shape.iter().product();
    let mut rng = seed::stream(seed, "gradcheck-input", stream);
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Values bounded away from zero so no probe straddles the relu kink.
fn away_from_zero(shape: &[usize], stream: u64, seed: u64) -> Tensor<f64> {
    let mut t = uniform(shape, stream, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Distinct values spaced well beyond the step so pooling windows never tie.
fn distinct(shape: &[usize], stream: u64, seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(seed, "gradcheck-perm", stream));
    Tensor::new(shape.to_vec(), order.into_iter().map(|i| i as f64 * 0.01).collect()).expect("shape matches data")
}

/// Checks every differentiable tensor op on random inputs, returning one
/// named report per case.
pub fn check_ops(spec: &GradcheckSpec) -> Result<Vec<(String, GradcheckReport)>, TensorError> {
    let s = spec.seed;
    let mut out = Vec::new();
    for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
        let inputs = [uniform(&[2, 3, 7, 7], 0, s), uniform(&[4, 3, 3, 3], 1, s), uniform(&[4], 2, s)];
        let r = check_function(&inputs, spec, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, padding)?;
            project(t, y, 0)
        })?;
        out.push((format!("conv2d stride {stride} padding {padding}"), r));
    }
    let r = check_function(&[distinct(&[2, 3, 8, 8], 0, s)], spec, |t, v| {
        let y = t.maxpool2d(v[0], 2, 2)?;
        project(t, y, 1)
    })?;
    out.push(("maxpool2d".into(), r));
    let r = check_function(&[uniform(&[2, 4, 5, 5], 0, s)], spec, |t, v| {
        let y = t.avgpool_global(v[0])?;
        project(t, y, 2)
    })?;
    out.push(("avgpool_global".into(), r));
    let inputs = [uniform(&[8, 16], 0, s), uniform(&[5, 16], 1, s), uniform(&[5], 2, s)];
    let r = check_function(&inputs, spec, |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2]))?;
        project(t, y, 3)
    })?;
    out.push(("linear".into(), r));
    let r = check_function(&[away_from_zero(&[4, 3, 4, 4], 0, s)], spec, |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, 4)
    })?;
    out.push(("relu".into(), r));
    for training in [true, false] {
        let inputs = [uniform(&[4, 3, 5, 5], 0, s), uniform(&[3], 1, s), uniform(&[3], 2, s)];
        let r = check_function(&inputs, spec, |t, v| {
            let mut stats = BatchNormStats::new(3);
            stats.mean = vec![0.1, -0.2, 0.3];
            stats.var = vec![0.5, 1.5, 2.0];
            let y = t.batchnorm2d(v[0], v[1], v[2], &mut stats, training)?;
            project(t, y, 5)
        })?;
        out.push((format!("batchnorm2d {}", if training { "training" } else { "eval" }), r));
    }
    let inputs = [uniform(&[2, 3, 4, 5], 0, s), uniform(&[2, 3, 4, 5], 1, s)];
    let r = check_function(&inputs, spec, |t, v| {
        let a = t.add(v[0], v[1])?;
        let m = t.mul(a, v[1])?;
        let sc = t.scale(m, -1.7)?;
        let r = t.reshape(sc, &[6, 20])?;
        project(t, r, 7)
    })?;
    out.push(("add/mul/scale/reshape".into(), r));
    let r = check_function(&inputs, spec, |t, v| {
        let f = t.flatten(v[0])?;
        let g = t.mul(f, f)?;
        t.sum(g)
    })?;
    out.push(("flatten/sum".into(), r));
    let inputs = [uniform(&[2, 3, 4, 4], 0, s), uniform(&[2, 5, 4, 4], 1, s)];
    let r = check_function(&inputs, spec, |t, v| {
        let y = t.concat_channels(&[v[0], v[1]])?;
        project(t, y, 8)
    })?;
    out.push(("concat_channels".into(), r));
    let labels: Vec<usize> = (0..20).map(|i| i % 6).collect();
    let r = check_function(&[uniform(&[20, 6], 1, s)], spec, |t, v| t.softmax_cross_entropy(v[0], &labels))?;
    out.push(("softmax_cross_entropy".into(), r));
    // The forward pass is the identity, so the analytic gradient must equal
    // the negated finite difference.
    let mut r = check_function(&[uniform(&[4, 30], 0, s)], spec, |t, v| {
        let y = t.grad_reverse(v[0])?;
        let z = t.mul(y, y)?;
        project(t, z, 9)
    })?;
    for p in &mut r.probes {
        p.numeric = -p.numeric;
        p.rel_error = relative_error(p.analytic, p.numeric, spec.floor);
    }
    out.push(("grad_reverse".into(), r));
    Ok(out)
}

struct Evaluation {
    label: f64,
    domain: f64,
    pattern: u64,
}

/// Checks parameter gradients of a full model on a random batch in training
/// mode. With `lambda`, the model carries a domain head behind the gradient
/// reversal and its training loss is the dann objective.
pub fn check_model(
    config: &ModelConfig,
    lambda: Option<f64>,
    batch: usize,
    size: usize,
    spec: &GradcheckSpec,
) -> Result<GradcheckReport, ModelError> {
    config.check_input_size(size)?;
    let classes = config.num_classes();
    let mut rng = seed::stream(spec.seed, "gradcheck-model", 0);
    let n = batch * 3 * size * size;
    let images = Tensor::new(vec![batch, 3, size, size], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
    let domains: Vec<usize> = (0..batch).map(|i| i % 2).collect();

    let mut model = match lambda {
        Some(l) => Net64::Dann(DannModel::new(config, spec.seed, l)?),
        None => Net64::Plain(Classifier::new(config, spec.seed)?),
    };
    let run = |model: &mut Net64, keep: bool| -> Result<(Evaluation, Option<Gradients<f64>>), ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (loss, label, domain) = match model {
            Net64::Plain(c) => {
                let logits = c.forward_label(&mut tape, x, true)?;
                let loss = tape.softmax_cross_entropy(logits, &labels)?;
                (loss, tape.value(loss).item(), 0.0)
            }
            Net64::Dann(d) => {
                let out = d.forward(&mut tape, x, true)?;
                let l = d.lambda;
                let loss = dann_loss(&mut tape, &out, &labels, &domains, l)?;
                let label = tape.softmax_cross_entropy(out.label_logits, &labels)?;
                let domain = tape.softmax_cross_entropy(out.domain_logits, &domains)?;
                (loss, tape.value(label).item(), tape.value(domain).item())
            }
        };
        let pattern = tape.activation_pattern();
        let grads = if keep { Some(tape.backward(loss)?) } else { None };
        Ok((Evaluation { label, domain, pattern }, grads))
    };
    let (base, grads) = run(&mut model, true)?;
    let grads = grads.expect("gradients requested");
    let lambda = lambda.unwrap_or(0.0);

    let ids: Vec<_> = model.classifier().params.ids().collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| model.classifier().params.get(id).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut report = GradcheckReport::default();
    for flat in candidates(total, spec.probes, &mut rng) {
        if report.probes.len() == spec.probes {
            break;
        }
        let (mut k, mut i) = (0, flat);
        while i >= sizes[k] {
            i -= sizes[k];
            k += 1;
        }
        let id = ids[k];
        let params = &model.classifier().params;
        let (name, in_domain_head) = (params.name(id).to_string(), params.group_of(id) == DOMAIN_HEAD);
        let original = params.get(id).data()[i];
        model.classifier().params.get_mut(id).data_mut()[i] = original + spec.step;
        let (up, _) = run(&mut model, false)?;
        model.classifier().params.get_mut(id).data_mut()[i] = original - spec.step;
        let (down, _) = run(&mut model, false)?;
        model.classifier().params.get_mut(id).data_mut()[i] = original;
        if up.pattern != base.pattern || down.pattern != base.pattern {
            report.skipped += 1;
            continue;
        }
        let d_label = (up.label - down.label) / (2.0 * spec.step);
        let d_domain = (up.domain - down.domain) / (2.0 * spec.step);
        // The domain head descends λ·domain loss; everything upstream of the
        // reversal descends label loss − λ·domain loss.
        let numeric = if in_domain_head { lambda * d_domain } else { d_label - lambda * d_domain };
        let analytic = grads.param(id).map_or(0.0, |g| g.data()[i]);
        report.probes.push(Probe {
            target: name,
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, spec.floor),
        });
    }
    Ok(report)
}

enum Net64 {
    Plain(Classifier<f64>),
    Dann(DannModel<f64>),
}

impl Net64 {
    fn classifier(&mut self) -> &mut Classifier<f64> {
        match self {
            Net64::Plain(c) => c,
            Net64::Dann(d) => &mut d.classifier,
        }
    }
}
