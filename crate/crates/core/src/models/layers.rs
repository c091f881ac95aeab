use rand_distr::{Distribution, StandardNormal};

use super::Buffers;
use crate::seed;
use crate::tensor::{BatchNormStats, ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};

/// Forward-pass context: the tape, the parameter values, and the mode.
pub(crate) struct Fwd<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamStore<T>,
    pub bn: &'a mut [BatchNormStats<T>],
    pub training: bool,
    /// Whether parameters are placed on the tape as differentiable leaves.
    pub grad: bool,
}

impl<T: Real> Fwd<'_, T> {
    pub fn p(&mut self, id: ParamId) -> Var {
        let v = self.params.get(id).clone();
        if self.grad {
            self.tape.param(id, v)
        } else {
            self.tape.constant(v)
        }
    }
}

/// Fan-in scaled normal draw, `N(0, 2 / fan_in)`, from a stream keyed by the parameter name.
pub(crate) fn he_normal<T: Real>(seed: u64, name: &str, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let mut rng = seed::stream(seed, name, 0);
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        name: &str,
        group: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let wname = format!("{name}.weight");
        let w = store.add(&wname, group, he_normal(seed, &wname, &[c_out, c_in, k, k], c_in * k * k));
        let b = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(&[c_out])));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = f.p(self.w);
        let b = self.b.map(|b| f.p(b));
        f.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Bn {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
}

impl Bn {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        buffers: &mut Buffers<T>,
        name: &str,
        group: &str,
        channels: usize,
    ) -> Self {
        let gamma = store.add(format!("{name}.gamma"), group, Tensor::full(&[channels], T::one()));
        let beta = store.add(format!("{name}.beta"), group, Tensor::zeros(&[channels]));
        buffers.names.push(name.to_string());
        buffers.stats.push(BatchNormStats::new(channels));
        Self { gamma, beta, stats: buffers.stats.len() - 1 }
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let g = f.p(self.gamma);
        let b = f.p(self.beta);
        let training = f.training;
        f.tape.batchnorm2d(x, g, b, &mut f.bn[self.stats], training)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Lin {
    pub w: ParamId,
    pub b: ParamId,
}

impl Lin {
    pub fn new<T: Real>(store: &mut ParamStore<T>, seed: u64, name: &str, group: &str, inp: usize, out: usize) -> Self {
        let wname = format!("{name}.weight");
        let w = store.add(&wname, group, he_normal(seed, &wname, &[out, inp], inp));
        let b = store.add(format!("{name}.bias"), group, Tensor::zeros(&[out]));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = f.p(self.w);
        let b = f.p(self.b);
        f.tape.linear(x, w, Some(b))
    }
}

/// Global average pool followed by flattening to `[N, C]`.
pub(crate) fn pooled<T: Real>(f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
    let p = f.tape.avgpool_global(x)?;
    f.tape.flatten(p)
}
