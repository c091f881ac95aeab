use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use super::kernels::{self, ConvGeom};
use super::{config_err, shape_err, BatchNormStats, ParamId, Real, Tensor, TensorError};

/// Handle of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        c_out: usize,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPoolGlobal {
        input: Var,
        hw: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        rows: usize,
        features: usize,
        outputs: usize,
    },
    Relu {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
        channels: usize,
        hw: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    ConcatChannels {
        inputs: Vec<(Var, usize)>,
        batch: usize,
        hw: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
    },
    GradReverse {
        input: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    param: Option<ParamId>,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so the node list is already a
/// topological order; [`Tape::backward`] walks it once in reverse.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T = f32> {
    leaves: BTreeMap<Var, Tensor<T>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf that was created with `requires_grad`.
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&var)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Fingerprint of every piecewise choice on the tape: the sign of each relu
    /// input and the winner of each maxpool window. Two evaluations with equal
    /// fingerprints lie in the same smooth piece of the computation. Only
    /// recorded nodes contribute.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.nodes[input.0].value.data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false, None)
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad, None)
    }

    /// Places a trainable parameter on the tape; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push_leaf(value, true, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf, param });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<&Tensor<T>, TensorError> {
        self.nodes.get(var.0).map(|n| &n.value).ok_or(TensorError::UnknownVar(var.0))
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: impl FnOnce() -> Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op() } else { Op::Leaf };
        self.nodes.push(Node { value, requires_grad, op, param: None });
        Var(self.nodes.len() - 1)
    }

    /// 2-D cross-correlation with zero padding. Output extent is
    /// `floor((H + 2·padding − kH) / stride) + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let w = self.check(weight)?;
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err("conv2d", format!("expected 4-D input and weight, got {xs:?} and {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(shape_err("conv2d", format!("input has {} channels, weight expects {}", xs[1], ws[1])));
        }
        if stride == 0 {
            return Err(config_err("conv2d", "stride must be positive"));
        }
        let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(config_err(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * padding, wd + 2 * padding),
            ));
        }
        if let Some(b) = bias {
            let bs = self.check(b)?.shape();
            if bs != [c_out] {
                return Err(shape_err("conv2d", format!("bias shape {bs:?}, expected [{c_out}]")));
            }
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (wd + 2 * padding - kw) / stride + 1,
        };
        let out =
            kernels::conv2d_forward(x.data(), n, w.data(), c_out, bias.map(|b| self.nodes[b.0].value.data()), &geom);
        let value = Tensor::new(vec![n, c_out, geom.ho, geom.wo], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, || Op::Conv2d { input, weight, bias, geom, c_out }))
    }

    /// Max pooling without padding; ties resolve to the first maximal position in row-major order.
    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let s = x.shape();
        if s.len() != 4 {
            return Err(shape_err("maxpool2d", format!("expected 4-D input, got {s:?}")));
        }
        if k == 0 || stride == 0 {
            return Err(config_err("maxpool2d", "window and stride must be positive"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h < k || w < k {
            return Err(config_err("maxpool2d", format!("window {k} larger than input {h}x{w}")));
        }
        let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, &[input], || Op::MaxPool2d { input, argmax }))
    }

    /// Mean over each (H, W) plane: `[N,C,H,W] -> [N,C,1,1]`.
    pub fn avgpool_global(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let s = x.shape();
        if s.len() != 4 || s[2] * s[3] == 0 {
            return Err(shape_err("avgpool_global", format!("expected non-empty 4-D input, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = T::one() / T::of(hw as f64);
        let out: Vec<T> = x.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(vec![n, c, 1, 1], out)?;
        Ok(self.push(value, &[input], || Op::AvgPoolGlobal { input, hw }))
    }

    /// `x · Wᵀ + b` for `x: [N,F]`, `W: [O,F]`, `b: [O]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let w = self.check(weight)?;
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", format!("input {xs:?} incompatible with weight {ws:?}")));
        }
        let (rows, features, outputs) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); rows * outputs];
        kernels::matmul(rows, features, outputs, x.data(), false, w.data(), true, &mut out, false);
        if let Some(b) = bias {
            let bt = self.check(b)?;
            if bt.shape() != [outputs] {
                return Err(shape_err("linear", format!("bias shape {:?}, expected [{outputs}]", bt.shape())));
            }
            for row in out.chunks_mut(outputs) {
                add_into(row, bt.data());
            }
        }
        let value = Tensor::new(vec![rows, outputs], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, || Op::Linear { input, weight, bias, rows, features, outputs }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let out: Vec<T> = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, &[input], || Op::Relu { input }))
    }

    /// Per-channel batch normalization over (N, H, W). In training mode batch
    /// statistics are used and `stats` is updated with its momentum (unbiased
    /// variance); in evaluation mode the running statistics are used.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        training: bool,
    ) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let s = x.shape().to_vec();
        if s.len() != 4 {
            return Err(shape_err("batchnorm2d", format!("expected 4-D input, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        if stats.channels() != c || self.check(gamma)?.len() != c || self.check(beta)?.len() != c {
            return Err(shape_err("batchnorm2d", format!("{c} channels but affine/statistics sized differently")));
        }
        let count = n * hw;
        if training && count == 0 {
            return Err(config_err("batchnorm2d", "training-mode batch normalization needs a non-empty batch"));
        }
        let xd = x.data();
        let eps = T::of(stats.eps);
        let mut inv_std = vec![T::zero(); c];
        let mut mean = vec![T::zero(); c];
        if training {
            let m = T::of(count as f64);
            let momentum = T::of(stats.momentum);
            for ch in 0..c {
                let mut sum = T::zero();
                for b in 0..n {
                    sum += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
                }
                let mu = sum / m;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                let var = sq / m;
                mean[ch] = mu;
                inv_std[ch] = T::one() / (var + eps).sqrt();
                let unbiased = if count > 1 { sq / T::of((count - 1) as f64) } else { var };
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mu;
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * unbiased;
            }
        } else {
            for ch in 0..c {
                mean[ch] = stats.mean[ch];
                inv_std[ch] = T::one() / (stats.var[ch] + eps).sqrt();
            }
        }
        let gd = self.nodes[gamma.0].value.data();
        let bd = self.nodes[beta.0].value.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let value = Tensor::new(s, out)?;
        Ok(self.push(value, &[input, gamma, beta], || Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
            channels: c,
            hw,
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        if x.shape() != y.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| *p + *q).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, &[a, b], || Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        if x.shape() != y.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, &[a, b], || Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let f = T::of(factor);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * f).collect())?;
        Ok(self.push(value, &[input], || Op::Scale { input, factor: f }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.check(input)?;
        let value = Tensor::scalar(x.data().iter().copied().sum());
        Ok(self.push(value, &[input], || Op::Sum { input }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.check(input)?.clone().reshaped(shape)?;
        Ok(self.push(value, &[input], || Op::Reshape { input }))
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var, TensorError> {
        let s = self.check(input)?.shape().to_vec();
        if s.is_empty() {
            return Err(shape_err("flatten", "cannot flatten a scalar"));
        }
        let rest = s[1..].iter().product();
        self.reshape(input, &[s[0], rest])
    }

    /// Concatenation along the channel axis of `[N,C,H,W]` tensors.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        if inputs.is_empty() {
            return Err(shape_err("concat_channels", "no inputs"));
        }
        let first = self.check(inputs[0])?.shape().to_vec();
        if first.len() != 4 {
            return Err(shape_err("concat_channels", format!("expected 4-D inputs, got {first:?}")));
        }
        let (n, hw) = (first[0], first[2] * first[3]);
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.check(v)?.shape();
            if s.len() != 4 || s[0] != n || s[2] != first[2] || s[3] != first[3] {
                return Err(shape_err("concat_channels", format!("{s:?} incompatible with {first:?}")));
            }
            parts.push((v, s[1]));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for &(v, c) in &parts {
                out.extend_from_slice(&self.nodes[v.0].value.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![n, total, first[2], first[3]], out)?;
        Ok(self.push(value, inputs, || Op::ConcatChannels { inputs: parts, batch: n, hw }))
    }

    /// Mean over the batch of `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let x = self.check(logits)?;
        let s = x.shape();
        if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
            return Err(shape_err("softmax_cross_entropy", format!("logits {s:?} with {} targets", targets.len())));
        }
        let k = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::TargetOutOfRange { target: bad, classes: k });
        }
        let mut loss = T::zero();
        for (row, &t) in x.data().chunks(k).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[t];
        }
        let n = T::of(targets.len() as f64);
        let probs = kernels::softmax_rows(x.data(), k);
        let targets = targets.to_vec();
        Ok(self.push(Tensor::scalar(loss / n), &[logits], || Op::SoftmaxCrossEntropy { logits, probs, targets }))
    }

    /// Identity forward; the backward pass multiplies the incoming gradient by −1.
    pub fn grad_reverse(&mut self, input: Var) -> Result<Var, TensorError> {
        let value = self.check(input)?.clone();
        Ok(self.push(value, &[input], || Op::GradReverse { input }))
    }

    /// Reverse-mode accumulation from a scalar loss. Parameters placed on the
    /// tape but not reached by the loss receive zero gradients. A tape can be
    /// differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let lt = self.check(loss)?;
        if lt.len() != 1 {
            return Err(TensorError::NotScalar(lt.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::Detached);
        }
        self.consumed = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        let acc = |grads: &mut Vec<Option<Vec<T>>>, v: Var, g: Vec<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => add_into(existing, &g),
                slot @ None => *slot = Some(g),
            }
        };
        let rg = |v: Var| nodes[v.0].requires_grad;

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, weight, bias, geom, c_out } => {
                    let x = &nodes[input.0].value;
                    let w = &nodes[weight.0].value;
                    let (dx, dw, db) = kernels::conv2d_backward(
                        x.data(),
                        x.shape()[0],
                        w.data(),
                        *c_out,
                        geom,
                        &g,
                        rg(*input),
                        rg(*weight),
                        bias.is_some_and(rg),
                    );
                    if let Some(dx) = dx {
                        acc(&mut grads, *input, dx);
                    }
                    if let Some(dw) = dw {
                        acc(&mut grads, *weight, dw);
                    }
                    if let (Some(b), Some(db)) = (bias, db) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    let mut dx = vec![T::zero(); nodes[input.0].value.len()];
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        dx[src] += gv;
                    }
                    acc(&mut grads, *input, dx);
                }
                Op::AvgPoolGlobal { input, hw } => {
                    let inv = T::one() / T::of(*hw as f64);
                    let dx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, *hw)).collect();
                    acc(&mut grads, *input, dx);
                }
                Op::Linear { input, weight, bias, rows, features, outputs } => {
                    let (rows, features, outputs) = (*rows, *features, *outputs);
                    if rg(*input) {
                        let mut dx = vec![T::zero(); rows * features];
                        kernels::matmul(
                            rows,
                            outputs,
                            features,
                            &g,
                            false,
                            nodes[weight.0].value.data(),
                            false,
                            &mut dx,
                            false,
                        );
                        acc(&mut grads, *input, dx);
                    }
                    if rg(*weight) {
                        let mut dw = vec![T::zero(); outputs * features];
                        kernels::matmul(
                            outputs,
                            rows,
                            features,
                            &g,
                            true,
                            nodes[input.0].value.data(),
                            false,
                            &mut dw,
                            false,
                        );
                        acc(&mut grads, *weight, dw);
                    }
                    if let Some(b) = bias.filter(|b| rg(*b)) {
                        let mut db = vec![T::zero(); outputs];
                        for row in g.chunks(outputs) {
                            add_into(&mut db, row);
                        }
                        acc(&mut grads, b, db);
                    }
                }
                Op::Relu { input } => {
                    let x = nodes[input.0].value.data();
                    let dx = x.iter().zip(&g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                    acc(&mut grads, *input, dx);
                }
                Op::BatchNorm { input, gamma, beta, xhat, inv_std, training, channels, hw } => {
                    let (c, hw) = (*channels, *hw);
                    let n = xhat.len() / (c * hw);
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            for i in off..off + hw {
                                dgamma[ch] += g[i] * xhat[i];
                                dbeta[ch] += g[i];
                            }
                        }
                    }
                    if rg(*input) {
                        let gam = nodes[gamma.0].value.data();
                        let mut dx = vec![T::zero(); xhat.len()];
                        let m = T::of((n * hw) as f64);
                        for b in 0..n {
                            for ch in 0..c {
                                let off = (b * c + ch) * hw;
                                let k = gam[ch] * inv_std[ch];
                                for i in off..off + hw {
                                    dx[i] = if *training {
                                        k / m * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                                    } else {
                                        k * g[i]
                                    };
                                }
                            }
                        }
                        acc(&mut grads, *input, dx);
                    }
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if rg(*a) {
                        acc(&mut grads, *a, g.iter().zip(bv).map(|(p, q)| *p * *q).collect());
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, g.iter().zip(av).map(|(p, q)| *p * *q).collect());
                    }
                }
                Op::Scale { input, factor } => {
                    acc(&mut grads, *input, g.iter().map(|&v| v * *factor).collect());
                }
                Op::Sum { input } => {
                    acc(&mut grads, *input, vec![g[0]; nodes[input.0].value.len()]);
                }
                Op::Reshape { input } => acc(&mut grads, *input, g),
                Op::ConcatChannels { inputs, batch, hw } => {
                    let total: usize = inputs.iter().map(|p| p.1).sum();
                    let mut offset = 0;
                    for &(v, c) in inputs {
                        if rg(v) {
                            let mut dv = Vec::with_capacity(batch * c * hw);
                            for b in 0..*batch {
                                let start = (b * total + offset) * hw;
                                dv.extend_from_slice(&g[start..start + c * hw]);
                            }
                            acc(&mut grads, v, dv);
                        }
                        offset += c;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                    let k = probs.len() / targets.len();
                    let scale = g[0] / T::of(targets.len() as f64);
                    let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        dx[r * k + t] -= scale;
                    }
                    acc(&mut grads, *logits, dx);
                }
                Op::GradReverse { input } => {
                    acc(&mut grads, *input, g.into_iter().map(|v| -v).collect());
                }
            }
        }

        let mut leaves = BTreeMap::new();
        let mut params: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let shape = node.value.shape();
            let g = match grads[i].take() {
                Some(g) => Tensor::new(shape.to_vec(), g)?,
                None => Tensor::zeros(shape),
            };
            if let Some(id) = node.param {
                match params.get_mut(&id) {
                    Some(existing) => add_into(existing.data_mut(), g.data()),
                    None => {
                        params.insert(id, g.clone());
                    }
                }
            }
            leaves.insert(Var(i), g);
        }
        Ok(Gradients { leaves, params })
    }
}
