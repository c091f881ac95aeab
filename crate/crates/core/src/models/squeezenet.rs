use serde::{Deserialize, Serialize};

use super::layers::{Conv, Fwd};
use crate::tensor::{ParamStore, Real, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FireSpec {
    pub squeeze: usize,
    pub expand1: usize,
    pub expand3: usize,
}

impl FireSpec {
    pub fn output_channels(&self) -> usize {
        self.expand1 + self.expand3
    }
}

/// Miniature SqueezeNet: strided stem, fire modules with 2×2 max pooling
/// after the listed fire indices, and a 1×1 convolution classifier followed
/// by global average pooling. No batch normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniSqueezeNetConfig {
    pub stem_channels: usize,
    pub fires: Vec<FireSpec>,
    pub pool_after: Vec<usize>,
    pub num_classes: usize,
}

impl Default for MiniSqueezeNetConfig {
    fn default() -> Self {
        let f = |s, e| FireSpec { squeeze: s, expand1: e, expand3: e };
        Self {
            stem_channels: 16,
            fires: vec![f(4, 8), f(4, 8), f(8, 16), f(8, 16)],
            pool_after: vec![1],
            num_classes: 6,
        }
    }
}

impl MiniSqueezeNetConfig {
    pub fn downsampling(&self) -> usize {
        4 << self.pool_after.iter().filter(|&&i| i + 1 < self.fires.len()).count()
    }

    pub fn feature_channels(&self) -> usize {
        self.fires.last().map(FireSpec::output_channels).unwrap_or(self.stem_channels)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Fire {
    squeeze: Conv,
    expand1: Conv,
    expand3: Conv,
}

impl Fire {
    fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let s = self.squeeze.forward(f, x)?;
        let s = f.tape.relu(s)?;
        let e1 = self.expand1.forward(f, s)?;
        let e1 = f.tape.relu(e1)?;
        let e3 = self.expand3.forward(f, s)?;
        let e3 = f.tape.relu(e3)?;
        f.tape.concat_channels(&[e1, e3])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MiniSqueezeNet {
    stem: Conv,
    fires: Vec<Fire>,
    pool_after: Vec<usize>,
    classifier: Conv,
}

impl MiniSqueezeNet {
    pub fn build<T: Real>(cfg: &MiniSqueezeNetConfig, seed: u64, store: &mut ParamStore<T>) -> Self {
        const BB: &str = "backbone";
        let stem = Conv::new(store, seed, "stem.conv", BB, 3, cfg.stem_channels, 3, 2, 1, true);
        let mut c_in = cfg.stem_channels;
        let mut fires = Vec::new();
        for (i, spec) in cfg.fires.iter().enumerate() {
            let name = format!("fire{i}");
            fires.push(Fire {
                squeeze: Conv::new(store, seed, &format!("{name}.squeeze"), BB, c_in, spec.squeeze, 1, 1, 0, true),
                expand1: Conv::new(
                    store,
                    seed,
                    &format!("{name}.expand1"),
                    BB,
                    spec.squeeze,
                    spec.expand1,
                    1,
                    1,
                    0,
                    true,
                ),
                expand3: Conv::new(
                    store,
                    seed,
                    &format!("{name}.expand3"),
                    BB,
                    spec.squeeze,
                    spec.expand3,
                    3,
                    1,
                    1,
                    true,
                ),
            });
            c_in = spec.output_channels();
        }
        let classifier =
            Conv::new(store, seed, "classifier.conv", "classifier-head", c_in, cfg.num_classes, 1, 1, 0, true);
        Self { stem, fires, pool_after: cfg.pool_after.clone(), classifier }
    }

    pub fn features<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let h = self.stem.forward(f, x)?;
        let h = f.tape.relu(h)?;
        let mut h = f.tape.maxpool2d(h, 2, 2)?;
        for (i, fire) in self.fires.iter().enumerate() {
            h = fire.forward(f, h)?;
            if self.pool_after.contains(&i) && i + 1 < self.fires.len() {
                h = f.tape.maxpool2d(h, 2, 2)?;
            }
        }
        Ok(h)
    }

    pub fn head<T: Real>(&self, f: &mut Fwd<'_, T>, features: Var) -> Result<Var, TensorError> {
        let c = self.classifier.forward(f, features)?;
        super::layers::pooled(f, c)
    }
}
