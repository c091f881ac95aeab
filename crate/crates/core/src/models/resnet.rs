use serde::{Deserialize, Serialize};

use super::layers::{pooled, Bn, Conv, Fwd, Lin};
use super::Buffers;
use crate::tensor::{ParamStore, Real, TensorError, Var};

/// Miniature residual network: a strided 3×3 stem with max pooling, then
/// stages of basic blocks (two 3×3 convolutions with an additive skip).
/// The first block of every stage after the first halves the resolution and
/// uses a 1×1 projection on its skip path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniResNetConfig {
    pub stem_channels: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
}

impl Default for MiniResNetConfig {
    fn default() -> Self {
        Self { stem_channels: 8, stage_widths: vec![8, 16, 32], blocks_per_stage: 2, num_classes: 6 }
    }
}

impl MiniResNetConfig {
    /// Total spatial reduction between the input and the final feature map.
    pub fn downsampling(&self) -> usize {
        4 << self.stage_widths.len().saturating_sub(1)
    }

    pub fn feature_channels(&self) -> usize {
        *self.stage_widths.last().unwrap_or(&self.stem_channels)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    conv1: Conv,
    bn1: Bn,
    conv2: Conv,
    bn2: Bn,
    down: Option<(Conv, Bn)>,
}

impl ResBlock {
    fn forward<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let h = self.conv1.forward(f, x)?;
        let h = self.bn1.forward(f, h)?;
        let h = f.tape.relu(h)?;
        let h = self.conv2.forward(f, h)?;
        let h = self.bn2.forward(f, h)?;
        let skip = match &self.down {
            Some((conv, bn)) => {
                let s = conv.forward(f, x)?;
                bn.forward(f, s)?
            }
            None => x,
        };
        let sum = f.tape.add(h, skip)?;
        f.tape.relu(sum)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MiniResNet {
    stem: Conv,
    stem_bn: Bn,
    blocks: Vec<ResBlock>,
    fc: Lin,
}

impl MiniResNet {
    pub fn build<T: Real>(
        cfg: &MiniResNetConfig,
        seed: u64,
        store: &mut ParamStore<T>,
        buffers: &mut Buffers<T>,
    ) -> Self {
        const BB: &str = "backbone";
        let stem = Conv::new(store, seed, "stem.conv", BB, 3, cfg.stem_channels, 3, 2, 1, false);
        let stem_bn = Bn::new(store, buffers, "stem.bn", BB, cfg.stem_channels);
        let mut blocks = Vec::new();
        let mut c_in = cfg.stem_channels;
        for (si, &width) in cfg.stage_widths.iter().enumerate() {
            for bi in 0..cfg.blocks_per_stage {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let name = format!("stage{si}.block{bi}");
                let conv1 = Conv::new(store, seed, &format!("{name}.conv1"), BB, c_in, width, 3, stride, 1, false);
                let bn1 = Bn::new(store, buffers, &format!("{name}.bn1"), BB, width);
                let conv2 = Conv::new(store, seed, &format!("{name}.conv2"), BB, width, width, 3, 1, 1, false);
                let bn2 = Bn::new(store, buffers, &format!("{name}.bn2"), BB, width);
                let down = (stride != 1 || c_in != width).then(|| {
                    let c = Conv::new(store, seed, &format!("{name}.down.conv"), BB, c_in, width, 1, stride, 0, false);
                    let b = Bn::new(store, buffers, &format!("{name}.down.bn"), BB, width);
                    (c, b)
                });
                blocks.push(ResBlock { conv1, bn1, conv2, bn2, down });
                c_in = width;
            }
        }
        let fc = Lin::new(store, seed, "fc", "classifier-head", c_in, cfg.num_classes);
        Self { stem, stem_bn, blocks, fc }
    }

    pub fn features<T: Real>(&self, f: &mut Fwd<'_, T>, x: Var) -> Result<Var, TensorError> {
        let h = self.stem.forward(f, x)?;
        let h = self.stem_bn.forward(f, h)?;
        let h = f.tape.relu(h)?;
        let mut h = f.tape.maxpool2d(h, 2, 2)?;
        for block in &self.blocks {
            h = block.forward(f, h)?;
        }
        Ok(h)
    }

    pub fn head<T: Real>(&self, f: &mut Fwd<'_, T>, features: Var) -> Result<Var, TensorError> {
        let p = pooled(f, features)?;
        self.fc.forward(f, p)
    }

    /// Runs only the residual blocks (after the stem) on `x`.
    #[cfg(test)]
    pub fn blocks_only<T: Real>(
        &self,
        f: &mut Fwd<'_, T>,
        x: Var,
        range: std::ops::Range<usize>,
    ) -> Result<Var, TensorError> {
        let mut h = x;
        for block in &self.blocks[range] {
            h = block.forward(f, h)?;
        }
        Ok(h)
    }

    #[cfg(test)]
    pub fn block_conv_weights(&self) -> Vec<crate::tensor::ParamId> {
        self.blocks.iter().flat_map(|b| [b.conv1.w, b.conv2.w]).collect()
    }
}
