#![allow(dead_code)]

use rand::Rng;
use shapebias::data::Image;
use shapebias::harness::ExperimentConfig;
use shapebias::models::{MiniResNetConfig, ModelConfig};
use shapebias::seed;
use shapebias::stylize::{adain_transfer_raw, channel_stats};
use shapebias::tensor::{Tape, Tensor, TensorError, Var};

/// A two-class config that trains in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.num_shape_classes = 2;
    c.dataset.num_texture_classes = 2;
    c.dataset.per_class = 10;
    c.dataset.size = 32;
    c.augment.size = 32;
    c.stylize.size = 32;
    c.stylize.corpus_size = 8;
    c.cue_conflict_size = 8;
    c.max_epochs = 3;
    c.batch_size = 8;
    c.model = ModelConfig::Resnet(MiniResNetConfig {
        stem_channels: 4,
        stage_widths: vec![4, 8],
        blocks_per_stage: 1,
        num_classes: 2,
    });
    c
}

pub fn random_image(h: usize, w: usize, stream: u64) -> Image {
    let mut rng = seed::stream(11, "prop-image", stream);
    Image::new(h, w, (0..h * w * 3).map(|_| rng.random::<f32>()).collect())
}

fn channel_moments(raw: &[f64], k: usize) -> (f64, f64) {
    let vals: Vec<f64> = raw.iter().skip(k).step_by(3).copied().collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Transfers a random style onto random content and checks the pre-clamp
/// channel statistics (α = 1) and the identity (α = 0).
pub fn check_adain(content: (usize, usize), style: (usize, usize), stream: u64) -> Result<(), String> {
    let content = random_image(content.0, content.1, stream);
    let style = random_image(style.0, style.1, stream ^ 0x5eed);
    let (s_mean, s_std) = channel_stats(&style);
    let raw = adain_transfer_raw(&content, s_mean, s_std, 1.0);
    for k in 0..3 {
        let (m, s) = channel_moments(&raw, k);
        if (m - s_mean[k]).abs() > 1e-6 || (s - s_std[k]).abs() > 1e-6 {
            return Err(format!("channel {k}: mean {m} vs {}, std {s} vs {}", s_mean[k], s_std[k]));
        }
    }
    let identity = adain_transfer_raw(&content, s_mean, s_std, 0.0);
    if !identity.iter().zip(content.data()).all(|(a, &b)| *a == b as f64) {
        return Err("alpha 0 changed the content".into());
    }
    Ok(())
}

/// A random chain of differentiable ops drawn from `ops`, applied to `x`.
fn chain(tape: &mut Tape<f64>, x: Var, ops: &[u8], consts: &[Tensor<f64>]) -> Result<Var, TensorError> {
    let mut v = x;
    for (i, op) in ops.iter().enumerate() {
        let c = tape.constant(consts[i % consts.len()].clone());
        v = match op % 5 {
            0 => tape.mul(v, c)?,
            1 => tape.add(v, c)?,
            2 => tape.relu(v)?,
            3 => tape.scale(v, -0.75)?,
            _ => {
                let sq = tape.mul(v, v)?;
                tape.scale(sq, 0.5)?
            }
        };
    }
    Ok(v)
}

/// Builds `head · after(grad_reverse(before(x)))` and the same graph without
/// the reversal, then checks the forward values are bit-identical and the
/// input gradients are exact negations.
pub fn check_grad_reverse(len: usize, before: &[u8], after: &[u8], stream: u64) -> Result<(), String> {
    let mut rng = seed::stream(stream, "prop-graph", 0);
    let mut rand_t = |n: usize| Tensor::new(vec![n], (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let x0 = rand_t(len);
    let consts: Vec<Tensor<f64>> = (0..3).map(|_| rand_t(len)).collect();
    let head = rand_t(len);

    let run = |reverse: bool| -> Result<(f64, Tensor<f64>), String> {
        let mut tape = Tape::new();
        let x = tape.input(x0.clone(), true);
        let h = chain(&mut tape, x, before, &consts).map_err(|e| e.to_string())?;
        let h2 = if reverse { tape.grad_reverse(h).map_err(|e| e.to_string())? } else { h };
        if reverse && !tape.value(h2).data().iter().zip(tape.value(h).data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            return Err("grad_reverse changed the forward value".into());
        }
        let y = chain(&mut tape, h2, after, &consts).map_err(|e| e.to_string())?;
        let w = tape.constant(head.clone());
        let yw = tape.mul(y, w).map_err(|e| e.to_string())?;
        let loss = tape.sum(yw).map_err(|e| e.to_string())?;
        let value = tape.value(loss).item();
        let g = tape.backward(loss).map_err(|e| e.to_string())?;
        Ok((value, g.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(&[len]))))
    };
    let (plain_loss, plain) = run(false)?;
    let (rev_loss, reversed) = run(true)?;
    if plain_loss.to_bits() != rev_loss.to_bits() {
        return Err(format!("loss {plain_loss} vs {rev_loss}"));
    }
    // Value equality: a gradient masked to zero may carry either sign.
    match plain.data().iter().zip(reversed.data()).position(|(a, b)| -a != *b) {
        Some(i) => Err(format!("gradient {i}: {} vs {}", plain.data()[i], reversed.data()[i])),
        None => Ok(()),
    }
}
