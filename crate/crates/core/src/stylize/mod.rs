//! Shape-preserving stylization: channel-statistic transfer in pixel space,
//! silhouette-masked texture replacement, and a procedural style corpus.

mod corpus;

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{build_style_corpus, StyleImage, StyleKind};

use crate::data::{write_dataset, DataError, Domain, Image, ImageSample};
use crate::seed::{self, Rng};

/// Floor applied to per-channel standard deviations.
pub const STYLE_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StylizeError {
    #[error("sample {0} has an empty mask")]
    EmptyMask(usize),
    #[error("style corpus is empty")]
    EmptyCorpus,
    #[error("nothing to stylize")]
    EmptyDataset,
    #[error("invalid stylizer settings: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-channel mean and population standard deviation, the latter floored at [`STYLE_EPS`].
pub fn channel_stats(img: &Image) -> ([f64; 3], [f64; 3]) {
    let mean = img.channel_mean();
    let n = (img.height() * img.width()) as f64;
    let mut var = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for k in 0..3 {
            let d = px[k] as f64 - mean[k];
            var[k] += d * d;
        }
    }
    (mean, var.map(|v| (v / n).sqrt().max(STYLE_EPS)))
}

/// Unclamped transfer: each channel is renormalized to the style's mean and
/// standard deviation, then blended with the input by `alpha`. Values are
/// returned row-major and channel-interleaved.
pub fn adain_transfer_raw(content: &Image, style_mean: [f64; 3], style_std: [f64; 3], alpha: f64) -> Vec<f64> {
    let (mu, sigma) = channel_stats(content);
    content
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            std::array::from_fn::<f64, 3, _>(|k| {
                let x = px[k] as f64;
                alpha * (style_std[k] * (x - mu[k]) / sigma[k] + style_mean[k]) + (1.0 - alpha) * x
            })
        })
        .collect()
}

pub fn adain_stats_transfer(content: &Image, style: &StyleImage, alpha: f64) -> Image {
    let raw = adain_transfer_raw(content, style.mean(), style.std(), alpha);
    to_image(content.height(), content.width(), &raw)
}

fn to_image(h: usize, w: usize, raw: &[f64]) -> Image {
    Image::new(h, w, raw.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

fn offset(rng: &mut Rng, style: &StyleImage) -> (usize, usize) {
    (rng.random_range(0..style.pixels.height()), rng.random_range(0..style.pixels.width()))
}

/// Replaces the silhouette interior with `interior` and everything else with
/// `background`, each read at a random cyclic offset. The mask is kept and the
/// texture label follows the interior style.
pub fn masked_texture_swap(
    sample: &ImageSample,
    interior: &StyleImage,
    background: &StyleImage,
    rng: &mut Rng,
) -> Result<ImageSample, StylizeError> {
    if sample.mask.count() == 0 {
        return Err(StylizeError::EmptyMask(0));
    }
    let (iy, ix) = offset(rng, interior);
    let (by, bx) = offset(rng, background);
    let read = |s: &StyleImage, oy: usize, ox: usize, y: usize, x: usize| {
        s.pixels.get((y + oy) % s.pixels.height(), (x + ox) % s.pixels.width())
    };
    let pixels = Image::from_fn(sample.pixels.height(), sample.pixels.width(), |y, x| {
        if sample.mask.get(y, x) {
            read(interior, iy, ix, y, x)
        } else {
            read(background, by, bx, y, x)
        }
    });
    Ok(ImageSample {
        pixels,
        mask: sample.mask.clone(),
        shape_class: sample.shape_class,
        texture_class: interior.kind.texture_class(),
        domain: sample.domain,
        style_id: Some(interior.id),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StylizeMode {
    PixelStat,
    MaskedTextureSwap,
    Composed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizeConfig {
    pub mode: StylizeMode,
    pub size: usize,
    pub corpus_seed: u64,
    pub corpus_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        Self { mode: StylizeMode::Composed, size: 64, corpus_seed: 0, corpus_size: 64, alpha: 1.0, seed: 0 }
    }
}

impl StylizeConfig {
    pub fn validate(&self) -> Result<(), StylizeError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(StylizeError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.size < 8 {
            return Err(StylizeError::Config(format!("size must be at least 8, got {}", self.size)));
        }
        if self.corpus_size == 0 {
            return Err(StylizeError::EmptyCorpus);
        }
        Ok(())
    }
}

/// A stylized sample together with its values before clamping and quantization.
#[derive(Clone, Debug)]
pub struct Stylized {
    pub sample: ImageSample,
    pub pre_clamp: Vec<f64>,
    pub style_id: usize,
}

/// Stylizes one sample with the draws of stream `index`: resize to the
/// canonical size, optional texture swap, optional statistic transfer to the
/// chosen style, then an `alpha` blend with the resized input.
pub fn stylize_sample(
    sample: &ImageSample,
    corpus: &[StyleImage],
    config: &StylizeConfig,
    index: usize,
) -> Result<Stylized, StylizeError> {
    if corpus.is_empty() {
        return Err(StylizeError::EmptyCorpus);
    }
    if sample.mask.count() == 0 {
        return Err(StylizeError::EmptyMask(index));
    }
    let mut rng = seed::stream(config.seed, "stylize", index as u64);
    let n = corpus.len();
    let style = rng.random_range(0..n);
    let background = if n > 1 { (style + 1 + rng.random_range(0..n - 1)) % n } else { style };
    let s = config.size;
    let resized =
        ImageSample { pixels: sample.pixels.resize(s, s), mask: sample.mask.resize_nearest(s, s), ..sample.clone() };
    let mut texture_class = sample.texture_class;
    let swapped = match config.mode {
        StylizeMode::PixelStat => resized.pixels.clone(),
        StylizeMode::MaskedTextureSwap | StylizeMode::Composed => {
            let out = masked_texture_swap(&resized, &corpus[style], &corpus[background], &mut rng)
                .map_err(|_| StylizeError::EmptyMask(index))?;
            if config.alpha > 0.0 {
                texture_class = out.texture_class;
            }
            out.pixels
        }
    };
    let transferred: Vec<f64> = match config.mode {
        StylizeMode::MaskedTextureSwap => swapped.data().iter().map(|&v| v as f64).collect(),
        StylizeMode::PixelStat | StylizeMode::Composed => {
            adain_transfer_raw(&swapped, corpus[style].mean(), corpus[style].std(), 1.0)
        }
    };
    let a = config.alpha;
    let pre_clamp: Vec<f64> = if a == 1.0 {
        transferred
    } else {
        transferred.iter().zip(resized.pixels.data()).map(|(t, &x)| a * t + (1.0 - a) * x as f64).collect()
    };
    let mut pixels = to_image(s, s, &pre_clamp);
    pixels.quantize();
    let out = ImageSample {
        pixels,
        mask: resized.mask,
        shape_class: sample.shape_class,
        texture_class,
        domain: Domain::Stylized,
        style_id: Some(corpus[style].id),
    };
    Ok(Stylized { sample: out, pre_clamp, style_id: corpus[style].id })
}

/// One stylized counterpart per input sample, in input order.
pub fn stylize_dataset(dataset: &[ImageSample], config: &StylizeConfig) -> Result<Vec<ImageSample>, StylizeError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(StylizeError::EmptyDataset);
    }
    let corpus = build_style_corpus(config.corpus_seed, config.size, config.corpus_size);
    dataset.par_iter().enumerate().map(|(i, s)| stylize_sample(s, &corpus, config, i).map(|o| o.sample)).collect()
}

/// Stylizes and writes the result in the dataset directory format, with a
/// `style_id` manifest column.
pub fn stylize_to_dir(
    dataset: &[ImageSample],
    config: &StylizeConfig,
    dir: &Path,
) -> Result<Vec<ImageSample>, StylizeError> {
    let out = stylize_dataset(dataset, config)?;
    write_dataset(dir, &out)?;
    Ok(out)
}
