use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::channel_stats;
use crate::data::{Image, Texture, TextureParams};
use crate::seed::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleKind {
    /// A rendering of one vocabulary texture.
    Vocabulary(usize),
    /// Random color fields and strokes.
    Painting,
}

impl StyleKind {
    pub fn texture_class(self) -> Option<usize> {
        match self {
            StyleKind::Vocabulary(t) => Some(t),
            StyleKind::Painting => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleImage {
    pub id: usize,
    pub kind: StyleKind,
    pub pixels: Image,
    mean: [f64; 3],
    std: [f64; 3],
}

impl StyleImage {
    pub fn new(id: usize, kind: StyleKind, pixels: Image) -> Self {
        let (mean, std) = channel_stats(&pixels);
        Self { id, kind, pixels, mean, std }
    }

    pub fn mean(&self) -> [f64; 3] {
        self.mean
    }

    pub fn std(&self) -> [f64; 3] {
        self.std
    }
}

fn random_color(rng: &mut Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn painting(size: usize, rng: &mut Rng) -> Image {
    let base = random_color(rng);
    let layers: Vec<([f32; 3], f64, u64)> =
        (0..3).map(|o| (random_color(rng), size as f64 / (4.0 * (1 << o) as f64), rng.random())).collect();
    let mut img = Image::from_fn(size, size, |y, x| {
        let mut c = base;
        for &(col, scale, s) in &layers {
            let t = crate::data::value_noise(y as f64 / scale, x as f64 / scale, s) as f32;
            for k in 0..3 {
                c[k] = c[k] * (1.0 - 0.6 * t) + col[k] * 0.6 * t;
            }
        }
        c
    });
    for _ in 0..rng.random_range(2..=5) {
        let col = random_color(rng);
        let (y0, x0) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let (y1, x1) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let width = rng.random_range(0.5..size as f64 / 40.0 + 0.5);
        let (dy, dx) = (y1 - y0, x1 - x0);
        let len2 = (dy * dy + dx * dx).max(1e-9);
        for y in 0..size {
            for x in 0..size {
                let (py, px) = (y as f64 + 0.5 - y0, x as f64 + 0.5 - x0);
                let t = ((py * dy + px * dx) / len2).clamp(0.0, 1.0);
                if (py - t * dy).hypot(px - t * dx) <= width {
                    img.set(y, x, col);
                }
            }
        }
    }
    img
}

/// `count` styles of `size × size`: the first `3 · count / 8` cycle through the
/// texture vocabulary, the rest are paintings.
pub fn build_style_corpus(seed: u64, size: usize, count: usize) -> Vec<StyleImage> {
    let vocabulary = 3 * count / 8;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(seed, "style", i as u64);
            let (kind, mut pixels) = if i < vocabulary {
                let t = i % Texture::ALL.len();
                let params = TextureParams::draw(Texture::ALL[t], size, &mut rng);
                (StyleKind::Vocabulary(t), Image::from_fn(size, size, |y, x| params.color(y, x, size)))
            } else {
                (StyleKind::Painting, painting(size, &mut rng))
            };
            pixels.quantize();
            StyleImage::new(i, kind, pixels)
        })
        .collect()
}
