use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

/// The texture vocabulary. Class `i` of a dataset uses `Texture::ALL[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    Stripes,
    Checker,
    Dots,
    Noise,
    Gradient,
    Rings,
}

impl Texture {
    pub const ALL: [Texture; 6] =
        [Texture::Stripes, Texture::Checker, Texture::Dots, Texture::Noise, Texture::Gradient, Texture::Rings];

    pub fn name(self) -> &'static str {
        match self {
            Texture::Stripes => "stripes",
            Texture::Checker => "checker",
            Texture::Dots => "dots",
            Texture::Noise => "noise",
            Texture::Gradient => "gradient",
            Texture::Rings => "rings",
        }
    }

    /// Foreground and background colors characteristic of the texture.
    pub fn palette(self) -> [[f32; 3]; 2] {
        match self {
            Texture::Stripes => [[0.85, 0.15, 0.15], [0.95, 0.85, 0.2]],
            Texture::Checker => [[0.1, 0.2, 0.8], [0.9, 0.9, 0.95]],
            Texture::Dots => [[0.1, 0.65, 0.15], [0.05, 0.15, 0.05]],
            Texture::Noise => [[0.55, 0.2, 0.65], [0.85, 0.6, 0.9]],
            Texture::Gradient => [[0.95, 0.55, 0.1], [0.45, 0.25, 0.1]],
            Texture::Rings => [[0.1, 0.75, 0.75], [0.8, 0.1, 0.55]],
        }
    }
}

/// Jittered instance parameters for one rendering of a texture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub texture: Texture,
    pub colors: [[f32; 3]; 2],
    pub period: f64,
    pub phase: f64,
    pub angle: f64,
    pub origin: (f64, f64),
    pub noise_seed: u64,
}

impl TextureParams {
    pub fn draw(texture: Texture, size: usize, rng: &mut Rng) -> Self {
        Self::draw_with_colors(texture, texture.palette(), size, rng)
    }

    pub fn draw_with_colors(texture: Texture, base: [[f32; 3]; 2], size: usize, rng: &mut Rng) -> Self {
        let colors = base.map(|c| c.map(|v| (v + rng.random_range(-0.06f32..=0.06)).clamp(0.0, 1.0)));
        let period = size as f64 / 8.0 * rng.random_range(0.8..1.2);
        let phase = rng.random_range(0.0..2.0 * PI);
        let angle = rng.random_range(0.0..PI);
        let origin = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let noise_seed = rng.random();
        Self { texture, colors, period, phase, angle, origin, noise_seed }
    }

    /// Color at pixel center `(y, x)` of a `size`-wide canvas.
    pub fn color(&self, y: usize, x: usize, size: usize) -> [f32; 3] {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * px + s * py, -s * px + c * py);
        let p = self.period;
        let t = match self.texture {
            Texture::Stripes => f64::from(u8::from((2.0 * PI * u / p + self.phase).sin() > 0.0)),
            Texture::Checker => {
                let k = (u / p + self.phase).floor() as i64 + (v / p + self.phase).floor() as i64;
                f64::from(u8::from(k.rem_euclid(2) == 0))
            }
            Texture::Dots => {
                let cell = p * 0.9;
                let (fu, fv) = ((u / cell + self.phase).rem_euclid(1.0) - 0.5, (v / cell).rem_euclid(1.0) - 0.5);
                f64::from(u8::from(fu.hypot(fv) < 0.3))
            }
            Texture::Noise => value_noise(u / (0.5 * p), v / (0.5 * p), self.noise_seed),
            Texture::Gradient => (u / size as f64 - (self.origin.0 / size as f64 - 0.5)).clamp(0.0, 1.0),
            Texture::Rings => {
                let r = (px - self.origin.0).hypot(py - self.origin.1);
                f64::from(u8::from((2.0 * PI * r / p + self.phase).sin() > 0.0))
            }
        } as f32;
        let [a, b] = self.colors;
        std::array::from_fn(|k| a[k] * t + b[k] * (1.0 - t))
    }
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut z =
        seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
pub(crate) fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let top = lattice(ix, iy, seed) * (1.0 - sx) + lattice(ix + 1, iy, seed) * sx;
    let bot = lattice(ix, iy + 1, seed) * (1.0 - sx) + lattice(ix + 1, iy + 1, seed) * sx;
    top * (1.0 - sy) + bot * sy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn colors_stay_in_range_and_vary() {
        let mut rng = seed::stream(3, "tex", 0);
        for t in Texture::ALL {
            let p = TextureParams::draw(t, 64, &mut rng);
            let px: Vec<[f32; 3]> = (0..64 * 64).map(|i| p.color(i / 64, i % 64, 64)).collect();
            assert!(px.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            let distinct = px.iter().any(|c| c != &px[0]);
            assert!(distinct, "{t:?} rendered a constant field");
        }
    }

    #[test]
    fn noise_is_bounded_and_continuous() {
        for i in 0..500 {
            let (x, y) = (i as f64 * 0.173, i as f64 * 0.071);
            let n = value_noise(x, y, 9);
            assert!((0.0..1.0).contains(&n));
            assert!((value_noise(x + 1e-6, y, 9) - n).abs() < 1e-4);
        }
    }
}
