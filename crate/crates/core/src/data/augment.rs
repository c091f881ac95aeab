use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::Domain;
use crate::seed::Rng;

/// Geometric entries of the augmentation menu.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropStyle {
    Resize,
    RandomCrop,
    ResizedCrop,
    Rotate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPipeline {
    pub size: usize,
    pub flip_prob: f64,
    pub menu: Vec<CropStyle>,
    /// Smallest area fraction kept by a resized crop of a base image.
    pub min_crop_proportion: f64,
    /// Smallest area fraction kept by a resized crop of a stylized image.
    pub stylized_min_crop_proportion: f64,
    pub max_rotation_degrees: f64,
    pub jitter: bool,
    pub jitter_strength: f64,
}

impl Default for AugmentPipeline {
    fn default() -> Self {
        Self {
            size: 64,
            flip_prob: 0.5,
            menu: vec![CropStyle::Resize, CropStyle::RandomCrop, CropStyle::ResizedCrop],
            min_crop_proportion: 0.33,
            stylized_min_crop_proportion: 0.5,
            max_rotation_degrees: 45.0,
            jitter: true,
            jitter_strength: 0.25,
        }
    }
}

impl AugmentPipeline {
    /// Menu with the rotation entry, as used for the controlled-acquisition dataset kind.
    pub fn with_rotation() -> Self {
        let mut p = Self::default();
        p.menu.push(CropStyle::Rotate);
        p
    }

    /// Menu keeping at least half of the image in resized crops.
    pub fn conservative_crops() -> Self {
        Self { min_crop_proportion: 0.5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.size == 0 {
            return Err("augmentation size must be positive".into());
        }
        if self.menu.is_empty() {
            return Err("augmentation menu is empty".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(format!("flip probability {} outside [0, 1]", self.flip_prob));
        }
        for p in [self.min_crop_proportion, self.stylized_min_crop_proportion] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(format!("crop proportion {p} outside (0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.jitter_strength) {
            return Err(format!("jitter strength {} outside [0, 1)", self.jitter_strength));
        }
        Ok(())
    }
}

/// Multiplicative brightness, contrast and saturation factors and a hue
/// shift in turns of the hue circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CropOp {
    Resize,
    /// Window of the output size at this offset; negative offsets pad with zeros.
    RandomCrop {
        top: isize,
        left: isize,
    },
    ResizedCrop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        proportion: f64,
    },
    Rotate {
        degrees: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub jitter: Option<ColorJitter>,
    pub flip: bool,
    pub op: CropOp,
}

fn draw_jitter(p: &AugmentPipeline, rng: &mut Rng) -> Option<ColorJitter> {
    let s = p.jitter_strength;
    p.jitter.then(|| ColorJitter {
        brightness: rng.random_range(1.0 - s..=1.0 + s),
        contrast: rng.random_range(1.0 - s..=1.0 + s),
        saturation: rng.random_range(1.0 - s..=1.0 + s),
        // A strength of 0.25 spans a quarter of 180 degrees either way.
        hue: rng.random_range(-s..=s) * 0.5,
    })
}

fn draw_resized_crop(h: usize, w: usize, min_prop: f64, rng: &mut Rng) -> CropOp {
    let area = (h * w) as f64;
    let (lo, hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let proportion = rng.random_range(min_prop..=1.0);
        let aspect = rng.random_range(lo..=hi).exp();
        let cw = (area * proportion * aspect).sqrt().round() as usize;
        let ch = (area * proportion / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return CropOp::ResizedCrop { top, left, height: ch, width: cw, proportion };
        }
    }
    CropOp::ResizedCrop { top: 0, left: 0, height: h, width: w, proportion: 1.0 }
}

fn draw_random_crop(h: usize, w: usize, size: usize, rng: &mut Rng) -> CropOp {
    let mut offset = |extent: usize| {
        if extent >= size {
            rng.random_range(0..=extent - size) as isize
        } else {
            -(((size - extent) / 2) as isize)
        }
    };
    let top = offset(h);
    let left = offset(w);
    CropOp::RandomCrop { top, left }
}

/// Draws the random decisions of the base-image pipeline for an `h × w` input.
pub fn plan_base(p: &AugmentPipeline, h: usize, w: usize, rng: &mut Rng) -> AugmentPlan {
    let jitter = draw_jitter(p, rng);
    let flip = rng.random::<f64>() < p.flip_prob;
    let op = match p.menu[rng.random_range(0..p.menu.len())] {
        CropStyle::Resize => CropOp::Resize,
        CropStyle::RandomCrop => draw_random_crop(h, w, p.size, rng),
        CropStyle::ResizedCrop => draw_resized_crop(h, w, p.min_crop_proportion, rng),
        CropStyle::Rotate => {
            CropOp::Rotate { degrees: rng.random_range(-p.max_rotation_degrees..=p.max_rotation_degrees) }
        }
    };
    AugmentPlan { jitter, flip, op }
}

/// Draws the decisions of the stylized-image pipeline: plain resize or a resized crop.
pub fn plan_stylized(p: &AugmentPipeline, h: usize, w: usize, rng: &mut Rng) -> AugmentPlan {
    let jitter = draw_jitter(p, rng);
    let flip = rng.random::<f64>() < p.flip_prob;
    let op = if rng.random::<bool>() {
        CropOp::Resize
    } else {
        draw_resized_crop(h, w, p.stylized_min_crop_proportion, rng)
    };
    AugmentPlan { jitter, flip, op }
}

fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u8 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn gray(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

pub(crate) fn apply_jitter(img: &Image, j: &ColorJitter) -> Image {
    let px = |c: [f32; 3]| c.map(f64::from);
    let clamp = |c: [f64; 3]| c.map(|v| v.clamp(0.0, 1.0));
    let n = (img.height() * img.width()) as f64;
    let bright: Vec<[f64; 3]> =
        img.data().chunks_exact(3).map(|c| clamp(px([c[0], c[1], c[2]]).map(|v| v * j.brightness))).collect();
    let mean_gray = bright.iter().map(|&c| gray(c)).sum::<f64>() / n;
    let out: Vec<f32> = bright
        .into_iter()
        .flat_map(|c| {
            let c = clamp(c.map(|v| (v - mean_gray) * j.contrast + mean_gray));
            let g = gray(c);
            let c = clamp(c.map(|v| g + (v - g) * j.saturation));
            let [h, s, v] = rgb_to_hsv(c);
            clamp(hsv_to_rgb([h + j.hue, s, v])).map(|v| v as f32)
        })
        .collect();
    Image::new(img.height(), img.width(), out)
}

fn apply_op(img: &Image, op: &CropOp, size: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    match *op {
        CropOp::Resize => img.resize(size, size),
        CropOp::RandomCrop { top, left } => Image::from_fn(size, size, |y, x| {
            let (sy, sx) = (top + y as isize, left + x as isize);
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                [0.0; 3]
            } else {
                img.get(sy as usize, sx as usize)
            }
        }),
        CropOp::ResizedCrop { top, left, height, width, .. } => {
            img.resample(top as f64, left as f64, height as f64, width as f64, size, size)
        }
        CropOp::Rotate { degrees } => {
            let theta = degrees.to_radians();
            let (s, c) = theta.sin_cos();
            let side = h.min(w) as f64 / (c.abs() + s.abs());
            let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
            Image::from_fn(size, size, |y, x| {
                let v = (y as f64 + 0.5) / size as f64 * side - side / 2.0;
                let u = (x as f64 + 0.5) / size as f64 * side - side / 2.0;
                let (sx, sy) = (c * u - s * v + cx, s * u + c * v + cy);
                img.sample_bilinear(sy - 0.5, sx - 0.5)
            })
        }
    }
}

/// Executes a plan: color jitter, then the horizontal flip, then the
/// geometric entry, always producing a `size × size` image in `[0, 1]`.
pub fn augment(img: &Image, plan: &AugmentPlan, size: usize) -> Image {
    let mut cur = match &plan.jitter {
        Some(j) => apply_jitter(img, j),
        None => img.clone(),
    };
    if plan.flip {
        cur = cur.flip_horizontal();
    }
    let mut out = apply_op(&cur, &plan.op, size);
    out.clamp01();
    out
}

pub fn augment_base(img: &Image, p: &AugmentPipeline, rng: &mut Rng) -> Image {
    augment(img, &plan_base(p, img.height(), img.width(), rng), p.size)
}

pub fn augment_stylized(img: &Image, p: &AugmentPipeline, rng: &mut Rng) -> Image {
    augment(img, &plan_stylized(p, img.height(), img.width(), rng), p.size)
}

/// Per-domain dispatch used by the training loop.
pub fn augment_for(img: &Image, domain: Domain, p: &AugmentPipeline, rng: &mut Rng) -> Image {
    match domain {
        Domain::Base => augment_base(img, p, rng),
        Domain::Stylized => augment_stylized(img, p, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| [y as f32 / h as f32, x as f32 / w as f32, 0.5])
    }

    #[test]
    fn hsv_round_trip() {
        for i in 0..200 {
            let c = [(i % 7) as f64 / 6.0, (i % 11) as f64 / 10.0, (i % 5) as f64 / 4.0];
            let back = hsv_to_rgb(rgb_to_hsv(c));
            assert!(c.iter().zip(back).all(|(a, b)| (a - b).abs() < 1e-12), "{c:?}");
        }
    }

    #[test]
    fn identity_jitter_is_identity() {
        let img = ramp(9, 9);
        let j = ColorJitter { brightness: 1.0, contrast: 1.0, saturation: 1.0, hue: 0.0 };
        let out = apply_jitter(&img, &j);
        assert!(img.data().iter().zip(out.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn hue_shift_by_third_rotates_primaries() {
        let img = Image::filled(2, 2, [1.0, 0.0, 0.0]);
        let j = ColorJitter { brightness: 1.0, contrast: 1.0, saturation: 1.0, hue: 1.0 / 3.0 };
        let out = apply_jitter(&img, &j);
        assert!(out.get(0, 0).iter().zip([0.0, 1.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn zero_rotation_is_a_resize() {
        let img = ramp(40, 40);
        let plan = AugmentPlan { jitter: None, flip: false, op: CropOp::Rotate { degrees: 0.0 } };
        let a = augment(&img, &plan, 20);
        let b = img.resize(20, 20);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-6));
    }

    #[test]
    fn rotation_crop_stays_inside_the_image() {
        let img = Image::filled(32, 32, [1.0, 1.0, 1.0]);
        for deg in [-45.0, -30.0, 12.5, 45.0] {
            let plan = AugmentPlan { jitter: None, flip: false, op: CropOp::Rotate { degrees: deg } };
            let out = augment(&img, &plan, 16);
            assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-6), "{deg}");
        }
    }

    #[test]
    fn stylized_plans_use_two_entries() {
        let p = AugmentPipeline::default();
        let mut rng = seed::stream(1, "aug", 0);
        let mut seen = [false; 2];
        for _ in 0..200 {
            match plan_stylized(&p, 64, 64, &mut rng).op {
                CropOp::Resize => seen[0] = true,
                CropOp::ResizedCrop { .. } => seen[1] = true,
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(seen, [true, true]);
    }
}
