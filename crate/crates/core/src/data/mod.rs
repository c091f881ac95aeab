//! Procedural shape/texture datasets, cue-conflict sets, stratified splits,
//! augmentation pipelines and the on-disk dataset format.

mod augment;
mod image;
mod io;
mod shapes;
mod textures;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{
    augment, augment_base, augment_for, augment_stylized, plan_base, plan_stylized, AugmentPipeline, AugmentPlan,
    ColorJitter, CropOp, CropStyle,
};
pub use image::{images_to_tensor, Image, Mask};
pub use io::{read_dataset, write_dataset, INCOMPLETE_MARKER, MANIFEST};
pub use shapes::{shape_mask, Placement, Shape};
pub(crate) use textures::value_noise;
pub use textures::{Texture, TextureParams};

use crate::seed::{self, Rng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shape {shape} does not fit a {size}px canvas after {attempts} attempts")]
    ShapeDoesNotFit { shape: &'static str, size: usize, attempts: usize },
    #[error("invalid dataset settings: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest error in {path}: {detail}")]
    Manifest { path: String, detail: String },
    #[error("image error at {path}: {source}")]
    Image { path: String, source: ::image::ImageError },
    #[error("dataset at {0} is marked incomplete")]
    Incomplete(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Base,
    Stylized,
}

impl Domain {
    pub fn index(self) -> usize {
        match self {
            Domain::Base => 0,
            Domain::Stylized => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Base => "base",
            Domain::Stylized => "stylized",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub pixels: Image,
    pub mask: Mask,
    pub shape_class: usize,
    /// `None` when the texture lies outside the vocabulary.
    pub texture_class: Option<usize>,
    pub domain: Domain,
    pub style_id: Option<usize>,
}

pub const DEFAULT_BACKGROUNDS: [[f32; 3]; 6] =
    [[0.5, 0.5, 0.5], [0.85, 0.85, 0.8], [0.2, 0.2, 0.25], [0.6, 0.7, 0.6], [0.7, 0.6, 0.55], [0.45, 0.5, 0.65]];

fn default_backgrounds() -> Vec<[f32; 3]> {
    DEFAULT_BACKGROUNDS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_shape_classes: usize,
    pub num_texture_classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Probability that a sample carries its class's designated texture.
    pub rho: f64,
    #[serde(default = "default_backgrounds")]
    pub backgrounds: Vec<[f32; 3]>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_shape_classes: 6,
            num_texture_classes: 6,
            per_class: 100,
            size: 96,
            rho: 1.0,
            backgrounds: default_backgrounds(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Config(m));
        if !(2..=Shape::ALL.len()).contains(&self.num_shape_classes) {
            return fail(format!("num_shape_classes must be in 2..=6, got {}", self.num_shape_classes));
        }
        if !(2..=Texture::ALL.len()).contains(&self.num_texture_classes) {
            return fail(format!("num_texture_classes must be in 2..=6, got {}", self.num_texture_classes));
        }
        if self.per_class < 5 {
            return fail(format!("per_class must be at least 5, got {}", self.per_class));
        }
        if self.size < 16 {
            return fail(format!("size must be at least 16, got {}", self.size));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.backgrounds.is_empty() {
            return fail("background palette is empty".into());
        }
        Ok(())
    }

    /// Texture class designated for `shape_class`.
    pub fn designated_texture(&self, shape_class: usize) -> usize {
        shape_class % self.num_texture_classes
    }
}

const MAX_ATTEMPTS: usize = 10;

/// Renders one sample and also returns where the shape was drawn.
pub fn generate_sample_traced(
    shape_class: usize,
    texture_class: usize,
    background: [f32; 3],
    size: usize,
    rng: &mut Rng,
) -> Result<(ImageSample, Placement), DataError> {
    assert!(shape_class < Shape::ALL.len() && texture_class < Texture::ALL.len(), "class out of range");
    let shape = Shape::ALL[shape_class];
    let mut scale = 1.0;
    for _ in 0..MAX_ATTEMPTS {
        let radius = size as f64 * rng.random_range(0.25..0.4) * scale;
        let margin = radius + 1.0;
        if 2.0 * margin > size as f64 || radius < 3.0 {
            scale *= 0.8;
            continue;
        }
        let p = Placement {
            cx: rng.random_range(margin..=size as f64 - margin),
            cy: rng.random_range(margin..=size as f64 - margin),
            radius,
            angle: rng.random_range(0.0..2.0 * PI),
        };
        let mask = shape_mask(shape, &p, size, size);
        if !mask.is_connected() {
            scale *= 0.8;
            continue;
        }
        let tex = TextureParams::draw(Texture::ALL[texture_class], size, rng);
        let bg = background.map(|v| (v + rng.random_range(-0.04f32..=0.04)).clamp(0.0, 1.0));
        let mut pixels = Image::from_fn(size, size, |y, x| if mask.get(y, x) { tex.color(y, x, size) } else { bg });
        pixels.quantize();
        let sample = ImageSample {
            pixels,
            mask,
            shape_class,
            texture_class: Some(texture_class),
            domain: Domain::Base,
            style_id: None,
        };
        return Ok((sample, p));
    }
    Err(DataError::ShapeDoesNotFit { shape: shape.name(), size, attempts: MAX_ATTEMPTS })
}

pub fn generate_sample(
    shape_class: usize,
    texture_class: usize,
    background: [f32; 3],
    size: usize,
    rng: &mut Rng,
) -> Result<ImageSample, DataError> {
    generate_sample_traced(shape_class, texture_class, background, size, rng).map(|(s, _)| s)
}

fn other_texture(spec: &DatasetSpec, designated: usize, rng: &mut Rng) -> usize {
    let k = rng.random_range(0..spec.num_texture_classes - 1);
    if k >= designated {
        k + 1
    } else {
        k
    }
}

/// Class-major list of `num_shape_classes × per_class` samples.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Vec<ImageSample>, DataError> {
    spec.validate()?;
    (0..spec.num_shape_classes * spec.per_class)
        .into_par_iter()
        .map(|i| {
            let shape = i / spec.per_class;
            let mut rng = seed::stream(spec.seed, "sample", i as u64);
            let designated = spec.designated_texture(shape);
            let texture =
                if rng.random::<f64>() < spec.rho { designated } else { other_texture(spec, designated, &mut rng) };
            let bg = spec.backgrounds[rng.random_range(0..spec.backgrounds.len())];
            generate_sample(shape, texture, bg, spec.size, &mut rng)
        })
        .collect()
}

/// `n` samples whose texture is drawn uniformly from the textures other than
/// the shape's designated one; shape classes cycle so counts are balanced.
pub fn build_cue_conflict_set(spec: &DatasetSpec, n: usize) -> Result<Vec<ImageSample>, DataError> {
    spec.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let shape = i % spec.num_shape_classes;
            let mut rng = seed::stream(spec.seed, "cue-conflict", i as u64);
            let texture = other_texture(spec, spec.designated_texture(shape), &mut rng);
            let bg = spec.backgrounds[rng.random_range(0..spec.backgrounds.len())];
            generate_sample(shape, texture, bg, spec.size, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_fraction: 0.2, val_fraction: 0.2, stratified: true, seed: 0 }
    }
}

/// `(test, val, train)` sizes for a class of `n` samples.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> (usize, usize, usize) {
    let floor = |f: f64, m: usize| ((f * m as f64) + 1e-9).floor() as usize;
    let test = floor(spec.test_fraction, n);
    let val = floor(spec.val_fraction, n - test);
    (test, val, n - test - val)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded per-class shuffle followed by the floor rule. Indices in each part
/// are returned in ascending order.
pub fn split_indices(labels: &[usize], spec: &SplitSpec) -> SplitIndices {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    if spec.stratified {
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        for c in 0..classes {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if !members.is_empty() {
                groups.push((c, members));
            }
        }
    } else {
        groups.push((0, (0..labels.len()).collect()));
    }
    let mut out = SplitIndices::default();
    for (c, mut members) in groups {
        members.shuffle(&mut seed::stream(spec.seed, "split", c as u64));
        let (test, val, _) = split_sizes(members.len(), spec);
        out.test.extend_from_slice(&members[..test]);
        out.val.extend_from_slice(&members[test..test + val]);
        out.train.extend_from_slice(&members[test + val..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    out
}

#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<ImageSample>,
    pub val: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

pub fn split(dataset: &[ImageSample], spec: &SplitSpec) -> Split {
    let labels: Vec<usize> = dataset.iter().map(|s| s.shape_class).collect();
    let idx = split_indices(&labels, spec);
    let take = |ix: &[usize]| ix.iter().map(|&i| dataset[i].clone()).collect();
    Split { train: take(&idx.train), val: take(&idx.val), test: take(&idx.test) }
}
