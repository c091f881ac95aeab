use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::image::{Image, Mask};
use super::{DataError, Domain, ImageSample};

pub const MANIFEST: &str = "manifest.csv";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
const OFF_VOCABULARY: &str = "off-vocabulary";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn img_err(path: &Path) -> impl FnOnce(::image::ImageError) -> DataError + '_ {
    move |source| DataError::Image { path: path.display().to_string(), source }
}

fn write_manifest(dir: &Path, samples: &[ImageSample], with_style: bool) -> Result<(), DataError> {
    let path = dir.join(MANIFEST);
    let tmp = dir.join("manifest.csv.tmp");
    let manifest_err = |e: csv::Error| DataError::Manifest { path: path.display().to_string(), detail: e.to_string() };
    let mut w = csv::Writer::from_path(&tmp).map_err(manifest_err)?;
    let mut header = vec!["sample_id", "shape_class", "texture_class", "domain", "file", "mask_file"];
    if with_style {
        header.push("style_id");
    }
    w.write_record(&header).map_err(manifest_err)?;
    for (i, s) in samples.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            s.shape_class.to_string(),
            s.texture_class.map_or(OFF_VOCABULARY.to_string(), |t| t.to_string()),
            s.domain.name().to_string(),
            format!("{i:06}.png"),
            format!("{i:06}_mask.png"),
        ];
        if with_style {
            row.push(s.style_id.map_or(String::new(), |v| v.to_string()));
        }
        w.write_record(&row).map_err(manifest_err)?;
    }
    w.flush().map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, &path).map_err(io_err(&path))
}

fn write_sample(dir: &Path, i: usize, s: &ImageSample) -> Result<(), DataError> {
    let p = dir.join(format!("{i:06}.png"));
    let (w, h) = (s.pixels.width() as u32, s.pixels.height() as u32);
    ::image::save_buffer(&p, &s.pixels.to_rgb8(), w, h, ::image::ColorType::Rgb8).map_err(img_err(&p))?;
    let m = dir.join(format!("{i:06}_mask.png"));
    let bytes: Vec<u8> = s.mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let (mw, mh) = (s.mask.width() as u32, s.mask.height() as u32);
    ::image::save_buffer(&m, &bytes, mw, mh, ::image::ColorType::L8).map_err(img_err(&m))
}

/// Writes one RGB PNG and one mask PNG per sample plus `manifest.csv`. A
/// `style_id` column is added when any sample carries a style. On failure the
/// manifest lists the samples written so far and an `INCOMPLETE` marker is left.
pub fn write_dataset(dir: &Path, samples: &[ImageSample]) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    let with_style = samples.iter().any(|s| s.style_id.is_some());
    fs::write(&marker, "writing\n").map_err(io_err(&marker))?;
    for (i, s) in samples.iter().enumerate() {
        if let Err(e) = write_sample(dir, i, s) {
            let _ = write_manifest(dir, &samples[..i], with_style);
            let _ = fs::write(&marker, format!("{e}\n"));
            return Err(e);
        }
    }
    write_manifest(dir, samples, with_style)?;
    fs::remove_file(&marker).map_err(io_err(&marker))
}

#[derive(Deserialize)]
struct Row {
    shape_class: usize,
    texture_class: String,
    domain: Domain,
    file: String,
    mask_file: String,
    #[serde(default)]
    style_id: Option<usize>,
}

pub fn read_dataset(dir: &Path) -> Result<Vec<ImageSample>, DataError> {
    if dir.join(INCOMPLETE_MARKER).exists() {
        return Err(DataError::Incomplete(dir.display().to_string()));
    }
    let path = dir.join(MANIFEST);
    let manifest_err = |detail: String| DataError::Manifest { path: path.display().to_string(), detail };
    let mut r = csv::Reader::from_path(&path).map_err(|e| manifest_err(e.to_string()))?;
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| manifest_err(e.to_string()))?;
        let texture_class = if row.texture_class == OFF_VOCABULARY {
            None
        } else {
            Some(
                row.texture_class
                    .parse()
                    .map_err(|_| manifest_err(format!("bad texture_class {}", row.texture_class)))?,
            )
        };
        let ip = dir.join(&row.file);
        let rgb = ::image::open(&ip).map_err(img_err(&ip))?.to_rgb8();
        let pixels = Image::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw());
        let mp = dir.join(&row.mask_file);
        let luma = ::image::open(&mp).map_err(img_err(&mp))?.to_luma8();
        let mask =
            Mask::new(luma.height() as usize, luma.width() as usize, luma.as_raw().iter().map(|&b| b >= 128).collect());
        out.push(ImageSample {
            pixels,
            mask,
            shape_class: row.shape_class,
            texture_class,
            domain: row.domain,
            style_id: row.style_id,
        });
    }
    Ok(out)
}
