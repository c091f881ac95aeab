//! Renders one sample under a row of random augmentations for each pipeline.
//!
//! ```text
//! cargo run --release --example augment_preview -- out.png [variants]
//! ```

use shapebias::data::{augment_base, augment_stylized, build_dataset, AugmentPipeline, DatasetSpec, Image};
use shapebias::seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "augment_preview.png".into());
    let variants: usize = args.get(1).map_or(Ok(8), |s| s.parse())?;
    let pipelines =
        [AugmentPipeline::default(), AugmentPipeline::with_rotation(), AugmentPipeline::conservative_crops()];
    let s = pipelines[0].size;
    let spec = DatasetSpec { per_class: 5, size: s, ..DatasetSpec::default() };
    let sample = &build_dataset(&spec)?[0];

    let mut rows: Vec<Vec<Image>> = Vec::new();
    for (i, p) in pipelines.iter().enumerate() {
        let mut rng = seed::stream(0, "augment-preview", i as u64);
        let mut row = vec![sample.pixels.clone()];
        for v in 0..variants {
            let img = if v % 2 == 0 {
                augment_base(&sample.pixels, p, &mut rng)
            } else {
                augment_stylized(&sample.pixels, p, &mut rng)
            };
            row.push(img);
        }
        rows.push(row);
    }
    let sheet = Image::from_fn(rows.len() * s, (variants + 1) * s, |y, x| rows[y / s][x / s].get(y % s, x % s));
    image::save_buffer(&out, &sheet.to_rgb8(), sheet.width() as u32, sheet.height() as u32, image::ColorType::Rgb8)?;
    println!("wrote {out}: rows are default, with rotation, conservative crops; odd columns use the stylized plan");
    Ok(())
}
