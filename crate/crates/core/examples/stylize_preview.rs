//! Renders a contact sheet of base samples next to their stylized mirrors.
//!
//! ```text
//! cargo run --release --example stylize_preview -- out.png [count]
//! ```

use shapebias::data::{build_dataset, DatasetSpec, Image};
use shapebias::stylize::{stylize_dataset, StylizeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "stylize_preview.png".into());
    let per_class: usize = args.get(1).map_or(Ok(6), |s| s.parse())?;
    let spec = DatasetSpec { per_class: per_class.max(5), size: 64, ..DatasetSpec::default() };
    let base = build_dataset(&spec)?;
    let stylized = stylize_dataset(&base, &StylizeConfig::default())?;

    let (rows, cols) = (spec.num_shape_classes, 2 * per_class.max(5));
    let sheet = Image::from_fn(rows * 64, cols * 64, |y, x| {
        let (r, c) = (y / 64, x / 64);
        let i = r * spec.per_class + c / 2;
        let img = if c % 2 == 0 { &base[i].pixels } else { &stylized[i].pixels };
        img.get(y % 64, x % 64)
    });
    let rgb = sheet.to_rgb8();
    image::save_buffer(&out, &rgb, sheet.width() as u32, sheet.height() as u32, image::ColorType::Rgb8)?;
    println!("wrote {out}");
    Ok(())
}
