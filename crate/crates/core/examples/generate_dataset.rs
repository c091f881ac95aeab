//! Generates the synthetic shape/texture dataset, splits it and writes the
//! base set plus a cue-conflict set to disk.
//!
//! ```text
//! cargo run --release --example generate_dataset -- out_dir [per_class] [rho]
//! ```

use std::path::PathBuf;

use shapebias::data::{build_cue_conflict_set, build_dataset, split, write_dataset, DatasetSpec, SplitSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("dataset", String::as_str));
    let per_class: usize = args.get(1).map_or(Ok(60), |s| s.parse())?;
    let rho: f64 = args.get(2).map_or(Ok(1.0), |s| s.parse())?;
    let spec = DatasetSpec { per_class, rho, ..DatasetSpec::default() };

    let samples = build_dataset(&spec)?;
    let parts = split(&samples, &SplitSpec::default());
    println!(
        "{} samples: train {}, val {}, test {}",
        samples.len(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
    for class in 0..spec.num_shape_classes {
        let of_class: Vec<_> = samples.iter().filter(|s| s.shape_class == class).collect();
        let matching = of_class.iter().filter(|s| s.texture_class == Some(class)).count();
        println!("class {class}: {} samples, {matching} with the class texture", of_class.len());
    }
    write_dataset(&out.join("base"), &samples)?;

    let conflict = build_cue_conflict_set(&spec, 10 * spec.num_shape_classes)?;
    write_dataset(&out.join("cue_conflict"), &conflict)?;
    println!("wrote {} base and {} cue-conflict samples under {}", samples.len(), conflict.len(), out.display());
    Ok(())
}
