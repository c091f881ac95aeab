//! Runs a suite file (all regimes and seeds, optional λ search) and prints
//! the per-run and median tables.
//!
//! ```text
//! SHAPEBIAS_CACHE_DIR=runs cargo run --release --example run_suite -- configs/suite.toml out_dir
//! ```

use std::path::PathBuf;

use shapebias::harness::{run_suite, RunStore, SuiteSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = SuiteSpec::load(&PathBuf::from(args.first().map_or("configs/suite.toml", String::as_str)))?;
    let out = PathBuf::from(args.get(1).map_or("suite_out", String::as_str));
    let outcome = run_suite(&RunStore::from_env(), &spec, &out, |cfg, r| {
        eprintln!("[{} seed {}] epoch {:>3}  val {:.3}", cfg.regime.name(), cfg.seed, r.epoch, r.val_top1)
    })?;
    if let Some(l) = outcome.lambda {
        println!("lambda {l}");
    }
    print!("{}", outcome.table.to_text());
    println!("median over seeds");
    print!("{}", outcome.table.medians().to_text());
    println!("wrote {} and {}", outcome.csv_path.display(), outcome.svg_path.display());
    Ok(())
}
