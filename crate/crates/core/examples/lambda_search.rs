//! Grid search over the adversarial weight λ with boundary expansion, on a
//! reduced configuration so it finishes in a few minutes.
//!
//! ```text
//! SHAPEBIAS_CACHE_DIR=runs cargo run --release --example lambda_search -- [epochs] [audit.csv]
//! ```

use std::path::PathBuf;

use shapebias::harness::{search_hyperparameters, ExperimentConfig, Regime, RunStore};
use shapebias::optim::SearchSpace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().map_or(Ok(8), |s| s.parse())?;
    let audit = PathBuf::from(args.get(1).map_or("lambda_search.csv", String::as_str));

    let mut cfg = ExperimentConfig { max_epochs: epochs, ..Default::default() }.with_regime(Regime::Dann, Some(0.1));
    cfg.dataset.per_class = 150;
    cfg.cue_conflict_size = 150;
    let space = SearchSpace { expand: true, max_expansions: 2, ..SearchSpace::single("lambda", &[0.01, 0.1, 1.0]) };

    let store = RunStore::from_env();
    let outcome = search_hyperparameters(&store, &cfg, &space, &audit, |c, r| {
        eprintln!("lambda {:<6} epoch {:>3}  val {:.3}", c.lambda.unwrap_or(0.0), r.epoch, r.val_top1)
    })?;
    for row in &outcome.trail {
        println!("generation {}  lambda {:<8} val top1 {:.4}", row.generation, row.assignment["lambda"], row.metric);
    }
    println!(
        "best lambda {} after {} expansions; audit trail in {}",
        outcome.best["lambda"],
        outcome.expansions,
        audit.display()
    );
    Ok(())
}
