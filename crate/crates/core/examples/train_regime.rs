//! Trains one regime on the desk-scale shape/texture data and prints the
//! learning curve followed by the test metrics.
//!
//! ```text
//! cargo run --release --example train_regime -- [regime] [epochs] [seed] [lambda]
//! ```

use std::time::Instant;

use shapebias::harness::{train, ExperimentConfig, Regime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regime: Regime = args.first().map_or(Ok(Regime::Base), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(ExperimentConfig::default().max_epochs), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;
    let lambda: Option<f64> = match args.get(3) {
        Some(s) => Some(s.parse()?),
        None => (regime == Regime::Dann).then_some(0.3),
    };

    let cfg = ExperimentConfig { regime, lambda, seed, max_epochs: epochs, ..Default::default() };

    let start = Instant::now();
    let out = train(&cfg, |r| {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.3}  val {:.3}  [{:.1}s]",
            r.epoch,
            r.lr_backbone,
            r.train_loss,
            r.train_top1,
            r.val_top1,
            start.elapsed().as_secs_f64()
        )
    })?;
    let r = &out.report;
    println!("best epoch {} (val {:.3})", r.best_epoch, r.best_val_top1);
    println!("base test      top1 {:.4}  top{} {:.4}", r.base_test.top1, r.base_test.k, r.base_test.topk);
    println!("stylized test  top1 {:.4}  top{} {:.4}", r.stylized_test.top1, r.stylized_test.k, r.stylized_test.topk);
    println!(
        "shape bias     {:?}  (shape {}, texture {}, neither {})",
        r.shape_bias.score, r.shape_bias.shape_matches, r.shape_bias.texture_matches, r.shape_bias.neither
    );
    if let Some(d) = r.domain_accuracy {
        println!("domain acc     {d:.4}");
    }
    Ok(())
}
