//! Trains (or loads from the run cache) one regime and breaks its cue-conflict
//! predictions down by shape class.
//!
//! ```text
//! SHAPEBIAS_CACHE_DIR=runs cargo run --release --example shape_bias_probe -- [regime] [epochs]
//! ```

use shapebias::data::build_cue_conflict_set;
use shapebias::harness::{argmax, predict_logits, run_config, ExperimentConfig, Regime, RunStore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regime: Regime = args.first().map_or(Ok(Regime::Base), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(ExperimentConfig::default().max_epochs), |s| s.parse())?;
    let cfg = ExperimentConfig { max_epochs: epochs, ..Default::default() }
        .with_regime(regime, (regime == Regime::Dann).then_some(0.3));

    let store = RunStore::from_env();
    let report = run_config(&store, &cfg, false, |r| eprintln!("epoch {:>3}  val {:.3}", r.epoch, r.val_top1))?;
    let mut net = store.load_net(&cfg)?;
    let conflict = build_cue_conflict_set(&cfg.dataset, cfg.cue_conflict_size)?;
    let logits = predict_logits(net.classifier(), &conflict, cfg.augment.size)?;
    let classes = cfg.dataset.num_shape_classes;

    println!("{:<8} {:>6} {:>8} {:>8}", "shape", "shape", "texture", "neither");
    for class in 0..classes {
        let (mut s, mut t, mut n) = (0, 0, 0);
        for (i, sample) in conflict.iter().enumerate().filter(|(_, x)| x.shape_class == class) {
            let p = argmax(&logits.data()[i * classes..(i + 1) * classes]);
            if p == sample.shape_class {
                s += 1;
            } else if Some(p) == sample.texture_class {
                t += 1;
            } else {
                n += 1;
            }
        }
        println!("{class:<8} {s:>6} {t:>8} {n:>8}");
    }
    println!("shape bias {:?} (stylized test top1 {:.3})", report.shape_bias.score, report.stylized_test.top1);
    Ok(())
}
