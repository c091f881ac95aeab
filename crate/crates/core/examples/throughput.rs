//! Times the stages of one training step (augmentation, forward, backward,
//! optimizer) at the default desk-scale settings.
//!
//! ```text
//! cargo run --release --example throughput -- [regime] [batches]
//! ```

use std::time::{Duration, Instant};

use shapebias::data::{augment_for, images_to_tensor};
use shapebias::harness::{materialize, training_samples, ExperimentConfig, Net, Regime};
use shapebias::optim::Adam;
use shapebias::seed;
use shapebias::tensor::Tape;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regime: Regime = args.first().map_or(Ok(Regime::Dann), |s| s.parse())?;
    let batches: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let cfg = ExperimentConfig::default().with_regime(regime, (regime == Regime::Dann).then_some(0.3));
    let start = Instant::now();
    let m = materialize(&cfg)?;
    println!("materialize {:.2}s", start.elapsed().as_secs_f64());
    let set = training_samples(&m, regime);
    let mut net = Net::new(&cfg)?;
    let mut adam = Adam::new(cfg.optimizer.clone())?;
    let mut t = [Duration::ZERO; 4];
    for b in 0..batches {
        let chunk: Vec<usize> = (b * cfg.batch_size..(b + 1) * cfg.batch_size).map(|i| i % set.len()).collect();
        let s0 = Instant::now();
        let images: Vec<_> = chunk
            .iter()
            .map(|&i| {
                augment_for(&set[i].pixels, set[i].domain, &cfg.augment, &mut seed::stream(0, "sample", i as u64))
            })
            .collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| set[i].shape_class).collect();
        let domains: Vec<usize> = chunk.iter().map(|&i| set[i].domain.index()).collect();
        let s1 = Instant::now();
        let mut tape = Tape::new();
        let x = tape.constant(images_to_tensor(&images));
        let (loss, _) = net.loss(&mut tape, x, &labels, &domains, 0.3)?;
        let s2 = Instant::now();
        let grads = tape.backward(loss)?;
        let s3 = Instant::now();
        adam.step(&mut net.classifier().params, &grads, 1.0)?;
        let s4 = Instant::now();
        for (acc, d) in t.iter_mut().zip([s1 - s0, s2 - s1, s3 - s2, s4 - s3]) {
            *acc += d;
        }
    }
    let per = |d: Duration| 1e3 * d.as_secs_f64() / batches as f64;
    println!(
        "per batch of {}: augment {:.1} ms, forward {:.1} ms, backward {:.1} ms, adam {:.1} ms",
        cfg.batch_size,
        per(t[0]),
        per(t[1]),
        per(t[2]),
        per(t[3])
    );
    let steps = set.len().div_ceil(cfg.batch_size) as f64;
    println!(
        "estimated epoch: {:.1}s over {} samples",
        steps * t.iter().map(|d| per(*d)).sum::<f64>() / 1e3,
        set.len()
    );
    Ok(())
}
