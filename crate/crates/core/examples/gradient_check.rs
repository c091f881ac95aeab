//! Finite-difference gradient checks of every tensor op and both models in
//! 64-bit precision.
//!
//! ```text
//! cargo run --release --example gradient_check -- [seed]
//! ```

use shapebias::gradcheck::{check_model, check_ops, GradcheckSpec};
use shapebias::models::{MiniResNetConfig, MiniSqueezeNetConfig, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let spec = GradcheckSpec { seed, ..Default::default() };
    let mut reports = check_ops(&spec)?;
    for model in
        [ModelConfig::Resnet(MiniResNetConfig::default()), ModelConfig::Squeezenet(MiniSqueezeNetConfig::default())]
    {
        let name = model.short_name();
        reports.push((name.to_string(), check_model(&model, None, 8, 32, &spec)?));
        reports.push((format!("{name} dann"), check_model(&model, Some(0.5), 8, 32, &spec)?));
    }
    println!("{:<28} {:>6} {:>8} {:>12}", "check", "probes", "skipped", "max rel err");
    let mut failed = 0;
    for (name, r) in &reports {
        let ok = r.passed(spec.tolerance);
        failed += usize::from(!ok);
        println!(
            "{name:<28} {:>6} {:>8} {:>12.3e} {}",
            r.probes.len(),
            r.skipped,
            r.max_rel_error(),
            if ok { "" } else { "FAIL" }
        );
    }
    println!("{} of {} checks within {:e}", reports.len() - failed, reports.len(), spec.tolerance);
    Ok(())
}
