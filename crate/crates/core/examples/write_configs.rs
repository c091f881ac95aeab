//! Writes the default experiment config and the four-regime suite as TOML,
//! ready to edit and pass to the `shapebias` binary.
//!
//! ```text
//! cargo run --example write_configs -- [out-dir]
//! ```

use std::path::PathBuf;

use shapebias::harness::{write_atomic, ExperimentConfig, Regime, SuiteSpec};
use shapebias::optim::{SearchAxis, SearchSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    let base = ExperimentConfig::default();
    write_atomic(&dir.join("experiment.toml"), base.to_toml().as_bytes())?;

    let dann = base.with_regime(Regime::Dann, Some(0.3));
    write_atomic(&dir.join("dann.toml"), dann.to_toml().as_bytes())?;

    let suite = SuiteSpec {
        regimes: Regime::ALL.to_vec(),
        seeds: vec![0, 1, 2],
        lambda: None,
        lambda_search: Some(SearchSpace {
            axes: vec![SearchAxis { name: "lambda".into(), values: vec![0.03, 0.3, 3.0] }],
            expand: true,
            max_expansions: 2,
        }),
        template: base,
    };
    write_atomic(&dir.join("suite.toml"), suite.to_toml().as_bytes())?;
    println!("wrote experiment.toml, dann.toml and suite.toml to {}", dir.display());
    Ok(())
}
