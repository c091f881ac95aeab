use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shapebias::data::{build_cue_conflict_set, build_dataset, read_dataset, write_dataset};
use shapebias::gradcheck::{check_model, check_ops, GradcheckReport, GradcheckSpec};
use shapebias::harness::{
    build_table, evaluate, evaluate_all, materialize, render_svg_chart, run_config, run_suite, write_atomic,
    EpochRecord, ExperimentConfig, HarnessError, Regime, RunReport, RunStore, SuiteSpec, CACHE_ENV,
};
use shapebias::stylize::stylize_to_dir;

#[derive(Parser)]
#[command(name = "shapebias", version, about = "Shape-bias training lab on synthetic shape/texture data")]
struct Cli {
    /// Seed override: the dataset seed for gen-data, the style-draw seed for
    /// stylize, the training seed for train and evaluate, the seed list for suite.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data generation, stylization and kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Checks the configured model's gradients in 64-bit mode before training.
    #[arg(long, global = true)]
    f64_gradcheck: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic base dataset (and optionally a cue-conflict set).
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also writes this many cue-conflict samples under OUT/cue_conflict.
        #[arg(long)]
        cue_conflict: Option<usize>,
    },
    /// Writes the stylized mirror of a dataset directory.
    Stylize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains one config, or loads it from the run cache.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        regime: Option<Regime>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Retrains even when a cached result exists.
        #[arg(long)]
        force: bool,
    },
    /// Re-evaluates a cached run from its checkpoint.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluates on this dataset directory instead of the config's test sets.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Runs every regime and seed of a suite file and writes CSV, text and SVG results.
    Suite {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulates cached runs, given their run directories or config files.
    Report {
        runs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, HarnessError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn log_epoch(label: &str, r: &EpochRecord) {
    eprintln!(
        "[{label}] epoch {:>3}  loss {:.4}  train {:.3}  val {:.3}  lr {:.2e}/{:.2e}",
        r.epoch, r.train_loss, r.train_top1, r.val_top1, r.lr_backbone, r.lr_classifier
    );
}

fn gradcheck(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let spec = GradcheckSpec { seed: cfg.seed, ..Default::default() };
    let mut reports: Vec<(String, GradcheckReport)> = check_ops(&spec)?;
    reports.push((format!("{} classifier", cfg.model.short_name()), check_model(&cfg.model, None, 8, 32, &spec)?));
    if let Some(l) = cfg.lambda {
        reports.push((format!("{} dann", cfg.model.short_name()), check_model(&cfg.model, Some(l), 8, 32, &spec)?));
    }
    for (name, r) in &reports {
        eprintln!(
            "gradcheck {name}: {} probes, {} skipped at kinks, max relative error {:.2e}",
            r.probes.len(),
            r.skipped,
            r.max_rel_error()
        );
        if !r.passed(spec.tolerance) {
            return Err(HarnessError::Config(format!("gradient check of {name} failed: {:?}", r.worst())));
        }
    }
    Ok(())
}

fn print_report(r: &RunReport) {
    println!("run            {}", r.config_hash);
    println!("regime         {} ({}, seed {})", r.regime.name(), r.model, r.seed);
    if let Some(l) = r.lambda {
        println!("lambda         {l}");
    }
    println!("base test      top1 {:.4}  top{} {:.4}", r.base_test.top1, r.base_test.k, r.base_test.topk);
    println!("stylized test  top1 {:.4}  top{} {:.4}", r.stylized_test.top1, r.stylized_test.k, r.stylized_test.topk);
    match r.shape_bias.score {
        Some(s) => println!("shape bias     {s:.4}"),
        None => println!("shape bias     undefined (no shape or texture matches)"),
    }
    if let Some(d) = r.domain_accuracy {
        println!("domain acc     {d:.4}");
    }
    println!("best epoch     {} of {} (val top1 {:.4})", r.best_epoch, r.epochs_run, r.best_val_top1);
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let store = RunStore::from_env();
    match cli.command {
        Command::GenData { config, out, cue_conflict } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.dataset.seed = s;
            }
            let samples = build_dataset(&cfg.dataset)?;
            write_dataset(&out, &samples)?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            if let Some(n) = cue_conflict {
                let dir = out.join("cue_conflict");
                write_dataset(&dir, &build_cue_conflict_set(&cfg.dataset, n)?)?;
                println!("wrote {n} cue-conflict samples to {}", dir.display());
            }
        }
        Command::Stylize { config, input, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.stylize.seed = s;
            }
            let samples = read_dataset(&input)?;
            let styled = stylize_to_dir(&samples, &cfg.stylize, &out)?;
            println!("wrote {} stylized samples to {}", styled.len(), out.display());
        }
        Command::Train { config, regime, lambda, force } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            if let Some(r) = regime {
                cfg = cfg.with_regime(r, lambda.or(cfg.lambda));
            } else if lambda.is_some() {
                cfg.lambda = lambda;
            }
            cfg.validate()?;
            if cli.f64_gradcheck {
                gradcheck(&cfg)?;
            }
            let label = cfg.regime.name();
            let report = run_config(&store, &cfg, force, |r| log_epoch(label, r))?;
            print_report(&report);
            println!("run directory  {}", store.run_dir(&cfg).display());
        }
        Command::Evaluate { config, data, k } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            let mut net = store.load_net(&cfg)?;
            let k = k.unwrap_or(cfg.top_k);
            match data {
                Some(dir) => {
                    let samples = read_dataset(&dir)?;
                    let acc = evaluate(net.classifier(), &samples, cfg.augment.size, k)?;
                    println!("{}: top1 {:.4}  top{k} {:.4}  (n = {})", dir.display(), acc.top1, acc.topk, acc.n);
                }
                None => {
                    let m = materialize(&cfg)?;
                    let (base, stylized, bias, domain) = evaluate_all(&cfg, &mut net, &m)?;
                    println!("base test      top1 {:.4}  top{} {:.4}", base.top1, base.k, base.topk);
                    println!("stylized test  top1 {:.4}  top{} {:.4}", stylized.top1, stylized.k, stylized.topk);
                    println!("shape bias     {}", bias.score.map_or("undefined".into(), |s| format!("{s:.4}")));
                    if let Some(d) = domain {
                        println!("domain acc     {d:.4}");
                    }
                    if let Some(r) = store.load_report(&cfg)? {
                        let same = r.base_test == base
                            && r.stylized_test == stylized
                            && r.shape_bias == bias
                            && r.domain_accuracy == domain;
                        println!("matches stored report: {}", if same { "yes" } else { "NO" });
                    }
                }
            }
        }
        Command::Suite { spec, out } => {
            let mut suite = SuiteSpec::load(&spec)?;
            if let Some(s) = cli.seed {
                suite.seeds = vec![s];
            }
            if cli.f64_gradcheck {
                gradcheck(&suite.template.with_regime(Regime::Dann, Some(suite.lambda.unwrap_or(1.0))))?;
            }
            let outcome = run_suite(&store, &suite, &out, |cfg, r| {
                log_epoch(&format!("{} seed {}", cfg.regime.name(), cfg.seed), r)
            })?;
            if let Some(l) = outcome.lambda {
                println!("lambda {l}");
            }
            print!("{}", outcome.table.to_text());
            println!("median over seeds");
            print!("{}", outcome.table.medians().to_text());
            println!("wrote {} and {}", outcome.csv_path.display(), outcome.svg_path.display());
        }
        Command::Report { runs, csv, svg } => {
            if runs.is_empty() {
                return Err(HarnessError::Config(format!(
                    "name at least one run directory or config file (cache: {}, set {CACHE_ENV} to change)",
                    store.root().display()
                )));
            }
            let mut loaded = Vec::new();
            for path in runs {
                let cfg_path = if path.is_dir() { path.join("config.toml") } else { path };
                let cfg = ExperimentConfig::load(&cfg_path)?;
                let report = store
                    .load_report(&cfg)?
                    .ok_or_else(|| HarnessError::MissingRun { regime: cfg.regime.name().into(), hash: cfg.hash() })?;
                loaded.push((cfg, report));
            }
            let table = build_table(&loaded, &store)?;
            print!("{}", table.to_text());
            if loaded.len() > 1 {
                println!("median over seeds");
                print!("{}", table.medians().to_text());
            }
            if let Some(p) = csv {
                write_atomic(&p, table.to_csv().as_bytes())?;
            }
            if let Some(p) = svg {
                write_atomic(&p, render_svg_chart(&table.medians()).as_bytes())?;
            }
        }
    }
    Ok(())
}
