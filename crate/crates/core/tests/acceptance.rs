//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits with failure if any criterion fails.
//!
//! Criteria 6 to 11 train the full desk-scale suite (several CPU hours on one
//! core). Set `SHAPEBIAS_ACCEPTANCE_STORE` to keep the trained runs between
//! invocations; by default a fresh temporary store is used.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::{check_adain, check_grad_reverse};
use rand::Rng;
use shapebias::data::{split_indices, split_sizes, SplitSpec};
use shapebias::gradcheck::{check_model, check_ops, GradcheckSpec};
use shapebias::harness::{
    run_config, run_suite, ExperimentConfig, Regime, ResultRow, RunStore, SuiteOutcome, SuiteSpec,
};
use shapebias::models::{MiniResNetConfig, MiniSqueezeNetConfig, ModelConfig, BACKBONE};
use shapebias::optim::{scheduler_scale, Adam, EarlyStopDecision, EarlyStopping, OptimizerSpec, SchedulerSpec};
use shapebias::seed;
use shapebias::tensor::{ParamId, ParamStore, Tape, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let spec = GradcheckSpec::default();
    let mut reports = match check_ops(&spec) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("op check errored: {e}")),
    };
    let models = [
        ("ResNet", ModelConfig::Resnet(MiniResNetConfig::default())),
        ("SNet", ModelConfig::Squeezenet(MiniSqueezeNetConfig::default())),
    ];
    for (name, cfg) in &models {
        for lambda in [None, Some(0.7)] {
            match check_model(cfg, lambda, 8, 32, &spec) {
                Ok(r) => reports.push((format!("{name} {}", if lambda.is_some() { "dann" } else { "classifier" }), r)),
                Err(e) => return verdict(false, format!("{name} check errored: {e}")),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|(_, r)| r.max_rel_error()).fold(0.0, f64::max);
    let failed: Vec<&str> = reports
        .iter()
        .filter(|(_, r)| r.probes.len() < spec.probes || !r.passed(spec.tolerance))
        .map(|(n, _)| n.as_str())
        .collect();
    verdict(
        failed.is_empty() && secs < 120.0,
        format!(
            "{} checks, worst relative error {worst:.2e} (limit {:.0e}), {secs:.1} s (limit 120 s){}",
            reports.len(),
            spec.tolerance,
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        ),
    )
}

fn gradient_reversal() -> Verdict {
    let mut rng = seed::stream(2, "acceptance-graphs", 0);
    for case in 0..1000u64 {
        let len = rng.random_range(1..16);
        let before: Vec<u8> = (0..rng.random_range(0..6)).map(|_| rng.random()).collect();
        let after: Vec<u8> = (0..rng.random_range(0..6)).map(|_| rng.random()).collect();
        if let Err(e) = check_grad_reverse(len, &before, &after, case) {
            return verdict(false, format!("graph {case}: {e}"));
        }
    }
    verdict(true, "1000 random graphs: forward bit-identical, gradients exactly negated")
}

fn adain() -> Verdict {
    let mut rng = seed::stream(3, "acceptance-adain", 0);
    for case in 0..1000u64 {
        let content = (rng.random_range(2..24), rng.random_range(2..24));
        let style = (rng.random_range(2..24), rng.random_range(2..24));
        if let Err(e) = check_adain(content, style, case) {
            return verdict(false, format!("pair {case}: {e}"));
        }
    }
    verdict(true, "1000 random pairs within 1e-6, alpha 0 is the identity")
}

fn split_rule() -> Verdict {
    let spec = SplitSpec::default();
    for n in 1..=1000usize {
        let (test, val, train) = split_sizes(n, &spec);
        if (test, val, train) != (n / 5, (n - n / 5) / 5, n - n / 5 - (n - n / 5) / 5) {
            return verdict(false, format!("n = {n}: sizes {test}/{val}/{train}"));
        }
        let idx = split_indices(&vec![0usize; n], &spec);
        let mut all: Vec<usize> = idx.test.iter().chain(&idx.val).chain(&idx.train).copied().collect();
        all.sort_unstable();
        if (idx.test.len(), idx.val.len(), idx.train.len()) != (test, val, train) || all != (0..n).collect::<Vec<_>>() {
            return verdict(false, format!("n = {n}: splits overlap or miss samples"));
        }
    }
    verdict(true, "class sizes 1..=1000 follow the floor rule; splits disjoint and exhaustive")
}

fn optimizer_units() -> Verdict {
    let (lr, g, p0) = (1e-3, 0.1, 1.0);
    let mut store = ParamStore::<f64>::new();
    store.add("p", BACKBONE, Tensor::scalar(p0));
    let mut tape = Tape::new();
    let p = tape.param(ParamId(0), store.get(ParamId(0)).clone());
    let c = tape.constant(Tensor::scalar(g));
    let loss = tape.mul(p, c).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut adam = Adam::new(OptimizerSpec { backbone_lr: lr, classifier_lr: lr, ..Default::default() }).unwrap();
    adam.step(&mut store, &grads, 1.0).unwrap();
    let closed = p0 - lr * g / (g.abs() + 1e-8);
    let adam_err = (store.get(ParamId(0)).item() - closed).abs();

    let sched = SchedulerSpec { milestones: vec![10, 20], gamma: 0.5, plateau_epochs: None };
    let scales: Vec<f64> = [9, 10, 25].iter().map(|&e| scheduler_scale(&sched, e)).collect();

    let mut es = EarlyStopping::new(3);
    let mut stopped = None;
    for (i, &m) in [0.5, 0.6, 0.58, 0.59, 0.57].iter().enumerate() {
        if es.update(i + 1, m, || i + 1) == EarlyStopDecision::Stop {
            stopped = Some(i + 1);
            break;
        }
    }
    let restored = es.snapshot().copied();
    verdict(
        adam_err <= 1e-9 && scales == [1.0, 0.5, 0.25] && stopped == Some(5) && restored == Some(2),
        format!(
            "Adam first-step error {adam_err:.1e}; scales {scales:?}; stopped at {stopped:?}, restored epoch {restored:?}"
        ),
    )
}

fn row(rows: &[ResultRow], regime: Regime) -> &ResultRow {
    rows.iter().find(|r| r.regime == regime).expect("suite covers every regime")
}

fn pts(x: f64) -> f64 {
    100.0 * x
}

fn trained_seconds(store: &RunStore, configs: &[ExperimentConfig]) -> f64 {
    configs.iter().map(|c| store.load_timing(c).ok().flatten().map_or(f64::NAN, |t| t.wall_seconds)).sum()
}

fn base_trend(store: &RunStore, out: &SuiteOutcome, m: &[ResultRow]) -> Verdict {
    let base = row(m, Regime::Base);
    let gap = pts(base.base_top1 - base.stylized_top1);
    let runs: Vec<ExperimentConfig> =
        out.runs.iter().filter(|(c, _)| c.regime == Regime::Base).map(|(c, _)| c.clone()).collect();
    let secs = trained_seconds(store, &runs);
    verdict(
        base.base_top1 >= 0.90 && gap >= 20.0 && secs <= 900.0,
        format!(
            "base top1 {:.2} (>= 90), stylized top1 {:.2}, gap {gap:.2} points (>= 20); {} runs trained in {secs:.0} s (<= 900 s)",
            pts(base.base_top1),
            pts(base.stylized_top1),
            runs.len()
        ),
    )
}

fn stylized_trend(m: &[ResultRow]) -> Verdict {
    let (base, stylized) = (row(m, Regime::Base), row(m, Regime::Stylized));
    let gain = pts(stylized.stylized_top1 - base.stylized_top1);
    verdict(
        gain >= 20.0,
        format!(
            "stylized-test top1: stylized-trained {:.2} vs base-trained {:.2}, gain {gain:.2} points (>= 20)",
            pts(stylized.stylized_top1),
            pts(base.stylized_top1)
        ),
    )
}

fn mixed_trend(m: &[ResultRow]) -> Verdict {
    let (base, stylized, mixed) = (row(m, Regime::Base), row(m, Regime::Stylized), row(m, Regime::Mixed));
    let base_gap = pts(base.base_top1 - mixed.base_top1);
    let stylized_gap = pts(stylized.stylized_top1 - mixed.stylized_top1);
    verdict(
        base_gap.abs() <= 5.0 && stylized_gap <= 2.0,
        format!(
            "mixed base top1 {:.2} vs base-trained {:.2} (within 5); mixed stylized top1 {:.2} vs stylized-trained {:.2} (within 2 or above)",
            pts(mixed.base_top1),
            pts(base.base_top1),
            pts(mixed.stylized_top1),
            pts(stylized.stylized_top1)
        ),
    )
}

fn dann_trend(store: &RunStore, spec: &SuiteSpec, out: &SuiteOutcome, m: &[ResultRow]) -> Verdict {
    let (base, mixed, dann) = (row(m, Regime::Base), row(m, Regime::Mixed), row(m, Regime::Dann));
    let (Some(dann_bias), Some(base_bias), Some(domain)) = (dann.shape_bias, base.shape_bias, dann.domain_accuracy)
    else {
        return verdict(false, "shape bias or domain accuracy undefined");
    };
    let robust = pts(dann.stylized_top1 - mixed.stylized_top1) >= -1.0;
    let shape = dann_bias - base_bias >= 0.15;
    let confused = domain <= 0.65;

    // Every dann run trained for this criterion: the search points and the other seeds.
    let mut runs: Vec<ExperimentConfig> = Vec::new();
    if let Some(search) = &out.search {
        for a in &search.trail {
            let mut cfg = spec.template.with_regime(Regime::Dann, Some(0.0));
            cfg.seed = spec.seeds[0];
            for (name, &v) in &a.assignment {
                cfg.set_hyperparameter(name, v).expect("searched hyperparameter");
            }
            runs.push(cfg);
        }
    }
    for (c, _) in out.runs.iter().filter(|(c, _)| c.regime == Regime::Dann) {
        if !runs.contains(c) {
            runs.push(c.clone());
        }
    }
    let secs = trained_seconds(store, &runs);
    verdict(
        robust && shape && confused && secs <= 1800.0,
        format!(
            "lambda {:?}; stylized top1 {:.2} vs mixed {:.2} (>= -1 point); shape bias {dann_bias:.3} vs base {base_bias:.3} (>= +0.15); domain acc {domain:.3} (<= 0.65); {} runs trained in {secs:.0} s (<= 1800 s)",
            out.lambda,
            pts(dann.stylized_top1),
            pts(mixed.stylized_top1),
            runs.len()
        ),
    )
}

fn determinism(store: &RunStore, spec: &SuiteSpec) -> Verdict {
    let mut cfg = spec.template.with_regime(Regime::Base, None);
    cfg.seed = spec.seeds[0];
    let dir = tempfile::tempdir().unwrap();
    let again = RunStore::new(dir.path());
    if let Err(e) = run_config(&again, &cfg, false, |_| {}) {
        return verdict(false, format!("second execution errored: {e}"));
    }
    let (a, b) = (fs::read(store.report_path(&cfg)), fs::read(again.report_path(&cfg)));
    match (a, b) {
        (Ok(a), Ok(b)) => verdict(
            a == b,
            format!("two base seed {} reports: {} and {} bytes, identical: {}", cfg.seed, a.len(), b.len(), a == b),
        ),
        _ => verdict(false, "report.json missing"),
    }
}

fn suite_output(store: &RunStore, out: &SuiteOutcome) -> Verdict {
    let Ok(csv) = fs::read_to_string(&out.csv_path) else { return verdict(false, "results.csv missing") };
    let Ok(svg) = fs::read_to_string(&out.svg_path) else { return verdict(false, "chart.svg missing") };
    let cell = |acc: f64, reference: f64| format!("{:.2} ({:+.2}%)", 100.0 * acc, 100.0 * (acc - reference));
    let mut checked = 0;
    let mut medians = Vec::new();
    for (cfg, report) in out.runs.iter().filter(|(c, _)| c.regime == Regime::Dann) {
        let Ok(Some(mixed)) = store.load_report(&cfg.mixed_counterpart()) else {
            return verdict(false, format!("mixed counterpart of dann seed {} missing", cfg.seed));
        };
        let prefix = format!("{},{},dann,{},", cfg.dataset_name, report.model, cfg.seed);
        let Some(line) = csv.lines().find(|l| l.starts_with(&prefix)) else {
            return verdict(false, format!("no csv row for dann seed {}", cfg.seed));
        };
        for (acc, reference) in
            [(report.base_test.top1, mixed.base_test.top1), (report.stylized_test.top1, mixed.stylized_test.top1)]
        {
            if !line.contains(&cell(acc, reference)) {
                return verdict(false, format!("row {line:?} lacks {}", cell(acc, reference)));
            }
            checked += 1;
        }
        medians
            .push((report.base_test.top1 - mixed.base_test.top1, report.stylized_test.top1 - mixed.stylized_test.top1));
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let base_d = median(medians.iter().map(|m| m.0).collect());
    let styl_d = median(medians.iter().map(|m| m.1).collect());
    let labels = [format!("({:+.2}%)", 100.0 * base_d), format!("({:+.2}%)", 100.0 * styl_d)];
    let charted = labels.iter().all(|l| svg.contains(l.as_str()));
    verdict(
        checked > 0 && charted,
        format!(
            "{checked} dann csv cells recomputed exactly; chart carries median deltas {} {}: {charted}",
            labels[0], labels[1]
        ),
    )
}

fn store_root() -> (Option<tempfile::TempDir>, PathBuf) {
    match std::env::var_os("SHAPEBIAS_ACCEPTANCE_STORE") {
        Some(p) => (None, PathBuf::from(p)),
        None => {
            let t = tempfile::tempdir().unwrap();
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut record = |n: usize, v: Verdict| {
        println!("criterion {n:>2} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };
    record(1, gradients());
    record(2, gradient_reversal());
    record(3, adain());
    record(4, split_rule());
    record(5, optimizer_units());

    let spec_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/suite.toml");
    let spec = SuiteSpec::load(&spec_path).expect("suite spec loads");
    let (_keep, root) = store_root();
    let store = RunStore::new(root.join("runs"));
    let started = Instant::now();
    match run_suite(&store, &spec, &root.join("suite"), |cfg, r| {
        eprintln!(
            "[{} seed {} lambda {:?}] epoch {:>3} val {:.3}",
            cfg.regime.name(),
            cfg.seed,
            cfg.lambda,
            r.epoch,
            r.val_top1
        );
    }) {
        Ok(out) => {
            eprintln!("suite finished in {:.0} s", started.elapsed().as_secs_f64());
            let m = out.table.medians().rows;
            record(6, base_trend(&store, &out, &m));
            record(7, stylized_trend(&m));
            record(8, mixed_trend(&m));
            record(9, dann_trend(&store, &spec, &out, &m));
            record(10, determinism(&store, &spec));
            record(11, suite_output(&store, &out));
        }
        Err(e) => {
            for n in [6, 7, 8, 9, 10, 11] {
                record(n, verdict(false, format!("suite errored: {e}")));
            }
        }
    }

    let failed: Vec<String> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| n.to_string()).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of {} criteria fail ({})", failed.len(), results.len(), failed.join(", "));
        ExitCode::FAILURE
    }
}
