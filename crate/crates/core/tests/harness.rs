//! End-to-end harness properties on a tiny configuration.

mod common;

use std::fs;

use common::tiny_config;
use shapebias::data::Domain;
use shapebias::harness::{
    build_table, epoch_order, evaluate, evaluate_all, materialize, run_config, run_suite, train, training_samples,
    validation_samples, ExperimentConfig, Regime, RunStore, SuiteSpec,
};
use shapebias::models::Classifier;
use shapebias::optim::SearchSpace;
use shapebias::seed;
use shapebias::tensor::{Tape, Tensor};

#[test]
fn report_matches_recomputation_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    for regime in [Regime::Base, Regime::Dann] {
        let cfg = tiny_config().with_regime(regime, (regime == Regime::Dann).then_some(0.5));
        let report = run_config(&store, &cfg, false, |_| {}).unwrap();
        let mut net = store.load_net(&cfg).unwrap();
        let m = materialize(&cfg).unwrap();
        let (base, stylized, bias, domain) = evaluate_all(&cfg, &mut net, &m).unwrap();
        assert_eq!(base, report.base_test);
        assert_eq!(stylized, report.stylized_test);
        assert_eq!(bias, report.shape_bias);
        assert_eq!(domain, report.domain_accuracy);
    }
}

#[test]
fn run_directory_layout_and_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path());
    let cfg = tiny_config();
    let first = run_config(&store, &cfg, false, |_| {}).unwrap();
    let run_dir = store.run_dir(&cfg);
    for f in ["config.toml", "report.json", "model.ckpt", "log.jsonl", "timing.json"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    assert!(fs::read_dir(&run_dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    assert_eq!(ExperimentConfig::load(&run_dir.join("config.toml")).unwrap(), cfg);
    assert_eq!(store.load_log(&cfg).unwrap(), first.history);
    let timing = fs::read(run_dir.join("timing.json")).unwrap();

    let mut epochs_seen = 0;
    let cached = run_config(&store, &cfg, false, |_| epochs_seen += 1).unwrap();
    assert_eq!(epochs_seen, 0, "a cached run must not retrain");
    assert_eq!(cached, first);
    assert_eq!(fs::read(run_dir.join("timing.json")).unwrap(), timing);
}

#[test]
fn restored_snapshot_reproduces_best_validation_accuracy() {
    let mut cfg = tiny_config();
    cfg.max_epochs = 5;
    cfg.early_stop.patience = 2;
    let mut out = train(&cfg, |_| {}).unwrap();
    let r = &out.report;
    assert_eq!(r.history[r.best_epoch - 1].val_top1, r.best_val_top1);
    assert!(r.history.iter().all(|h| h.val_top1 <= r.best_val_top1));
    let m = materialize(&cfg).unwrap();
    let val: Vec<_> = validation_samples(&m, cfg.regime).into_iter().cloned().collect();
    let again = evaluate(out.net.classifier(), &val, cfg.augment.size, 1).unwrap();
    assert_eq!(again.top1, r.best_val_top1);
}

#[test]
fn mixed_epochs_visit_every_sample_of_both_domains_once() {
    let cfg = tiny_config().with_regime(Regime::Mixed, None);
    let m = materialize(&cfg).unwrap();
    let set = training_samples(&m, Regime::Mixed);
    let (nb, ns) = (m.base.train.len(), m.stylized.train.len());
    assert_eq!(set.len(), nb + ns);
    for (i, s) in set.iter().enumerate() {
        let expected = if i < nb { &m.base.train[i] } else { &m.stylized.train[i - nb] };
        assert!(std::ptr::eq(*s, expected));
    }
    for epoch in 0..5 {
        let mut order = epoch_order(cfg.seed, epoch, set.len());
        let base_visits = order.iter().filter(|&&i| set[i].domain == Domain::Base).count();
        assert_eq!(base_visits, nb);
        order.sort_unstable();
        assert_eq!(order, (0..set.len()).collect::<Vec<_>>());
    }
    assert_ne!(epoch_order(cfg.seed, 0, set.len()), epoch_order(cfg.seed, 1, set.len()));
}

#[test]
fn stylized_regime_reads_no_base_training_images() {
    let cfg = tiny_config().with_regime(Regime::Stylized, None);
    let m = materialize(&cfg).unwrap();
    assert!(training_samples(&m, Regime::Stylized).iter().all(|s| s.domain == Domain::Stylized));
    assert!(validation_samples(&m, Regime::Stylized).iter().all(|s| s.domain == Domain::Stylized));
    assert!(training_samples(&m, Regime::Base).iter().all(|s| s.domain == Domain::Base));
}

#[test]
fn tape_replay_is_bit_identical() {
    let cfg = tiny_config();
    let mut rng = seed::stream(3, "replay", 0);
    let x = Tensor::new(vec![4, 3, 32, 32], (0..4 * 3 * 32 * 32).map(|_| rand::Rng::random::<f32>(&mut rng)).collect())
        .unwrap();
    let run = || {
        let mut model: Classifier<f32> = Classifier::new(&cfg.model, 9).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let logits = model.forward_label(&mut tape, xv, true).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0, 1, 1, 0]).unwrap();
        let out: Vec<u32> = tape.value(logits).data().iter().map(|v| v.to_bits()).collect();
        let grads = tape.backward(loss).unwrap();
        let g: Vec<u32> = grads.params().flat_map(|(_, t)| t.data().to_vec()).map(f32::to_bits).collect();
        (out, g)
    };
    assert_eq!(run(), run());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let cfg = tiny_config().with_regime(Regime::Mixed, None);
    let in_pool = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&cfg, |_| {}).unwrap().report)
    };
    let one = serde_json::to_string(&in_pool(1)).unwrap();
    let three = serde_json::to_string(&in_pool(3)).unwrap();
    assert_eq!(one, three);
}

#[test]
fn suite_writes_tables_with_exact_dann_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path().join("runs"));
    let spec = SuiteSpec {
        regimes: vec![Regime::Base, Regime::Mixed, Regime::Dann],
        seeds: vec![0, 1],
        lambda: Some(0.5),
        lambda_search: None,
        template: tiny_config(),
    };
    let out = run_suite(&store, &spec, &dir.path().join("out"), |_, _| {}).unwrap();
    assert_eq!(out.runs.len(), 6);
    let csv = fs::read_to_string(&out.csv_path).unwrap();
    assert_eq!(csv.lines().count(), 7);
    for (cfg, report) in out.runs.iter().filter(|(c, _)| c.regime == Regime::Dann) {
        let mixed = store.load_report(&cfg.mixed_counterpart()).unwrap().unwrap();
        let cell = |acc: f64, reference: f64| format!("{:.2} ({:+.2}%)", 100.0 * acc, 100.0 * (acc - reference));
        let prefix = format!("{},{},dann,{},", cfg.dataset_name, report.model, cfg.seed);
        let line = csv.lines().find(|l| l.starts_with(&prefix)).unwrap();
        assert!(line.contains(&cell(report.base_test.top1, mixed.base_test.top1)), "{line}");
        assert!(line.contains(&cell(report.stylized_test.top1, mixed.stylized_test.top1)), "{line}");
    }
    let svg = fs::read_to_string(&out.svg_path).unwrap();
    let medians = out.table.medians();
    let dann = medians.rows.iter().find(|r| r.regime == Regime::Dann).unwrap();
    for d in [dann.base_delta.unwrap(), dann.stylized_delta.unwrap()] {
        assert!(svg.contains(&format!("({:+.2}%)", 100.0 * d)), "{svg}");
    }
    assert!(dir.path().join("out/results.txt").is_file());
    // The table can be rebuilt from the cache alone.
    assert_eq!(build_table(&out.runs, &store).unwrap(), out.table);
}

#[test]
fn suite_lambda_search_writes_audit_and_reuses_its_runs() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::new(dir.path().join("runs"));
    let spec = SuiteSpec {
        regimes: vec![Regime::Mixed, Regime::Dann],
        seeds: vec![0, 1],
        lambda: None,
        lambda_search: Some(SearchSpace {
            expand: true,
            max_expansions: 2,
            ..SearchSpace::single("lambda", &[0.1, 1.0])
        }),
        template: tiny_config(),
    };
    let mut trained = Vec::new();
    let out = run_suite(&store, &spec, &dir.path().join("fresh/out"), |cfg, r| {
        if r.epoch == 1 {
            trained.push((cfg.regime, cfg.seed, cfg.lambda));
        }
    })
    .unwrap();
    let search = out.search.as_ref().unwrap();
    assert_eq!(out.lambda, search.best.get("lambda").copied());
    let audit = fs::read_to_string(dir.path().join("fresh/out/lambda_search.csv")).unwrap();
    assert_eq!(audit.lines().count(), search.trail.len() + 1);
    assert!(audit.starts_with("config_id,lambda,val_metric,generation"), "{audit}");
    for (cfg, _) in out.runs.iter().filter(|(c, _)| c.regime == Regime::Dann) {
        assert_eq!(cfg.lambda, out.lambda);
    }
    // The seed-0 dann run at the chosen λ is the search's own run.
    let dann_seed0 = trained.iter().filter(|(r, s, _)| *r == Regime::Dann && *s == 0).count();
    assert_eq!(dann_seed0, search.trail.len());
}
