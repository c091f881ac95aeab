use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::store::{write_atomic, RunStore, TimingReport};
use super::train::{train, EpochRecord, RunReport};
use super::{ExperimentConfig, HarnessError, Regime, SuiteSpec};
use crate::optim::{grid_search_logged, SearchOutcome, SearchSpace};

/// Returns the cached report for `cfg`, training and persisting it first when
/// absent (or always, with `force`).
pub fn run_config(
    store: &RunStore,
    cfg: &ExperimentConfig,
    force: bool,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<RunReport, HarnessError> {
    if !force {
        if let Some(r) = store.load_report(cfg)? {
            return Ok(r);
        }
    }
    let start = Instant::now();
    let out = train(cfg, &mut observe)?;
    let wall = start.elapsed().as_secs_f64();
    let epochs = out.report.epochs_run;
    let timing = TimingReport {
        wall_seconds: wall,
        epochs,
        seconds_per_epoch: wall / epochs.max(1) as f64,
        threads: rayon::current_num_threads(),
    };
    store.save(cfg, &out.report, &out.net, &timing)?;
    Ok(out.report)
}

/// Grid search over named hyperparameters of `base`, scored by best
/// validation Top-1. Every evaluated point is cached as a normal run and the
/// audit trail is rewritten at `audit` after each evaluation.
pub fn search_hyperparameters(
    store: &RunStore,
    base: &ExperimentConfig,
    space: &SearchSpace,
    audit: &Path,
    mut observe: impl FnMut(&ExperimentConfig, &EpochRecord),
) -> Result<SearchOutcome, HarnessError> {
    if let Some(parent) = audit.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    grid_search_logged(space, audit, |_, assignment| {
        let mut cfg = base.clone();
        for (name, &v) in assignment {
            cfg.set_hyperparameter(name, v)?;
        }
        cfg.validate()?;
        let report = run_config(store, &cfg, false, |r| observe(&cfg, r))?;
        Ok(report.best_val_top1)
    })
    .map_err(|f| HarnessError::Search { completed: f.trail.len(), source: Box::new(f.error) })
}

/// One table row. Rows built from runs hold a single seed; [`ResultTable::medians`]
/// folds seeds together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub lambda: Option<f64>,
    pub k: usize,
    pub base_top1: f64,
    pub base_topk: f64,
    pub stylized_top1: f64,
    pub stylized_topk: f64,
    pub shape_bias: Option<f64>,
    pub domain_accuracy: Option<f64>,
    /// Dann minus mixed Top-1 on the base and stylized test sets.
    pub base_delta: Option<f64>,
    pub stylized_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_of(rows: &[&ResultRow], f: impl Fn(&ResultRow) -> f64) -> f64 {
    median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>())
}

fn median_opt(rows: &[&ResultRow], f: impl Fn(&ResultRow) -> Option<f64>) -> Option<f64> {
    let mut v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| median(&mut v))
}

/// `(+1.25%)` style suffix for a fractional accuracy difference.
pub fn format_delta(delta: f64) -> String {
    format!("({:+.2}%)", 100.0 * delta)
}

fn row_for(cfg: &ExperimentConfig, r: &RunReport) -> ResultRow {
    ResultRow {
        dataset: cfg.dataset_name.clone(),
        model: r.model.clone(),
        regime: cfg.regime,
        seeds: vec![cfg.seed],
        lambda: cfg.lambda,
        k: r.base_test.k,
        base_top1: r.base_test.top1,
        base_topk: r.base_test.topk,
        stylized_top1: r.stylized_test.top1,
        stylized_topk: r.stylized_test.topk,
        shape_bias: r.shape_bias.score,
        domain_accuracy: r.domain_accuracy,
        base_delta: None,
        stylized_delta: None,
    }
}

/// One row per finished run, in input order. Dann rows carry their difference
/// from the mixed run with the same settings and seed, taken from `runs` or
/// from the cache.
pub fn build_table(runs: &[(ExperimentConfig, RunReport)], store: &RunStore) -> Result<ResultTable, HarnessError> {
    let mut rows = Vec::with_capacity(runs.len());
    for (cfg, report) in runs {
        let mut row = row_for(cfg, report);
        if cfg.regime == Regime::Dann {
            let counterpart = cfg.mixed_counterpart();
            let hash = counterpart.hash();
            let mixed = match runs.iter().find(|(_, r)| r.config_hash == hash) {
                Some((_, r)) => r.clone(),
                None => store
                    .load_report(&counterpart)?
                    .ok_or_else(|| HarnessError::MissingRun { regime: "mixed".into(), hash: hash.clone() })?,
            };
            row.base_delta = Some(report.base_test.top1 - mixed.base_test.top1);
            row.stylized_delta = Some(report.stylized_test.top1 - mixed.stylized_test.top1);
        }
        rows.push(row);
    }
    Ok(ResultTable { rows })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn with_delta(x: f64, delta: Option<f64>) -> String {
    match delta {
        Some(d) => format!("{} {}", pct(x), format_delta(d)),
        None => pct(x),
    }
}

impl ResultTable {
    pub const CSV_HEADER: [&'static str; 11] = [
        "dataset",
        "model",
        "regime",
        "seed",
        "base_top1",
        "base_topk",
        "stylized_top1",
        "stylized_topk",
        "shape_bias",
        "domain_accuracy",
        "lambda",
    ];

    fn cells(row: &ResultRow) -> Vec<String> {
        let seeds: Vec<String> = row.seeds.iter().map(u64::to_string).collect();
        vec![
            row.dataset.clone(),
            row.model.clone(),
            row.regime.name().to_string(),
            seeds.join(" "),
            with_delta(row.base_top1, row.base_delta),
            pct(row.base_topk),
            with_delta(row.stylized_top1, row.stylized_delta),
            pct(row.stylized_topk),
            row.shape_bias.map_or_else(|| "n/a".into(), |s| format!("{s:.3}")),
            row.domain_accuracy.map_or_else(String::new, pct),
            row.lambda.map_or_else(String::new, |l| format!("{l:e}")),
        ]
    }

    /// Median over seeds for every (dataset, model, regime) group, in order of
    /// first appearance. Deltas are medians of the per-seed deltas.
    pub fn medians(&self) -> ResultTable {
        let mut keys: Vec<(&str, &str, Regime)> = Vec::new();
        for r in &self.rows {
            let key = (r.dataset.as_str(), r.model.as_str(), r.regime);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let rows = keys
            .into_iter()
            .map(|(dataset, model, regime)| {
                let g: Vec<&ResultRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.dataset == dataset && r.model == model && r.regime == regime)
                    .collect();
                ResultRow {
                    dataset: dataset.to_string(),
                    model: model.to_string(),
                    regime,
                    seeds: g.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
                    lambda: g[0].lambda,
                    k: g[0].k,
                    base_top1: median_of(&g, |r| r.base_top1),
                    base_topk: median_of(&g, |r| r.base_topk),
                    stylized_top1: median_of(&g, |r| r.stylized_top1),
                    stylized_topk: median_of(&g, |r| r.stylized_topk),
                    shape_bias: median_opt(&g, |r| r.shape_bias),
                    domain_accuracy: median_opt(&g, |r| r.domain_accuracy),
                    base_delta: median_opt(&g, |r| r.base_delta),
                    stylized_delta: median_opt(&g, |r| r.stylized_delta),
                }
            })
            .collect();
        ResultTable { rows }
    }

    /// Accuracies are percentages with two decimals; dann rows carry their
    /// difference from the mixed run in parentheses.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record(Self::cells(row)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Fixed-width text rendering for terminals.
    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![Self::CSV_HEADER.iter().map(|s| s.to_string()).collect()];
        grid.extend(self.rows.iter().map(Self::cells));
        let widths: Vec<usize> =
            (0..Self::CSV_HEADER.len()).map(|j| grid.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        grid.iter()
            .map(|r| {
                let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                line.join("  ").trim_end().to_string() + "\n"
            })
            .collect()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bar chart: one group per table row, with base and stylized Top-1 bars.
pub fn render_svg_chart(table: &ResultTable) -> String {
    let (group_w, bar_w, plot_h, left, top) = (90.0, 30.0, 240.0, 50.0, 30.0);
    let width = left + group_w * table.rows.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 70.0;
    let colors = ["#4c72b0", "#dd8452"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    s += &format!("<text x=\"{left}\" y=\"18\" font-size=\"13\">Top-1 accuracy (%)</text>\n");
    for tick in 0..=4 {
        let v = tick as f64 * 25.0;
        let y = top + plot_h * (1.0 - v / 100.0);
        s += &format!("<line x1=\"{left}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>\n", width - 20.0);
        s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v}</text>\n", left - 6.0, y + 4.0);
    }
    for (i, row) in table.rows.iter().enumerate() {
        let x0 = left + group_w * i as f64 + 12.0;
        let bars = [(row.base_top1, row.base_delta), (row.stylized_top1, row.stylized_delta)];
        for (j, ((value, delta), color)) in bars.iter().zip(colors).enumerate() {
            let h = plot_h * value.clamp(0.0, 1.0);
            let x = x0 + j as f64 * bar_w;
            s += &format!(
                "<rect x=\"{x}\" y=\"{}\" width=\"{}\" height=\"{h}\" fill=\"{color}\"><title>{:.2}</title></rect>\n",
                top + plot_h - h,
                bar_w - 4.0,
                100.0 * value
            );
            if let Some(d) = delta {
                s += &format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"8\">{}</text>\n",
                    x + (bar_w - 4.0) / 2.0,
                    top + plot_h - h - 3.0,
                    format_delta(*d)
                );
            }
        }
        let label = xml_escape(&format!("{}/{}", row.model, row.regime.name()));
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n",
            x0 + bar_w - 2.0,
            top + plot_h + 16.0
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#666\">{}</text>\n",
            x0 + bar_w - 2.0,
            top + plot_h + 30.0,
            xml_escape(&row.dataset)
        );
    }
    for (j, (name, color)) in ["base test", "stylized test"].iter().zip(colors).enumerate() {
        let x = left + 110.0 * j as f64;
        let y = height - 16.0;
        s += &format!("<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n", y - 9.0);
        s += &format!("<text x=\"{}\" y=\"{y}\">{name}</text>\n", x + 14.0);
    }
    s + "</svg>\n"
}

pub struct SuiteOutcome {
    pub lambda: Option<f64>,
    pub search: Option<SearchOutcome>,
    pub runs: Vec<(ExperimentConfig, RunReport)>,
    pub table: ResultTable,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

/// Runs (or loads) every config of a suite, then writes `results.csv` (one
/// row per run), `results.txt` and `chart.svg` (medians over seeds) into
/// `out_dir`. When the suite asks for a λ search, it runs once with the first
/// seed and the winner is used for all seeds.
pub fn run_suite(
    store: &RunStore,
    spec: &SuiteSpec,
    out_dir: &Path,
    mut observe: impl FnMut(&ExperimentConfig, &EpochRecord),
) -> Result<SuiteOutcome, HarnessError> {
    let wants_dann = spec.regimes.contains(&Regime::Dann);
    let mut search = None;
    let lambda = match (&spec.lambda_search, wants_dann) {
        (Some(space), true) => {
            let seed = *spec.seeds.first().ok_or_else(|| HarnessError::Config("suite has no seeds".into()))?;
            let start = space.axes.iter().find(|a| a.name == "lambda").and_then(|a| a.values.first()).copied();
            let mut base = spec.template.with_regime(Regime::Dann, Some(start.unwrap_or(0.0)));
            base.seed = seed;
            let outcome =
                search_hyperparameters(store, &base, space, &out_dir.join("lambda_search.csv"), &mut observe)?;
            let best = outcome.best.get("lambda").copied();
            search = Some(outcome);
            best
        }
        _ => spec.lambda,
    };
    let configs = spec.expand(lambda)?;
    let mut runs = Vec::new();
    for cfg in configs {
        let report = run_config(store, &cfg, false, |r| observe(&cfg, r))?;
        runs.push((cfg, report));
    }
    let table = build_table(&runs, store)?;
    let csv_path = out_dir.join("results.csv");
    let svg_path = out_dir.join("chart.svg");
    write_atomic(&csv_path, table.to_csv().as_bytes())?;
    let text = format!("per run\n{}\nmedian over seeds\n{}", table.to_text(), table.medians().to_text());
    write_atomic(&out_dir.join("results.txt"), text.as_bytes())?;
    write_atomic(&svg_path, render_svg_chart(&table.medians()).as_bytes())?;
    Ok(SuiteOutcome { lambda, search, runs, table, csv_path, svg_path })
}
