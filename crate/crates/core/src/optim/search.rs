use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One point of the search grid, keyed by hyperparameter name.
pub type Assignment = BTreeMap<String, f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchAxis {
    pub name: String,
    /// Positive candidate values; expansion multiplies or divides by 10.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub axes: Vec<SearchAxis>,
    #[serde(default = "default_expand")]
    pub expand: bool,
    #[serde(default = "default_max_expansions")]
    pub max_expansions: usize,
}

fn default_expand() -> bool {
    true
}
fn default_max_expansions() -> usize {
    2
}

impl SearchSpace {
    pub fn single(name: &str, values: &[f64]) -> Self {
        Self {
            axes: vec![SearchAxis { name: name.to_string(), values: values.to_vec() }],
            expand: true,
            max_expansions: 2,
        }
    }

    fn grid(&self) -> Vec<Assignment> {
        let mut out = vec![Assignment::new()];
        for axis in &self.axes {
            out = out
                .into_iter()
                .flat_map(|a| {
                    axis.values.iter().map(move |&v| {
                        let mut a = a.clone();
                        a.insert(axis.name.clone(), v);
                        a
                    })
                })
                .collect();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub config_id: usize,
    pub assignment: Assignment,
    pub metric: f64,
    pub generation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub best: Assignment,
    pub best_metric: f64,
    pub expansions: usize,
    pub trail: Vec<AuditRow>,
}

#[derive(Debug)]
pub struct SearchFailure<E> {
    pub error: E,
    pub failed: Assignment,
    pub trail: Vec<AuditRow>,
}

impl<E: fmt::Display> fmt::Display for SearchFailure<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "evaluation of {:?} failed after {} completed configs: {}", self.failed, self.trail.len(), self.error)
    }
}

impl<E: fmt::Debug + fmt::Display> std::error::Error for SearchFailure<E> {}

/// Rounds to 12 significant digits so that `1e-5 / 10` prints as `1e-6`.
fn tidy(x: f64) -> f64 {
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Exhaustive search over the grid. When the best configuration sits on the
/// smallest or largest value of an axis, that axis gains a value one order of
/// magnitude beyond the boundary and the new grid points are evaluated. The
/// first configuration reaching the maximum metric wins.
pub fn grid_search<E>(
    space: &SearchSpace,
    eval_fn: impl FnMut(usize, &Assignment) -> Result<f64, E>,
) -> Result<SearchOutcome, SearchFailure<E>> {
    grid_search_inner(space, eval_fn, |_| Ok::<(), io::Error>(())).map_err(|f| match f {
        Inner::Eval(f) => f,
        Inner::Log(_) => unreachable!(),
    })
}

/// As [`grid_search`], rewriting the audit CSV at `path` after every evaluation.
pub fn grid_search_logged<E: From<io::Error>>(
    space: &SearchSpace,
    path: &Path,
    eval_fn: impl FnMut(usize, &Assignment) -> Result<f64, E>,
) -> Result<SearchOutcome, SearchFailure<E>> {
    grid_search_inner(space, eval_fn, |trail| write_audit_csv(path, trail)).map_err(|f| match f {
        Inner::Eval(f) => f,
        Inner::Log((e, trail)) => SearchFailure {
            error: E::from(io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
            failed: Assignment::new(),
            trail,
        },
    })
}

enum Inner<E> {
    Eval(SearchFailure<E>),
    Log((io::Error, Vec<AuditRow>)),
}

fn grid_search_inner<E>(
    space: &SearchSpace,
    mut eval_fn: impl FnMut(usize, &Assignment) -> Result<f64, E>,
    mut log: impl FnMut(&[AuditRow]) -> Result<(), io::Error>,
) -> Result<SearchOutcome, Inner<E>> {
    assert!(space.axes.iter().all(|a| !a.values.is_empty()), "every axis needs at least one value");
    let mut space = space.clone();
    for axis in &mut space.axes {
        axis.values.sort_by(f64::total_cmp);
        axis.values.dedup_by(|a, b| same(*a, *b));
    }
    let mut trail: Vec<AuditRow> = Vec::new();
    let mut generation = 0;
    loop {
        for a in space.grid() {
            if trail.iter().any(|r| r.assignment.iter().zip(&a).all(|((_, x), (_, y))| same(*x, *y))) {
                continue;
            }
            let id = trail.len();
            match eval_fn(id, &a) {
                Ok(metric) => {
                    trail.push(AuditRow { config_id: id, assignment: a, metric, generation });
                    log(&trail).map_err(|e| Inner::Log((e, trail.clone())))?;
                }
                Err(error) => {
                    let _ = log(&trail);
                    return Err(Inner::Eval(SearchFailure { error, failed: a, trail }));
                }
            }
        }
        let best = trail
            .iter()
            .fold(None::<&AuditRow>, |acc, r| match acc {
                Some(b) if r.metric.partial_cmp(&b.metric) != Some(std::cmp::Ordering::Greater) => Some(b),
                _ => Some(r),
            })
            .expect("grid is non-empty");
        let mut grew = false;
        if space.expand && generation < space.max_expansions {
            for axis in &mut space.axes {
                if axis.values.len() < 2 {
                    continue;
                }
                let v = best.assignment[&axis.name];
                let (lo, hi) = (axis.values[0], *axis.values.last().unwrap());
                if same(v, lo) {
                    axis.values.insert(0, tidy(lo / 10.0));
                    grew = true;
                } else if same(v, hi) {
                    axis.values.push(tidy(hi * 10.0));
                    grew = true;
                }
            }
        }
        if !grew {
            return Ok(SearchOutcome {
                best: best.assignment.clone(),
                best_metric: best.metric,
                expansions: generation,
                trail,
            });
        }
        generation += 1;
    }
}

pub fn write_audit_csv(path: &Path, trail: &[AuditRow]) -> io::Result<()> {
    let names: Vec<String> = trail.first().map(|r| r.assignment.keys().cloned().collect()).unwrap_or_default();
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        let mut header = vec!["config_id".to_string()];
        header.extend(names.iter().cloned());
        header.extend(["val_metric".to_string(), "generation".to_string()]);
        w.write_record(&header)?;
        for r in trail {
            let mut row = vec![r.config_id.to_string()];
            row.extend(names.iter().map(|n| format!("{:e}", r.assignment[n])));
            row.extend([format!("{}", r.metric), r.generation.to_string()]);
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn run(f: impl Fn(f64) -> f64) -> SearchOutcome {
        let space = SearchSpace::single("lr", &[1e-3, 1e-4, 1e-5]);
        grid_search(&space, |_, a| Ok::<_, Infallible>(f(a["lr"]))).unwrap()
    }

    fn visited(o: &SearchOutcome) -> Vec<f64> {
        o.trail.iter().map(|r| r.assignment["lr"]).collect()
    }

    #[test]
    fn interior_optimum_needs_no_expansion() {
        let o = run(|x| -(x.log10() + 4.0).powi(2));
        assert_eq!(o.best["lr"], 1e-4);
        assert_eq!(o.expansions, 0);
        assert_eq!(o.trail.len(), 3);
    }

    #[test]
    fn boundary_optimum_extends_grid() {
        let o = run(|x| -(x.log10() + 5.0).powi(2));
        assert_eq!(visited(&o), vec![1e-5, 1e-4, 1e-3, 1e-6]);
        assert_eq!(o.trail[3].generation, 1);
        assert_eq!(o.best["lr"], 1e-5);
        assert_eq!(o.expansions, 1);
    }

    #[test]
    fn monotone_metric_stops_after_two_expansions() {
        let o = run(|x| -x.log10());
        assert_eq!(o.expansions, 2);
        assert_eq!(visited(&o), vec![1e-5, 1e-4, 1e-3, 1e-6, 1e-7]);
        assert_eq!(o.best["lr"], 1e-7);
        let o = run(|x| x);
        assert_eq!(o.best["lr"], 1e-1);
    }

    #[test]
    fn expansion_can_be_disabled() {
        let mut space = SearchSpace::single("lr", &[1e-3, 1e-4]);
        space.expand = false;
        let o = grid_search(&space, |_, a| Ok::<_, Infallible>(a["lr"])).unwrap();
        assert_eq!((o.best["lr"], o.trail.len()), (1e-3, 2));
    }

    #[test]
    fn ties_keep_first_evaluated() {
        let o = run(|_| 0.5);
        assert_eq!(o.best["lr"], 1e-5);
    }

    #[test]
    fn two_axes_expand_only_the_boundary_axis() {
        let space = SearchSpace {
            axes: vec![
                SearchAxis { name: "a".into(), values: vec![1.0, 10.0] },
                SearchAxis { name: "b".into(), values: vec![0.1, 1.0, 10.0] },
            ],
            expand: true,
            max_expansions: 2,
        };
        // Peak at a = 100, b = 1.
        let o =
            grid_search(&space, |_, p| Ok::<_, Infallible>(-(p["a"].log10() - 2.0).powi(2) - p["b"].log10().powi(2)))
                .unwrap();
        assert_eq!(o.best["a"], 100.0);
        assert_eq!(o.best["b"], 1.0);
        // a grows to 100 and then, still on the boundary, to 1000.
        assert_eq!(o.trail.len(), 6 + 3 + 3);
        assert_eq!(o.expansions, 2);
    }

    #[test]
    fn failure_persists_partial_trail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.csv");
        let space = SearchSpace::single("lambda", &[1e-3, 1e-4, 1e-5]);
        let err = grid_search_logged(
            &space,
            &path,
            |id, _| {
                if id == 2 {
                    Err(io::Error::other("diverged"))
                } else {
                    Ok(0.1)
                }
            },
        )
        .unwrap_err();
        assert_eq!(err.trail.len(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "config_id,lambda,val_metric,generation");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1e-5,"));
    }
}
