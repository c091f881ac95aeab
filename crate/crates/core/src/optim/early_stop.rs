#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping that keeps a snapshot of the best model.
///
/// Only a strictly greater validation metric counts as an improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping<S> {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    snapshot: Option<S>,
    since_improvement: usize,
}

impl<S> EarlyStopping<S> {
    pub fn new(patience: usize) -> Self {
        assert!(patience > 0, "patience must be positive");
        Self { patience, best: None, best_epoch: 0, snapshot: None, since_improvement: 0 }
    }

    /// Records the validation metric of `epoch`; `snapshot` is called only on improvement.
    pub fn update(&mut self, epoch: usize, metric: f64, snapshot: impl FnOnce() -> S) -> EarlyStopDecision {
        assert!(metric.is_finite(), "validation metric must be finite");
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.snapshot = Some(snapshot());
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement >= self.patience {
            EarlyStopDecision::Stop
        } else {
            EarlyStopDecision::Continue
        }
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn snapshot(&self) -> Option<&S> {
        self.snapshot.as_ref()
    }

    pub fn into_snapshot(self) -> Option<S> {
        self.snapshot
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(patience: usize, seq: &[f64]) -> (Option<usize>, usize, Option<usize>) {
        let mut es = EarlyStopping::new(patience);
        let mut stopped = None;
        for (i, &m) in seq.iter().enumerate() {
            let epoch = i + 1;
            if es.update(epoch, m, || epoch) == EarlyStopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        (stopped, es.best_epoch(), es.snapshot().copied())
    }

    #[test]
    fn stops_after_patience_and_restores_best() {
        assert_eq!(run(3, &[0.5, 0.6, 0.58, 0.59, 0.57]), (Some(5), 2, Some(2)));
    }

    #[test]
    fn improving_sequence_never_stops() {
        let seq: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        assert_eq!(run(1, &seq), (None, 50, Some(50)));
    }

    #[test]
    fn tie_decision_table() {
        // (sequence, patience) -> (stop epoch, best epoch)
        let table: [(&[f64], usize, Option<usize>, usize); 5] = [
            (&[0.5, 0.5], 1, Some(2), 1),
            (&[0.5, 0.5, 0.5], 2, Some(3), 1),
            (&[0.5, 0.5, 0.6], 2, None, 3),
            (&[0.5, 0.6, 0.6, 0.6], 2, Some(4), 2),
            (&[0.7, 0.6, 0.7, 0.7], 3, Some(4), 1),
        ];
        for (seq, patience, stop, best) in table {
            let (s, b, snap) = run(patience, seq);
            assert_eq!((s, b, snap), (stop, best, Some(best)), "{seq:?}");
        }
    }
}
