use serde::{Deserialize, Serialize};

use super::OptimError;

/// Multi-step learning-rate schedule: after `epoch` completed epochs the
/// learning rate is `base · gamma^(milestones ≤ epoch)`.
///
/// With `plateau_epochs` set, a milestone is also added automatically once
/// the training loss fails to improve for that many consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSpec {
    #[serde(default)]
    pub milestones: Vec<usize>,
    pub gamma: f64,
    #[serde(default)]
    pub plateau_epochs: Option<usize>,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        Self { milestones: Vec::new(), gamma: 0.5, plateau_epochs: None }
    }
}

impl SchedulerSpec {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(OptimError::Spec(format!("scheduler gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(OptimError::Spec(format!("milestones must be strictly increasing: {:?}", self.milestones)));
        }
        if self.plateau_epochs == Some(0) {
            return Err(OptimError::Spec("plateau_epochs must be positive".into()));
        }
        Ok(())
    }
}

pub fn scheduler_scale(spec: &SchedulerSpec, epoch: usize) -> f64 {
    let passed = spec.milestones.iter().filter(|&&m| m <= epoch).count();
    spec.gamma.powi(passed as i32)
}

/// Scheduler state for one run, including milestones added by the plateau rule.
#[derive(Clone, Debug)]
pub struct MultiStepScheduler {
    spec: SchedulerSpec,
    best_loss: f64,
    stale: usize,
}

impl MultiStepScheduler {
    pub fn new(spec: SchedulerSpec) -> Result<Self, OptimError> {
        spec.validate()?;
        Ok(Self { spec, best_loss: f64::INFINITY, stale: 0 })
    }

    pub fn scale(&self, epoch: usize) -> f64 {
        scheduler_scale(&self.spec, epoch)
    }

    pub fn milestones(&self) -> &[usize] {
        &self.spec.milestones
    }

    /// Records the training loss of the epoch that just finished (`completed`
    /// epochs so far) and applies the plateau rule.
    pub fn observe(&mut self, completed: usize, train_loss: f64) {
        let Some(window) = self.spec.plateau_epochs else {
            return;
        };
        if train_loss < self.best_loss {
            self.best_loss = train_loss;
            self.stale = 0;
            return;
        }
        self.stale += 1;
        if self.stale >= window && self.spec.milestones.last().is_none_or(|&m| m < completed) {
            self.spec.milestones.push(completed);
            self.stale = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn milestone_table() {
        let s = SchedulerSpec { milestones: vec![10, 20], gamma: 0.5, plateau_epochs: None };
        assert_eq!(scheduler_scale(&s, 9), 1.0);
        assert_eq!(scheduler_scale(&s, 10), 0.5);
        assert_eq!(scheduler_scale(&s, 25), 0.25);
        let none = SchedulerSpec { milestones: vec![], gamma: 0.2, plateau_epochs: None };
        assert!((0..100).all(|e| scheduler_scale(&none, e) == 1.0));
        let one = SchedulerSpec { milestones: vec![5], gamma: 0.2, plateau_epochs: None };
        assert_eq!(scheduler_scale(&one, 5), 0.2);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SchedulerSpec { milestones: vec![3, 3], gamma: 0.5, plateau_epochs: None }.validate().is_err());
        assert!(SchedulerSpec { milestones: vec![], gamma: 1.0, plateau_epochs: None }.validate().is_err());
        assert!(SchedulerSpec { milestones: vec![], gamma: 0.5, plateau_epochs: Some(0) }.validate().is_err());
    }

    #[test]
    fn plateau_rule_adds_milestone() {
        let mut s =
            MultiStepScheduler::new(SchedulerSpec { milestones: vec![], gamma: 0.5, plateau_epochs: Some(5) }).unwrap();
        let losses = [1.0, 0.8, 0.7, 0.71, 0.72, 0.70, 0.75, 0.9, 0.65];
        for (i, &l) in losses.iter().enumerate() {
            s.observe(i + 1, l);
        }
        assert_eq!(s.milestones(), &[8]);
        assert_eq!(s.scale(7), 1.0);
        assert_eq!(s.scale(8), 0.5);
    }

    proptest! {
        #[test]
        fn scale_is_monotone_and_jumps_only_at_milestones(
            mut ms in proptest::collection::btree_set(1usize..60, 0..6),
            gamma in 0.05f64..0.95,
        ) {
            let milestones: Vec<usize> = std::mem::take(&mut ms).into_iter().collect();
            let spec = SchedulerSpec { milestones: milestones.clone(), gamma, plateau_epochs: None };
            for e in 1..80 {
                let (prev, cur) = (scheduler_scale(&spec, e - 1), scheduler_scale(&spec, e));
                prop_assert!(cur <= prev);
                prop_assert_eq!(cur < prev, milestones.contains(&e));
            }
        }
    }
}
