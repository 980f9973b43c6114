//! Piecewise-constant reward weights driven by training progress.

use serde::{Deserialize, Serialize};

use super::RewardError;

/// Action and relevance weights for one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
}

/// Early/late weight pairs and the progress threshold that switches them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub alpha_early: f64,
    pub alpha_late: f64,
    pub beta_early: f64,
    pub beta_late: f64,
    /// Fraction of training after which the late pair applies, in (0, 1).
    pub threshold_p: f64,
    /// Total number of training iterations.
    pub total_iters: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            alpha_early: 0.3,
            alpha_late: 0.05,
            beta_early: 0.1,
            beta_late: 0.5,
            threshold_p: 0.4,
            total_iters: 300,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let weights = [self.alpha_early, self.alpha_late, self.beta_early, self.beta_late];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RewardError::InvalidSchedule("weights must be finite and non-negative".into()));
        }
        if !(self.threshold_p > 0.0 && self.threshold_p < 1.0) {
            return Err(RewardError::InvalidSchedule(format!(
                "threshold_p must lie strictly between 0 and 1, got {}",
                self.threshold_p
            )));
        }
        if self.total_iters == 0 {
            return Err(RewardError::InvalidSchedule("total_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn early(&self) -> Weights {
        Weights { alpha: self.alpha_early, beta: self.beta_early }
    }

    pub fn late(&self) -> Weights {
        Weights { alpha: self.alpha_late, beta: self.beta_late }
    }

    /// Midpoint of the early and late pairs, used when the schedule is frozen.
    pub fn midpoint(&self) -> Weights {
        Weights {
            alpha: 0.5 * (self.alpha_early + self.alpha_late),
            beta: 0.5 * (self.beta_early + self.beta_late),
        }
    }

    /// Same schedule with both relevance weights set to zero.
    pub fn without_relevance(&self) -> Self {
        Self { beta_early: 0.0, beta_late: 0.0, ..self.clone() }
    }
}

/// Early pair while `iter / total_iters <= threshold_p`, late pair afterwards.
pub fn schedule_weights(config: &ScheduleConfig, iter: usize) -> Weights {
    debug_assert!(iter <= config.total_iters, "iteration beyond the schedule horizon");
    let progress = iter as f64 / config.total_iters as f64;
    if progress <= config.threshold_p {
        config.early()
    } else {
        config.late()
    }
}

/// How weights are chosen at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightMode {
    Dynamic,
    Fixed(Weights),
}

impl WeightMode {
    pub fn weights(&self, config: &ScheduleConfig, iter: usize) -> Weights {
        match self {
            WeightMode::Dynamic => schedule_weights(config, iter),
            WeightMode::Fixed(w) => *w,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize, p: f64) -> ScheduleConfig {
        ScheduleConfig { threshold_p: p, total_iters: total, ..ScheduleConfig::default() }
    }

    #[test]
    fn switch_boundary_is_inclusive() {
        let c = cfg(100, 0.5);
        assert_eq!(schedule_weights(&c, 30), c.early());
        assert_eq!(schedule_weights(&c, 50), c.early());
        assert_eq!(schedule_weights(&c, 51), c.late());
        assert_eq!(schedule_weights(&c, 0), c.early());
        assert_eq!(schedule_weights(&c, 100), c.late());
    }

    #[test]
    fn single_switch_point() {
        for (total, p) in [(100, 0.4), (300, 0.4), (7, 0.3), (1, 0.5), (13, 0.77)] {
            let c = cfg(total, p);
            let seq: Vec<_> = (1..=total).map(|t| schedule_weights(&c, t)).collect();
            let switches = seq.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(switches <= 1);
            let expected_first_late = (p * total as f64).floor() as usize + 1;
            for (i, w) in seq.iter().enumerate() {
                let t = i + 1;
                let want = if t < expected_first_late { c.early() } else { c.late() };
                assert_eq!(*w, want, "t={t} T={total} P={p}");
            }
        }
    }

    #[test]
    fn validation() {
        assert!(ScheduleConfig::default().validate().is_ok());
        assert!(cfg(100, 0.0).validate().is_err());
        assert!(cfg(100, 1.0).validate().is_err());
        assert!(cfg(0, 0.5).validate().is_err());
        let neg = ScheduleConfig { alpha_late: -0.1, ..ScheduleConfig::default() };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn default_ordering_favours_exploration_early() {
        let c = ScheduleConfig::default();
        assert!(c.alpha_early > c.alpha_late);
        assert!(c.beta_early < c.beta_late);
        let mid = c.midpoint();
        assert!((mid.alpha - 0.175).abs() < 1e-12 && (mid.beta - 0.3).abs() < 1e-12);
    }
}
