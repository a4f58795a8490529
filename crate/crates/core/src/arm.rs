use serde::{Deserialize, Serialize};

/// Sufficient statistic `(x̄, n)` of one arm's posterior under a flat prior.
/// With known `σ²` the posterior of the arm mean is `N(x̄, σ²/n)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub sum: f64,
    pub n: usize,
}

impl ArmState {
    pub fn from_outcomes(outcomes: &[f64]) -> Self {
        let mut arm = Self::default();
        for &y in outcomes {
            arm.observe(y);
        }
        arm
    }

    /// Builds a state with the given mean and count.
    pub fn with_mean(mean: f64, n: usize) -> Self {
        Self { sum: mean * n as f64, n }
    }

    pub fn observe(&mut self, y: f64) {
        self.sum += y;
        self.n += 1;
    }

    /// Posterior mean; `None` before the first observation.
    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_arm_has_no_mean() {
        assert_eq!(ArmState::default().mean(), None);
    }

    proptest! {
        #[test]
        fn incremental_mean_matches_batch(ys in prop::collection::vec(-50.0f64..50.0, 1..200)) {
            let arm = ArmState::from_outcomes(&ys);
            let batch = ys.iter().sum::<f64>() / ys.len() as f64;
            prop_assert_eq!(arm.n, ys.len());
            prop_assert!((arm.mean().unwrap() - batch).abs() <= 1e-12 * batch.abs().max(1.0));
        }
    }
}
