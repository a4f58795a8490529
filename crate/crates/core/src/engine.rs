//! Single-trial simulation and replicate orchestration.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arm::ArmState;
use crate::error::{Error, Result};
use crate::gittins::GittinsTable;
use crate::inference::{z_vector, ZVector};
use crate::policy::{Allocator, DecisionContext, PolicySpec};
use crate::rng::ReplicateSeed;

/// True arm means, noise level, size and allocation rule of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScenario {
    /// `K + 1` true means; index 0 is the control.
    pub means: Vec<f64>,
    pub sigma: f64,
    pub trial_size: usize,
    pub label: String,
    pub policy: PolicySpec,
}

impl TrialScenario {
    pub fn new(means: Vec<f64>, sigma: f64, trial_size: usize, label: impl Into<String>, policy: PolicySpec) -> Self {
        Self { means, sigma, trial_size, label: label.into(), policy }
    }

    /// Number of experimental arms `K`.
    pub fn experimental_arms(&self) -> usize {
        self.means.len().saturating_sub(1)
    }

    pub fn arms(&self) -> usize {
        self.means.len()
    }

    pub fn is_global_null(&self) -> bool {
        self.means.iter().all(|&m| m == self.means[0])
    }

    /// Arm with the largest true mean; ties resolve to the lowest index, so
    /// the control under the global null.
    pub fn best_arm(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.means.iter().enumerate() {
            if m > self.means[best] {
                best = i;
            }
        }
        best
    }

    /// Identifies records produced from this scenario.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|T={}|mu={:?}|sigma={}|b={}|d={}",
            self.label, self.policy.kind, self.trial_size, self.means, self.sigma, self.policy.batch, self.policy.discount
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::InvalidConfig("need a control and at least one experimental arm".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig("arm means must be finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma {} must be positive", self.sigma)));
        }
        if self.trial_size < self.means.len() {
            return Err(Error::InvalidConfig(format!(
                "trial size {} smaller than the number of arms {}",
                self.trial_size,
                self.means.len()
            )));
        }
        self.policy.validate(self.experimental_arms())
    }

    fn check_table(&self, table: Option<&GittinsTable>) -> Result<()> {
        if !self.policy.kind.needs_table() {
            return Ok(());
        }
        let name = self.policy.kind.to_string();
        let Some(t) = table else {
            return Err(Error::TableMismatch { policy: name, reason: "no table supplied".into() });
        };
        if (t.discount() - self.policy.discount).abs() > 1e-12 {
            return Err(Error::TableMismatch {
                policy: name,
                reason: format!("table discount {} but policy discount {}", t.discount(), self.policy.discount),
            });
        }
        if t.n_max() < self.trial_size {
            return Err(Error::TableMismatch {
                policy: name,
                reason: format!("table n_max {} below trial size {}", t.n_max(), self.trial_size),
            });
        }
        Ok(())
    }
}

/// What to keep from each simulated trial beyond the final statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordOptions {
    pub keep_trajectory: bool,
}

/// Trace and summary of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scenario_key: String,
    pub allocations: Vec<usize>,
    pub outcomes: Vec<f64>,
    pub arm_final: Vec<ArmState>,
    pub z: ZVector,
    /// `mean_trajectory[k][t-1]` is arm `k`'s posterior mean after patient
    /// `t`; `NaN` until the arm's first observation.
    pub mean_trajectory: Option<Vec<Vec<f64>>>,
}

impl TrialRecord {
    pub fn trial_size(&self) -> usize {
        self.allocations.len()
    }

    /// Average outcome over all patients in the trial.
    pub fn mean_outcome(&self) -> f64 {
        self.outcomes.iter().sum::<f64>() / self.outcomes.len() as f64
    }

    /// `t,arm,outcome` rows, `t` 1-based.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t,arm,outcome\n");
        for (i, (a, y)) in self.allocations.iter().zip(&self.outcomes).enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, a, y);
        }
        out
    }

    /// `arm,n,mean` rows.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("arm,n,mean\n");
        for (k, arm) in self.arm_final.iter().enumerate() {
            let mean = arm.mean().map_or_else(|| "NA".to_string(), |m| m.to_string());
            let _ = writeln!(out, "{},{},{}", k, arm.n, mean);
        }
        out
    }
}

/// Simulates one trial, keeping only allocations, outcomes and final statistics.
pub fn run_trial(scenario: &TrialScenario, table: Option<&GittinsTable>, seed: ReplicateSeed) -> Result<TrialRecord> {
    run_trial_with(scenario, table, seed, RecordOptions::default())
}

/// Simulates one trial.
///
/// Patients arrive one at a time. Each outcome is `μ_k + σ·ε_t`, where `ε_t`
/// is the `t`-th draw of the replicate's outcome stream, and it is visible to
/// the rule before the next patient is allocated (batched rules see it at
/// their next refresh).
pub fn run_trial_with(
    scenario: &TrialScenario,
    table: Option<&GittinsTable>,
    seed: ReplicateSeed,
    opts: RecordOptions,
) -> Result<TrialRecord> {
    scenario.validate()?;
    scenario.check_table(table)?;
    let arms_len = scenario.arms();
    let trial_size = scenario.trial_size;
    let mut policy_rng = seed.policy_rng();
    let mut outcome_rng = seed.outcome_rng();

    let mut allocator = Allocator::new(scenario.policy.clone(), arms_len, &mut policy_rng);
    let mut arms = vec![ArmState::default(); arms_len];
    let mut allocations = Vec::with_capacity(trial_size);
    let mut outcomes = Vec::with_capacity(trial_size);
    let mut trajectory = opts.keep_trajectory.then(|| vec![Vec::with_capacity(trial_size); arms_len]);

    for patient in 1..=trial_size {
        let ctx = DecisionContext {
            arms: &arms,
            sigma: scenario.sigma,
            patient,
            trial_size,
            table,
        };
        let arm = allocator.next_arm(&ctx, &mut policy_rng)?;
        let noise: f64 = StandardNormal.sample(&mut outcome_rng);
        let y = scenario.means[arm] + scenario.sigma * noise;
        if !y.is_finite() {
            return Err(Error::NonFiniteOutcome { arm, patient, value: y });
        }
        arms[arm].observe(y);
        allocations.push(arm);
        outcomes.push(y);
        if let Some(tr) = trajectory.as_mut() {
            for (k, series) in tr.iter_mut().enumerate() {
                series.push(arms[k].mean().unwrap_or(f64::NAN));
            }
        }
    }

    let z = z_vector(&arms, scenario.sigma)?;
    Ok(TrialRecord {
        scenario_key: scenario.key(),
        allocations,
        outcomes,
        arm_final: arms,
        z,
        mean_trajectory: trajectory,
    })
}

/// `m` independent replicates; replicate `r` uses `ReplicateSeed(master_seed, r)`.
/// Runs on the rayon pool when the `parallel` feature is enabled; the output
/// is identical either way.
pub fn run_replicates(
    scenario: &TrialScenario,
    table: Option<&GittinsTable>,
    master_seed: u64,
    m: usize,
) -> Result<Vec<TrialRecord>> {
    run_replicates_with(scenario, table, master_seed, m, RecordOptions::default())
}

pub fn run_replicates_with(
    scenario: &TrialScenario,
    table: Option<&GittinsTable>,
    master_seed: u64,
    m: usize,
    opts: RecordOptions,
) -> Result<Vec<TrialRecord>> {
    if m == 0 {
        return Err(Error::InvalidConfig("replicate count must be at least 1".into()));
    }
    scenario.validate()?;
    scenario.check_table(table)?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..m as u64)
            .into_par_iter()
            .map(|r| run_trial_with(scenario, table, ReplicateSeed::new(master_seed, r), opts))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_replicates_sequential_with(scenario, table, master_seed, m, opts)
    }
}

/// Same contract as [`run_replicates`], always on the calling thread.
pub fn run_replicates_sequential(
    scenario: &TrialScenario,
    table: Option<&GittinsTable>,
    master_seed: u64,
    m: usize,
) -> Result<Vec<TrialRecord>> {
    run_replicates_sequential_with(scenario, table, master_seed, m, RecordOptions::default())
}

pub fn run_replicates_sequential_with(
    scenario: &TrialScenario,
    table: Option<&GittinsTable>,
    master_seed: u64,
    m: usize,
    opts: RecordOptions,
) -> Result<Vec<TrialRecord>> {
    if m == 0 {
        return Err(Error::InvalidConfig("replicate count must be at least 1".into()));
    }
    (0..m as u64)
        .map(|r| run_trial_with(scenario, table, ReplicateSeed::new(master_seed, r), opts))
        .collect()
}
