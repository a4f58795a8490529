//! Aggregation of replicate records into operating characteristics, bias
//! trajectories and test-statistic histograms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{TrialRecord, TrialScenario};
use crate::error::{Error, Result};
use crate::inference::{apply_test, mean_sd, CriticalValue, Histogram};

/// Summary of a design under one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub policy: String,
    pub hypothesis: String,
    pub critical_value: f64,
    /// Type I error (FWER) under the global null; otherwise the marginal
    /// power `P[Z_k > C]` for the arm with the largest true mean.
    pub rejection_rate: f64,
    /// `P[Z_max > C]`.
    pub global_rejection_rate: f64,
    /// Mean and s.d. of the share of patients on the best arm.
    pub e_pstar: f64,
    pub sd_pstar: f64,
    /// Mean and s.d. of the per-trial average outcome.
    pub e_outcome: f64,
    pub sd_outcome: f64,
    pub replicates: usize,
    /// Expected outcome if every patient received the best arm.
    pub upper_bound_outcome: f64,
}

impl OperatingCharacteristics {
    pub const CSV_HEADER: &'static str =
        "policy,hypothesis,C_alpha,rejection_rate,global_rejection_rate,e_pstar,sd_pstar,e_outcome,sd_outcome,M,seed";

    /// One results row; rates at 6 decimals, the critical value at full precision.
    pub fn csv_row(&self, seed: u64) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.policy,
            self.hypothesis,
            self.critical_value,
            self.rejection_rate,
            self.global_rejection_rate,
            self.e_pstar,
            self.sd_pstar,
            self.e_outcome,
            self.sd_outcome,
            self.replicates,
            seed
        )
    }
}

fn check_records(records: &[TrialRecord], scenario: &TrialScenario) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let key = scenario.key();
    if let Some(r) = records.iter().find(|r| r.scenario_key != key) {
        return Err(Error::MixedScenarios { expected: key, found: r.scenario_key.clone() });
    }
    Ok(())
}

/// Aggregates replicates of `scenario` tested at critical value `c`.
pub fn aggregate(records: &[TrialRecord], scenario: &TrialScenario, c: &CriticalValue) -> Result<OperatingCharacteristics> {
    check_records(records, scenario)?;
    let best = scenario.best_arm();
    let null = scenario.is_global_null();
    let m = records.len() as f64;

    let mut marginal = 0usize;
    let mut global = 0usize;
    for r in records {
        let d = apply_test(r, c);
        global += d.global_reject as usize;
        if best > 0 {
            marginal += d.arm_reject[best - 1] as usize;
        }
    }
    let global_rate = global as f64 / m;
    let rejection_rate = if null || best == 0 { global_rate } else { marginal as f64 / m };

    let (e_pstar, sd_pstar) = mean_sd(
        records
            .iter()
            .map(|r| r.arm_final[best].n as f64 / r.trial_size() as f64),
    );
    let (e_outcome, sd_outcome) = mean_sd(records.iter().map(TrialRecord::mean_outcome));

    Ok(OperatingCharacteristics {
        policy: scenario.policy.kind.to_string(),
        hypothesis: scenario.label.clone(),
        critical_value: c.value,
        rejection_rate,
        global_rejection_rate: global_rate,
        e_pstar,
        sd_pstar,
        e_outcome,
        sd_outcome,
        replicates: records.len(),
        upper_bound_outcome: scenario.means[best],
    })
}

/// Mean bias `E(x̄_k^(t) − μ_k)` of one arm across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTrajectory {
    pub arm: usize,
    /// Patient indices `K+2..=T`.
    pub t_grid: Vec<usize>,
    pub mean_bias: Vec<f64>,
    /// Monte Carlo standard error of each entry.
    pub std_error: Vec<f64>,
    pub replicate_counts: Vec<usize>,
}

/// Bias trajectories for every arm, starting at the first patient after
/// start-up.
pub fn bias_trajectories(records: &[TrialRecord], scenario: &TrialScenario) -> Result<Vec<BiasTrajectory>> {
    check_records(records, scenario)?;
    let trajectories: Vec<&Vec<Vec<f64>>> = records
        .iter()
        .map(|r| r.mean_trajectory.as_ref().ok_or(Error::MissingTrajectories))
        .collect::<Result<_>>()?;
    let k = scenario.experimental_arms();
    let t_grid: Vec<usize> = (k + 2..=scenario.trial_size).collect();
    let mut out = Vec::with_capacity(scenario.arms());
    for (arm, &mu) in scenario.means.iter().enumerate() {
        let mut mean_bias = Vec::with_capacity(t_grid.len());
        let mut std_error = Vec::with_capacity(t_grid.len());
        let mut counts = Vec::with_capacity(t_grid.len());
        for &t in &t_grid {
            let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
            for tr in &trajectories {
                let x = tr[arm][t - 1];
                if x.is_finite() {
                    let b = x - mu;
                    n += 1;
                    sum += b;
                    sum_sq += b * b;
                }
            }
            let (mean, se) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = sum / n as f64;
                let var = (sum_sq / n as f64 - mean * mean).max(0.0);
                (mean, (var / n as f64).sqrt())
            };
            mean_bias.push(mean);
            std_error.push(se);
            counts.push(n);
        }
        out.push(BiasTrajectory { arm, t_grid: t_grid.clone(), mean_bias, std_error, replicate_counts: counts });
    }
    Ok(out)
}

/// `arm,t,mean_bias,count` rows for every trajectory.
pub fn bias_csv(trajectories: &[BiasTrajectory]) -> String {
    let mut out = String::from("arm,t,mean_bias,count\n");
    for tr in trajectories {
        for ((t, b), c) in tr.t_grid.iter().zip(&tr.mean_bias).zip(&tr.replicate_counts) {
            let _ = writeln!(out, "{},{},{:.6},{}", tr.arm, t, b, c);
        }
    }
    out
}

/// Histograms of `Z` (one experimental arm) or of each `Z_k` and `Z_max`,
/// using the binning of `template`.
pub fn z_histogram(records: &[TrialRecord], template: &Histogram) -> Vec<(String, Histogram)> {
    let k = records.first().map_or(0, |r| r.z.z.len());
    let empty = || Histogram { counts: vec![0; template.counts.len()], underflow: 0, overflow: 0, ..template.clone() };
    if k == 1 {
        let mut h = empty();
        records.iter().for_each(|r| h.add(r.z.z[0]));
        return vec![("Z".to_string(), h)];
    }
    let mut out: Vec<(String, Histogram)> = (1..=k).map(|j| (format!("Z{j}"), empty())).collect();
    let mut hmax = empty();
    for r in records {
        for (j, &z) in r.z.z.iter().enumerate() {
            out[j].1.add(z);
        }
        hmax.add(r.z.zmax);
    }
    out.push(("Zmax".to_string(), hmax));
    out
}
