//! Test statistics, FWER-controlling critical values, trial sizing and Monte
//! Carlo calibration of critical values for adaptive designs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arm::ArmState;
use crate::engine::{run_replicates, TrialRecord, TrialScenario};
use crate::error::{Error, Result};
use crate::gittins::GittinsTable;
use crate::normal;

/// `Z_k = (x̄_k − x̄_0) / (σ√(1/n_k + 1/n_0))`.
pub fn z_statistic(arm_k: &ArmState, arm_0: &ArmState, sigma: f64) -> Result<f64> {
    let m0 = arm_0.mean().ok_or(Error::UndefinedStatistic { arm: 0 })?;
    let mk = arm_k.mean().ok_or(Error::UndefinedStatistic { arm: 1 })?;
    Ok((mk - m0) / (sigma * (1.0 / arm_k.n as f64 + 1.0 / arm_0.n as f64).sqrt()))
}

/// Statistics `Z_1..Z_K` of one trial and their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZVector {
    pub z: Vec<f64>,
    pub zmax: f64,
}

impl ZVector {
    pub fn new(z: Vec<f64>) -> Self {
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self { z, zmax }
    }
}

/// Computes every experimental arm's statistic against arm 0.
pub fn z_vector(arms: &[ArmState], sigma: f64) -> Result<ZVector> {
    let control = &arms[0];
    if control.n == 0 {
        return Err(Error::UndefinedStatistic { arm: 0 });
    }
    let z = arms[1..]
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if a.n == 0 {
                Err(Error::UndefinedStatistic { arm: i + 1 })
            } else {
                z_statistic(a, control, sigma)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ZVector::new(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalMethod {
    AnalyticMvn,
    EmpiricalPercentile,
    Fixed,
}

/// Where an empirical critical value came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub replicates: usize,
    pub master_seed: u64,
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub value: f64,
    pub method: CriticalMethod,
    pub alpha: f64,
    pub provenance: Option<Provenance>,
}

impl CriticalValue {
    pub fn fixed(value: f64, alpha: f64) -> Self {
        Self { value, method: CriticalMethod::Fixed, alpha, provenance: None }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1)")))
    }
}

/// `P[max_j Z_j ≤ c]` for `K` equicorrelated (`ρ = 1/2`) standard normals.
///
/// Writing `Z_j = (ε_j − ε_0)/√2` with i.i.d. standard normals gives
/// `∫ φ(u) Φ(√2·c + u)^K du`, evaluated by composite Simpson on `[-12, 12]`.
pub fn equicorrelated_max_cdf(k: usize, c: f64) -> f64 {
    const HALF_WIDTH: f64 = 12.0;
    const PANELS: usize = 4800;
    let h = 2.0 * HALF_WIDTH / PANELS as f64;
    let shift = std::f64::consts::SQRT_2 * c;
    let f = |u: f64| normal::pdf(u) * normal::cdf(shift + u).powi(k as i32);
    let mut acc = f(-HALF_WIDTH) + f(HALF_WIDTH);
    for i in 1..PANELS {
        let u = -HALF_WIDTH + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
    }
    acc * h / 3.0
}

/// Critical value controlling the FWER at `alpha` for a balanced `K`-arm
/// comparison with a shared control.
pub fn fwer_critical_value(k: usize, alpha: f64) -> Result<CriticalValue> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    check_alpha(alpha)?;
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if equicorrelated_max_cdf(k, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalValue {
        value: 0.5 * (lo + hi),
        method: CriticalMethod::AnalyticMvn,
        alpha,
        provenance: None,
    })
}

/// Total size of an equal-randomization trial with marginal power `1 − β`
/// against `δ^(1)`: `(K+1)·2σ²(C_α + z_β)²/δ²`, rounded up.
pub fn sample_size(k: usize, sigma: f64, delta1: f64, c_alpha: f64, beta: f64) -> Result<usize> {
    if !(delta1 > 0.0) {
        return Err(Error::InvalidConfig("delta1 must be positive".into()));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidConfig(format!("beta {beta} outside (0, 1)")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig("sigma must be positive".into()));
    }
    let z_beta = normal::quantile(1.0 - beta);
    let raw = sample_size_raw(k, sigma, delta1, c_alpha, z_beta);
    Ok((raw - 1e-9).ceil().max(1.0) as usize)
}

/// Unrounded trial size for a given `z_β`.
pub fn sample_size_raw(k: usize, sigma: f64, delta1: f64, c_alpha: f64, z_beta: f64) -> f64 {
    (k as f64 + 1.0) * 2.0 * sigma * sigma * (c_alpha + z_beta).powi(2) / (delta1 * delta1)
}

/// Nearest-rank quantile: the `⌈p·M⌉`-th order statistic (1-based).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let rank = ((p * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    sorted[rank - 1]
}

/// Fixed-width histogram with under- and overflow bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        let bins = ((hi - lo) / width).round() as usize;
        Self { lo, width, counts: vec![0; bins], underflow: 0, overflow: 0 }
    }

    /// Range `[-6, 6]` in steps of `0.2`.
    pub fn calibration() -> Self {
        Self::new(-6.0, 6.0, 0.2)
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.counts.len() as f64
    }

    pub fn add(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
            return;
        }
        let idx = ((x - self.lo) / self.width).floor() as usize;
        match self.counts.get_mut(idx) {
            Some(c) => *c += 1,
            None => self.overflow += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    /// `bin_left,bin_right,count`; the end bins use `-inf`/`inf` edges.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        let _ = writeln!(out, "-inf,{},{}", fmt_edge(self.lo), self.underflow);
        for (i, c) in self.counts.iter().enumerate() {
            let left = self.lo + i as f64 * self.width;
            let _ = writeln!(out, "{},{},{}", fmt_edge(left), fmt_edge(left + self.width), c);
        }
        let _ = writeln!(out, "{},inf,{}", fmt_edge(self.hi()), self.overflow);
        out
    }
}

fn fmt_edge(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

/// Result of a null-scenario calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub critical: CriticalValue,
    pub policy: String,
    pub k: usize,
    pub trial_size: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Mean and sample s.d. of `Z_max` (of `Z` when `K = 1`).
    pub z_mean: f64,
    pub z_sd: f64,
    pub histogram: Histogram,
}

/// JSON layout of a calibration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub policy: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub trial_size: usize,
    #[serde(rename = "M")]
    pub replicates: usize,
    pub alpha: f64,
    pub critical_value: f64,
    pub z_mean: f64,
    pub z_sd: f64,
    pub seed: u64,
}

impl Calibration {
    pub fn summary(&self) -> CalibrationSummary {
        CalibrationSummary {
            policy: self.policy.clone(),
            k: self.k,
            trial_size: self.trial_size,
            replicates: self.replicates,
            alpha: self.critical.alpha,
            critical_value: self.critical.value,
            z_mean: self.z_mean,
            z_sd: self.z_sd,
            seed: self.seed,
        }
    }
}

/// Mean and sample s.d. (divisor `n − 1`; zero for a single value).
pub(crate) fn mean_sd(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.into_iter().collect();
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Empirical critical value from `m` replicates under the global null: the
/// nearest-rank `(1 − α)` percentile of `Z_max`.
pub fn calibrate_critical_value(
    null_scenario: &TrialScenario,
    table: Option<&GittinsTable>,
    master_seed: u64,
    m: usize,
    alpha: f64,
) -> Result<Calibration> {
    check_alpha(alpha)?;
    if !null_scenario.is_global_null() {
        return Err(Error::NotGlobalNull { means: null_scenario.means.clone() });
    }
    if m < 100 {
        return Err(Error::InvalidConfig(format!("calibration needs at least 100 replicates, got {m}")));
    }
    let records = run_replicates(null_scenario, table, master_seed, m)?;
    Ok(calibration_from_records(null_scenario, &records, master_seed, alpha))
}

/// Calibration summary of already simulated null replicates.
pub fn calibration_from_records(
    scenario: &TrialScenario,
    records: &[TrialRecord],
    master_seed: u64,
    alpha: f64,
) -> Calibration {
    let mut zmax: Vec<f64> = records.iter().map(|r| r.z.zmax).collect();
    let (z_mean, z_sd) = mean_sd(zmax.iter().copied());
    let mut histogram = Histogram::calibration();
    for &z in &zmax {
        histogram.add(z);
    }
    zmax.sort_by(f64::total_cmp);
    let value = nearest_rank(&zmax, 1.0 - alpha);
    Calibration {
        critical: CriticalValue {
            value,
            method: CriticalMethod::EmpiricalPercentile,
            alpha,
            provenance: Some(Provenance {
                replicates: records.len(),
                master_seed,
                scenario: scenario.key(),
            }),
        },
        policy: scenario.policy.kind.to_string(),
        k: scenario.experimental_arms(),
        trial_size: scenario.trial_size,
        replicates: records.len(),
        seed: master_seed,
        z_mean,
        z_sd,
        histogram,
    }
}

/// One-sided decisions of a trial at critical value `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestDecision {
    /// `arm_reject[k-1]` is `Z_k > C`.
    pub arm_reject: Vec<bool>,
    /// `Z_max > C`.
    pub global_reject: bool,
}

pub fn apply_test(record: &TrialRecord, c: &CriticalValue) -> TestDecision {
    apply_test_z(&record.z, c.value)
}

pub fn apply_test_z(z: &ZVector, c: f64) -> TestDecision {
    TestDecision {
        arm_reject: z.z.iter().map(|&zk| zk > c).collect(),
        global_reject: z.zmax > c,
    }
}
