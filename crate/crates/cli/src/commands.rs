//! Subcommand implementations. Each `cmd_*` returns its results so it can be
//! driven from tests; the `write_*` helpers persist them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bandit_trials::gittins::{compute_index_table, DpConfig, GittinsTable};
use bandit_trials::inference::{calibration_from_records, fwer_critical_value, sample_size, sample_size_raw};
use bandit_trials::normal;
use bandit_trials::oc::bias_csv;
use bandit_trials::{
    aggregate, bias_trajectories, run_replicates, run_replicates_with, z_histogram, BiasTrajectory, Calibration,
    CriticalValue, Histogram, OperatingCharacteristics, PolicySpec, RecordOptions, TrialScenario,
};

use crate::config::{CriticalChoice, PolicyEntry, RunConfig};
use crate::tables::TableCache;

pub fn cmd_table(discount: f64, n_max: usize, dp: &DpConfig) -> Result<GittinsTable> {
    Ok(compute_index_table(discount, n_max, dp)?)
}

fn table_for(cache: &TableCache, spec: &PolicySpec, n_min: usize) -> Result<Option<std::sync::Arc<GittinsTable>>> {
    if spec.kind.needs_table() {
        Ok(Some(cache.get(spec.discount, n_min)?))
    } else {
        Ok(None)
    }
}

/// Calibrates the critical value of one design under its global null.
pub fn calibrate_scenario(
    null: &TrialScenario,
    cache: &TableCache,
    seed: u64,
    replicates: usize,
    alpha: f64,
) -> Result<Calibration> {
    if !null.is_global_null() {
        return Err(bandit_trials::Error::NotGlobalNull { means: null.means.clone() }.into());
    }
    if replicates < 100 {
        bail!("calibration needs at least 100 replicates, got {replicates}");
    }
    let table = table_for(cache, &null.policy, null.trial_size)?;
    let records = run_replicates(null, table.as_deref(), seed, replicates)?;
    Ok(calibration_from_records(null, &records, seed, alpha))
}

/// Calibrates every policy of `cfg` at the calibration trial size.
pub fn cmd_calibrate(cfg: &RunConfig, cache: &TableCache) -> Result<Vec<Calibration>> {
    cfg.policies
        .iter()
        .map(|entry| {
            calibrate_scenario(&cfg.null_scenario(entry)?, cache, cfg.seed, cfg.replicates, cfg.alpha)
                .with_context(|| format!("calibrating {}", entry.name))
        })
        .collect()
}

/// Output of one (policy, hypothesis) simulation.
#[derive(Debug, Clone)]
pub struct HypothesisResult {
    pub characteristics: OperatingCharacteristics,
    pub seed: u64,
    pub bias: Option<Vec<BiasTrajectory>>,
    pub histograms: Option<Vec<(String, Histogram)>>,
    /// `(replicate, trace CSV, summary CSV)` for the dumped replicates.
    pub traces: Vec<(usize, String, String)>,
}

#[derive(Debug, Clone)]
pub struct PolicyResult {
    pub policy: String,
    pub critical: CriticalValue,
    pub calibration: Option<Calibration>,
    pub hypotheses: Vec<HypothesisResult>,
}

fn critical_for(cfg: &RunConfig, entry: &PolicyEntry, cache: &TableCache) -> Result<(CriticalValue, Option<Calibration>)> {
    let k = cfg.arms() - 1;
    Ok(match entry.critical_value {
        CriticalChoice::Fixed(c) => (CriticalValue::fixed(c, cfg.alpha), None),
        CriticalChoice::Analytic => (fwer_critical_value(k, cfg.alpha)?, None),
        CriticalChoice::Calibrate => {
            let cal = calibrate_scenario(&cfg.null_scenario(entry)?, cache, cfg.seed, cfg.replicates, cfg.alpha)?;
            (cal.critical.clone(), Some(cal))
        }
    })
}

/// Simulates every policy under every hypothesis of `cfg`.
pub fn cmd_simulate(cfg: &RunConfig, cache: &TableCache) -> Result<Vec<PolicyResult>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.policies.len());
    for entry in &cfg.policies {
        let (critical, calibration) =
            critical_for(cfg, entry, cache).with_context(|| format!("critical value for {}", entry.name))?;
        let mut hypotheses = Vec::with_capacity(cfg.hypotheses.len());
        for (i, hyp) in cfg.hypotheses.iter().enumerate() {
            let scenario = cfg.scenario(entry, hyp);
            let seed = cfg.hypothesis_seed(i);
            let table = table_for(cache, &scenario.policy, scenario.trial_size)?;
            let opts = RecordOptions { keep_trajectory: cfg.bias };
            let records = run_replicates_with(&scenario, table.as_deref(), seed, cfg.replicates, opts)
                .with_context(|| format!("simulating {} under {}", entry.name, hyp.label))?;
            let characteristics = aggregate(&records, &scenario, &critical)?;
            let bias = if cfg.bias { Some(bias_trajectories(&records, &scenario)?) } else { None };
            let histograms = cfg.histograms.then(|| z_histogram(&records, &Histogram::calibration()));
            let traces = records
                .iter()
                .take(cfg.traces)
                .enumerate()
                .map(|(r, rec)| (r, rec.trace_csv(), rec.summary_csv()))
                .collect();
            hypotheses.push(HypothesisResult { characteristics, seed, bias, histograms, traces });
        }
        out.push(PolicyResult { policy: entry.name.to_string(), critical, calibration, hypotheses });
    }
    Ok(out)
}

/// Empirical critical value of one design at each trial size.
#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    spec: &PolicySpec,
    arms: usize,
    sigma: f64,
    sizes: &[usize],
    replicates: usize,
    seed: u64,
    alpha: f64,
    cache: &TableCache,
) -> Result<Vec<(usize, f64)>> {
    if sizes.is_empty() {
        bail!("at least one trial size is required");
    }
    if let Some(&largest) = sizes.iter().max() {
        table_for(cache, spec, largest)?;
    }
    sizes
        .iter()
        .map(|&t| {
            let null = TrialScenario::new(vec![0.0; arms], sigma, t, "null", spec.clone());
            let cal = calibrate_scenario(&null, cache, seed, replicates, alpha)
                .with_context(|| format!("calibrating {} at T={t}", spec.kind))?;
            Ok((t, cal.critical.value))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSizeReport {
    pub trial_size: usize,
    pub raw: f64,
    pub critical_value: f64,
    pub z_beta: f64,
    pub explanation: String,
}

pub fn cmd_samplesize(k: usize, sigma: f64, delta: f64, alpha: f64, beta: f64) -> Result<SampleSizeReport> {
    let c = fwer_critical_value(k, alpha)?;
    let trial_size = sample_size(k, sigma, delta, c.value, beta)?;
    let z_beta = normal::quantile(1.0 - beta);
    let raw = sample_size_raw(k, sigma, delta, c.value, z_beta);
    let explanation = format!(
        "K={k} experimental arms, sigma={sigma}, delta={delta}, alpha={alpha}, beta={beta}\n\
         FWER critical value C = {:.4} (max of {k} equicorrelated normals, rho = 1/2)\n\
         z_beta = {z_beta:.4}\n\
         T = (K+1) * 2 sigma^2 (C + z_beta)^2 / delta^2 = {raw:.3}, rounded up to {trial_size}\n\
         ({} patients per arm under equal allocation)",
        c.value,
        trial_size.div_ceil(k + 1),
    );
    Ok(SampleSizeReport { trial_size, raw, critical_value: c.value, z_beta, explanation })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Writes `calibration_<policy>.json` and `calibration_<policy>_hist.csv`.
pub fn write_calibration(out_dir: &Path, cal: &Calibration) -> Result<Vec<PathBuf>> {
    let json = out_dir.join(format!("calibration_{}.json", cal.policy));
    let hist = out_dir.join(format!("calibration_{}_hist.csv", cal.policy));
    write(&json, &(serde_json::to_string_pretty(&cal.summary())? + "\n"))?;
    write(&hist, &cal.histogram.to_csv())?;
    Ok(vec![json, hist])
}

/// Results table rows in policy order.
pub fn results_csv(results: &[PolicyResult]) -> String {
    let mut out = String::from(OperatingCharacteristics::CSV_HEADER);
    out.push('\n');
    for p in results {
        for h in &p.hypotheses {
            let _ = writeln!(out, "{}", h.characteristics.csv_row(h.seed));
        }
    }
    out
}

/// Writes the results table plus any calibration, bias, histogram and trace
/// files the run produced.
pub fn write_simulation(out_dir: &Path, name: &str, results: &[PolicyResult]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let path = out_dir.join(format!("{name}_results.csv"));
    write(&path, &results_csv(results))?;
    written.push(path);
    for p in results {
        if let Some(cal) = &p.calibration {
            written.extend(write_calibration(out_dir, cal)?);
        }
        for h in &p.hypotheses {
            let stem = format!("{name}_{}_{}", p.policy, h.characteristics.hypothesis);
            if let Some(bias) = &h.bias {
                let path = out_dir.join(format!("{stem}_bias.csv"));
                write(&path, &bias_csv(bias))?;
                written.push(path);
            }
            for (label, hist) in h.histograms.iter().flatten() {
                let path = out_dir.join(format!("{stem}_hist_{label}.csv"));
                write(&path, &hist.to_csv())?;
                written.push(path);
            }
            for (r, trace, summary) in &h.traces {
                let path = out_dir.join("traces").join(format!("{stem}_r{r}.csv"));
                write(&path, trace)?;
                written.push(path);
                let path = out_dir.join("traces").join(format!("{stem}_r{r}_summary.csv"));
                write(&path, summary)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("T,critical_value\n");
    for (t, c) in rows {
        let _ = writeln!(out, "{t},{c}");
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    write(path, contents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samplesize_explains_itself() {
        let r = cmd_samplesize(1, 1.0, 0.545, 0.05, 0.10).unwrap();
        assert_eq!(r.trial_size, 116);
        assert!(r.explanation.contains("rounded up to 116"));
    }

    #[test]
    fn sweep_needs_sizes() {
        let cache = TableCache::new(None, DpConfig::default());
        let spec = PolicySpec::new(bandit_trials::PolicyKind::Fr);
        assert!(cmd_sweep(&spec, 2, 1.0, &[], 200, 1, 0.05, &cache).is_err());
    }
}
