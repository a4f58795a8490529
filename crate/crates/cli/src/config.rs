//! JSON run configuration and the bundled presets.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bandit_trials::policy::{DEFAULT_BATCH, DEFAULT_DISCOUNT, DEFAULT_TS_DRAWS};
use bandit_trials::{PolicyKind, PolicySpec, TrialScenario};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// Presets shipped with the binary: name and JSON document.
pub const PRESETS: [(&str, &str); 3] = [
    ("two_arm", include_str!("../presets/two_arm.json")),
    ("four_arm", include_str!("../presets/four_arm.json")),
    ("rare", include_str!("../presets/rare.json")),
];

/// Where a policy's critical value comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalChoice {
    /// Empirical percentile of `Z_max` under the global null.
    Calibrate,
    /// Equicorrelated-normal FWER value.
    Analytic,
    Fixed(f64),
}

impl Serialize for CriticalChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CriticalChoice::Calibrate => s.serialize_str("calibrate"),
            CriticalChoice::Analytic => s.serialize_str("analytic"),
            CriticalChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for CriticalChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = CriticalChoice;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str(r#""calibrate", "analytic" or a number"#)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<CriticalChoice, E> {
                match v.to_ascii_lowercase().as_str() {
                    "calibrate" => Ok(CriticalChoice::Calibrate),
                    "analytic" => Ok(CriticalChoice::Analytic),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<CriticalChoice, E> {
                Ok(CriticalChoice::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<CriticalChoice, E> {
                Ok(CriticalChoice::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<CriticalChoice, E> {
                Ok(CriticalChoice::Fixed(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

fn calibrate() -> CriticalChoice {
    CriticalChoice::Calibrate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub name: PolicyKind,
    #[serde(default = "calibrate")]
    pub critical_value: CriticalChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_prob: Option<f64>,
}

impl PolicyEntry {
    pub fn new(name: PolicyKind, critical_value: CriticalChoice) -> Self {
        Self { name, critical_value, discount: None, batch: None, ts_draws: None, guard_prob: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub label: String,
    pub means: Vec<f64>,
}

fn one() -> f64 {
    1.0
}
fn default_replicates() -> usize {
    10_000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_discount() -> f64 {
    DEFAULT_DISCOUNT
}
fn default_batch() -> usize {
    DEFAULT_BATCH
}
fn default_ts_draws() -> usize {
    DEFAULT_TS_DRAWS
}

/// One run: a set of policies simulated under a set of hypotheses.
///
/// Calibration uses `seed`; hypothesis `i` (0-based) uses `seed + 1 + i`, so
/// every policy sees the same outcome noise for a given hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default = "one")]
    pub sigma: f64,
    pub trial_size: usize,
    /// Trial size used for calibration, when critical values are reused
    /// from a larger design. Defaults to `trial_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_trial_size: Option<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_ts_draws")]
    pub ts_draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_prob: Option<f64>,
    pub hypotheses: Vec<Hypothesis>,
    pub policies: Vec<PolicyEntry>,
    /// Write per-arm bias trajectories for every policy and hypothesis.
    #[serde(default)]
    pub bias: bool,
    /// Write the `Z` histograms of every simulated hypothesis.
    #[serde(default)]
    pub histograms: bool,
    /// Number of replicates per (policy, hypothesis) to dump as traces.
    #[serde(default)]
    pub traces: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).context("malformed run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::from_json(text),
            None => {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                bail!("unknown preset {name:?}; available: {}", names.join(", "))
            }
        }
    }

    pub fn arms(&self) -> usize {
        self.hypotheses.first().map_or(0, |h| h.means.len())
    }

    pub fn calibration_size(&self) -> usize {
        self.calibration_trial_size.unwrap_or(self.trial_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        if self.hypotheses.is_empty() {
            bail!("at least one hypothesis is required");
        }
        if self.policies.is_empty() {
            bail!("at least one policy is required");
        }
        let arms = self.arms();
        if arms < 2 {
            bail!("hypotheses need a control and at least one experimental arm");
        }
        if let Some(h) = self.hypotheses.iter().find(|h| h.means.len() != arms) {
            bail!("hypothesis {:?} has {} arms, expected {arms}", h.label, h.means.len());
        }
        for size in [self.trial_size, self.calibration_size()] {
            if size < arms {
                bail!("trial size {size} is smaller than the number of arms {arms}");
            }
        }
        for entry in &self.policies {
            self.policy_spec(entry).validate(arms - 1).with_context(|| format!("policy {}", entry.name))?;
            if entry.critical_value == CriticalChoice::Calibrate && self.replicates < 100 {
                bail!("calibration needs at least 100 replicates");
            }
        }
        Ok(())
    }

    /// Effective allocation parameters of one policy entry.
    pub fn policy_spec(&self, entry: &PolicyEntry) -> PolicySpec {
        let kind = entry.name;
        let mut spec = PolicySpec::new(kind)
            .with_discount(entry.discount.unwrap_or(self.discount))
            .with_ts_draws(entry.ts_draws.unwrap_or(self.ts_draws));
        if kind.is_batched() {
            spec = spec.with_batch(entry.batch.unwrap_or(self.batch));
        }
        if let Some(p) = entry.guard_prob.or(self.guard_prob).filter(|_| kind.is_guarded()) {
            spec = spec.with_guard_prob(p);
        }
        spec
    }

    pub fn scenario(&self, entry: &PolicyEntry, hypothesis: &Hypothesis) -> TrialScenario {
        TrialScenario::new(
            hypothesis.means.clone(),
            self.sigma,
            self.trial_size,
            hypothesis.label.clone(),
            self.policy_spec(entry),
        )
    }

    /// Calibration scenario: the first global-null hypothesis, run at the
    /// calibration trial size. Configurations without one are refused.
    pub fn null_scenario(&self, entry: &PolicyEntry) -> Result<TrialScenario> {
        let null = self.hypotheses.iter().find(|h| h.means.iter().all(|&m| m == h.means[0]));
        let Some(h) = null else {
            let means = self.hypotheses.first().map(|h| h.means.clone()).unwrap_or_default();
            return Err(bandit_trials::Error::NotGlobalNull { means }.into());
        };
        Ok(TrialScenario::new(h.means.clone(), self.sigma, self.calibration_size(), "null", self.policy_spec(entry)))
    }

    pub fn hypothesis_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(1 + index as u64)
    }

    /// Keeps only the named policies, in the order given.
    pub fn select_policies(&mut self, names: &[PolicyKind]) -> Result<()> {
        if names.is_empty() {
            return Ok(());
        }
        let mut kept = Vec::with_capacity(names.len());
        for name in names {
            match self.policies.iter().find(|p| p.name == *name) {
                Some(p) => kept.push(p.clone()),
                None => kept.push(PolicyEntry::new(*name, CriticalChoice::Calibrate)),
            }
        }
        self.policies = kept;
        Ok(())
    }
}
