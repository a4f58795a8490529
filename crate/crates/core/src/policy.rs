//! Patient allocation rules.
//!
//! Every rule is a pure function of the arm states, the patient index and a
//! random stream. Deterministic and semi-randomized rules produce a score per
//! arm and allocate to the argmax (ties broken uniformly at random); the
//! randomized rules produce a probability vector that is sampled.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::arm::ArmState;
use crate::error::{Error, Result};
use crate::gittins::{gittins_index, GittinsTable};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    /// Fixed equal randomization.
    Fr,
    /// Thompson sampling with tempering exponent `t/(2T)`.
    Ts,
    /// Thompson sampling refreshed once per block.
    Tsb,
    /// Posterior mean plus an exponential perturbation.
    Rbi,
    /// Gittins index plus an exponential perturbation.
    Rgi,
    Ucb,
    /// UCB with the `3 ln ln t` correction.
    Klu,
    /// Current belief: highest posterior mean.
    Cb,
    Gi,
    /// Gittins index with a randomized control guard.
    Cg,
    /// UCB with a randomized control guard.
    Cuc,
    /// Tempered `P[μ_k > μ_0]` randomization with a control weight that
    /// tracks the largest experimental arm.
    Tp,
    /// [`PolicyKind::Tp`] refreshed once per block.
    Tpb,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 13] = [
        PolicyKind::Fr,
        PolicyKind::Ts,
        PolicyKind::Tsb,
        PolicyKind::Rbi,
        PolicyKind::Rgi,
        PolicyKind::Ucb,
        PolicyKind::Klu,
        PolicyKind::Cb,
        PolicyKind::Gi,
        PolicyKind::Cg,
        PolicyKind::Cuc,
        PolicyKind::Tp,
        PolicyKind::Tpb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Fr => "FR",
            PolicyKind::Ts => "TS",
            PolicyKind::Tsb => "TSB",
            PolicyKind::Rbi => "RBI",
            PolicyKind::Rgi => "RGI",
            PolicyKind::Ucb => "UCB",
            PolicyKind::Klu => "KLU",
            PolicyKind::Cb => "CB",
            PolicyKind::Gi => "GI",
            PolicyKind::Cg => "CG",
            PolicyKind::Cuc => "CUC",
            PolicyKind::Tp => "TP",
            PolicyKind::Tpb => "TPB",
        }
    }

    /// Rules that look up Gittins indices.
    pub fn needs_table(self) -> bool {
        matches!(self, PolicyKind::Gi | PolicyKind::Rgi | PolicyKind::Cg)
    }

    pub fn is_batched(self) -> bool {
        matches!(self, PolicyKind::Tsb | PolicyKind::Tpb)
    }

    /// Rules whose allocation is a probability vector.
    pub fn is_randomized(self) -> bool {
        matches!(
            self,
            PolicyKind::Fr | PolicyKind::Ts | PolicyKind::Tsb | PolicyKind::Tp | PolicyKind::Tpb
        )
    }

    pub fn is_guarded(self) -> bool {
        matches!(self, PolicyKind::Cg | PolicyKind::Cuc)
    }

    /// UCB and KLU allocate patient `t` to arm `t - 1` during start-up; every
    /// other rule visits the arms once each in a random order.
    pub fn deterministic_start(self) -> bool {
        matches!(self, PolicyKind::Ucb | PolicyKind::Klu)
    }

    fn unbatched(self) -> PolicyKind {
        match self {
            PolicyKind::Tsb => PolicyKind::Ts,
            PolicyKind::Tpb => PolicyKind::Tp,
            other => other,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy `{s}`")))
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(k: PolicyKind) -> String {
        k.name().to_string()
    }
}

/// A rule plus its tuning parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Discount factor of the Gittins table (GI, RGI, CG).
    pub discount: f64,
    /// Block size between probability refreshes (TSB, TPB); 1 otherwise.
    pub batch: usize,
    /// Posterior draws used to estimate "probability best" (TS, TSB).
    pub ts_draws: usize,
    /// Control guard probability for CG/CUC; `None` means `1/(K+1)`.
    pub control_guard_prob: Option<f64>,
}

pub const DEFAULT_DISCOUNT: f64 = 0.995;
pub const DEFAULT_BATCH: usize = 20;
pub const DEFAULT_TS_DRAWS: usize = 1000;

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            discount: DEFAULT_DISCOUNT,
            batch: if kind.is_batched() { DEFAULT_BATCH } else { 1 },
            ts_draws: DEFAULT_TS_DRAWS,
            control_guard_prob: None,
        }
    }

    pub fn with_discount(mut self, d: f64) -> Self {
        self.discount = d;
        self
    }

    pub fn with_batch(mut self, b: usize) -> Self {
        self.batch = b;
        self
    }

    pub fn with_ts_draws(mut self, draws: usize) -> Self {
        self.ts_draws = draws;
        self
    }

    pub fn with_guard_prob(mut self, p: f64) -> Self {
        self.control_guard_prob = Some(p);
        self
    }

    /// Guard probability for a trial with `k` experimental arms.
    pub fn guard_prob(&self, k: usize) -> f64 {
        self.control_guard_prob.unwrap_or(1.0 / (k as f64 + 1.0))
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        if self.ts_draws == 0 {
            return Err(Error::InvalidConfig("ts_draws must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig(format!("discount {} outside [0, 1)", self.discount)));
        }
        if let Some(p) = self.control_guard_prob {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidConfig(format!("guard probability {p} outside (0, 1)")));
            }
        }
        if matches!(self.kind, PolicyKind::Tp | PolicyKind::Tpb) && k < 2 {
            return Err(Error::UnsupportedPolicy {
                policy: self.kind.to_string(),
                reason: "requires at least two experimental arms".into(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidConfig("need at least one experimental arm".into()));
        }
        Ok(())
    }
}

/// Output of a rule for one decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    /// Allocate to the argmax.
    Scores(Vec<f64>),
    /// Allocate by sampling.
    Probabilities(Vec<f64>),
}

fn mean_of(arm: &ArmState, idx: usize) -> Result<f64> {
    arm.mean().ok_or(Error::UninitializedArm { arm: idx })
}

/// `x̄ + σ√(2 ln t / n)`.
pub fn ucb_score(arm: &ArmState, sigma: f64, t: usize) -> f64 {
    debug_assert!(arm.n >= 1);
    let mean = arm.sum / arm.n as f64;
    mean + sigma * (2.0 * (t as f64).ln() / arm.n as f64).sqrt()
}

/// `x̄ + σ√(2(ln t + 3 ln ln t) / n)`, with the radicand floored at zero for
/// the small `t` where `ln ln t < 0`.
pub fn klu_score(arm: &ArmState, sigma: f64, t: usize) -> f64 {
    debug_assert!(arm.n >= 1);
    let mean = arm.sum / arm.n as f64;
    let lt = (t as f64).ln();
    let radicand = (2.0 * (lt + 3.0 * lt.ln()) / arm.n as f64).max(0.0);
    mean + sigma * radicand.sqrt()
}

/// `base + ((K+1)/n)·Y` with `Y` exponential of mean `1/(K+1)`.
pub fn perturbed_score<R: Rng + ?Sized>(base: f64, n: usize, k: usize, rng: &mut R) -> f64 {
    let rate = k as f64 + 1.0;
    let y: f64 = Exp::new(rate).expect("positive rate").sample(rng);
    perturbed_score_with(base, n, k, y)
}

/// [`perturbed_score`] for a given draw `y`.
pub fn perturbed_score_with(base: f64, n: usize, k: usize, y: f64) -> f64 {
    base + (k as f64 + 1.0) / n as f64 * y
}

/// Thompson sampling probabilities.
///
/// `p_k` is the fraction of `draws` joint posterior samples in which arm `k`
/// is largest; the result is `p_k^c / Σ p_l^c` with `c = allocated/(2T)`.
pub fn ts_probabilities<R: Rng + ?Sized>(
    arms: &[ArmState],
    sigma: f64,
    allocated: usize,
    trial_size: usize,
    draws: usize,
    rng: &mut R,
) -> Vec<f64> {
    let c = allocated as f64 / (2.0 * trial_size as f64);
    let params: Vec<(f64, f64)> = arms
        .iter()
        .map(|a| (a.sum / a.n as f64, sigma / (a.n as f64).sqrt()))
        .collect();
    let mut wins = vec![0usize; arms.len()];
    for _ in 0..draws {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (k, &(m, s)) in params.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            let v = m + s * z;
            if v > best_val {
                best_val = v;
                best = k;
            }
        }
        wins[best] += 1;
    }
    let weights: Vec<f64> = wins.iter().map(|&w| (w as f64 / draws as f64).powf(c)).collect();
    normalize_or_uniform(weights)
}

fn normalize_or_uniform(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|x| *x = u);
    }
    w
}

/// Power with the odd extension to negative bases and `0^0 := 0`.
fn signed_pow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(e)
    }
}

/// Tempered control-matching allocation probabilities with `γ = 3(t/T)^1.75` and
/// `η = 0.25·t/T`, where `t` is the number of patients already allocated.
///
/// Experimental arm weights are `P[μ_k > μ_0]^γ` normalized over the
/// experimental arms; the control weight is `(1/K)·exp[(max_k n_k − n_0)^η]`.
pub fn tp_probabilities(
    arms: &[ArmState],
    sigma: f64,
    allocated: usize,
    trial_size: usize,
) -> Result<Vec<f64>> {
    let k = arms.len().saturating_sub(1);
    if k < 2 {
        return Err(Error::UnsupportedPolicy {
            policy: "TP".into(),
            reason: "requires at least two experimental arms".into(),
        });
    }
    let frac = allocated as f64 / trial_size as f64;
    let gamma = 3.0 * frac.powf(1.75);
    let eta = 0.25 * frac;
    let control = &arms[0];
    let mean0 = mean_of(control, 0)?;
    let mut log_w = Vec::with_capacity(k);
    for (i, arm) in arms.iter().enumerate().skip(1) {
        let se = sigma * (1.0 / arm.n as f64 + 1.0 / control.n as f64).sqrt();
        let z = (mean_of(arm, i)? - mean0) / se;
        log_w.push(gamma * normal::ln_cdf(z));
    }
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp_w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let exp_total: f64 = exp_w.iter().sum();

    let max_n = arms[1..].iter().map(|a| a.n).max().unwrap_or(0);
    let diff = max_n as f64 - control.n as f64;
    let control_w = (1.0 / k as f64) * signed_pow(diff, eta).exp();

    let mut w = Vec::with_capacity(k + 1);
    w.push(control_w);
    w.extend(exp_w.iter().map(|e| e / exp_total));
    Ok(normalize_or_uniform(w))
}

/// Index of the largest score; ties go to a uniformly chosen member of the
/// tied set using one draw from `rng`.
pub fn select_argmax<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == best)
        .map(|(i, _)| i)
        .collect();
    match tied.len() {
        0 => 0,
        1 => tied[0],
        len => tied[rng.random_range(0..len)],
    }
}

/// Samples an index from a probability vector with one uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Everything a rule may look at when allocating one patient.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub arms: &'a [ArmState],
    pub sigma: f64,
    /// 1-based index of the patient being allocated.
    pub patient: usize,
    pub trial_size: usize,
    pub table: Option<&'a GittinsTable>,
}

impl DecisionContext<'_> {
    fn allocated(&self) -> usize {
        self.patient - 1
    }

    fn k(&self) -> usize {
        self.arms.len() - 1
    }

    fn table(&self, kind: PolicyKind) -> Result<&GittinsTable> {
        self.table.ok_or_else(|| Error::TableMismatch {
            policy: kind.to_string(),
            reason: "no table supplied".into(),
        })
    }

    fn gittins(&self, kind: PolicyKind, idx: usize) -> Result<f64> {
        let arm = &self.arms[idx];
        gittins_index(mean_of(arm, idx)?, arm.n, self.sigma, self.table(kind)?)
    }
}

/// Scores or probabilities of `spec` for one decision. For CG and CUC this
/// is the inner rule over the experimental arms, with the control scored
/// `-∞`; the guard coin is applied by [`guarded_allocate`].
pub fn policy_scores<R: Rng + ?Sized>(
    spec: &PolicySpec,
    ctx: &DecisionContext<'_>,
    rng: &mut R,
) -> Result<Allocation> {
    if let Some(idx) = ctx.arms.iter().position(|a| a.n == 0) {
        return Err(Error::UninitializedArm { arm: idx });
    }
    let arms = ctx.arms;
    let k = ctx.k();
    let kind = spec.kind;
    let out = match kind {
        PolicyKind::Fr => Allocation::Probabilities(vec![1.0 / arms.len() as f64; arms.len()]),
        PolicyKind::Ts | PolicyKind::Tsb => Allocation::Probabilities(ts_probabilities(
            arms,
            ctx.sigma,
            ctx.allocated(),
            ctx.trial_size,
            spec.ts_draws,
            rng,
        )),
        PolicyKind::Tp | PolicyKind::Tpb => Allocation::Probabilities(tp_probabilities(
            arms,
            ctx.sigma,
            ctx.allocated(),
            ctx.trial_size,
        )?),
        PolicyKind::Cb => Allocation::Scores(
            arms.iter().enumerate().map(|(i, a)| mean_of(a, i)).collect::<Result<_>>()?,
        ),
        PolicyKind::Ucb => {
            Allocation::Scores(arms.iter().map(|a| ucb_score(a, ctx.sigma, ctx.patient)).collect())
        }
        PolicyKind::Klu => {
            Allocation::Scores(arms.iter().map(|a| klu_score(a, ctx.sigma, ctx.patient)).collect())
        }
        PolicyKind::Gi => {
            Allocation::Scores((0..arms.len()).map(|i| ctx.gittins(kind, i)).collect::<Result<_>>()?)
        }
        PolicyKind::Rgi => {
            let mut s = Vec::with_capacity(arms.len());
            for (i, a) in arms.iter().enumerate() {
                s.push(perturbed_score(ctx.gittins(kind, i)?, a.n, k, rng));
            }
            Allocation::Scores(s)
        }
        PolicyKind::Rbi => {
            let mut s = Vec::with_capacity(arms.len());
            for (i, a) in arms.iter().enumerate() {
                s.push(perturbed_score(mean_of(a, i)?, a.n, k, rng));
            }
            Allocation::Scores(s)
        }
        PolicyKind::Cg => {
            let mut s = vec![f64::NEG_INFINITY];
            for i in 1..arms.len() {
                s.push(ctx.gittins(kind, i)?);
            }
            Allocation::Scores(s)
        }
        PolicyKind::Cuc => {
            let mut s = vec![f64::NEG_INFINITY];
            s.extend(arms[1..].iter().map(|a| ucb_score(a, ctx.sigma, ctx.patient)));
            Allocation::Scores(s)
        }
    };
    Ok(out)
}

/// Resolves an allocation to an arm index.
pub fn choose<R: Rng + ?Sized>(alloc: &Allocation, rng: &mut R) -> usize {
    match alloc {
        Allocation::Scores(s) => select_argmax(s, rng),
        Allocation::Probabilities(p) => sample_index(p, rng),
    }
}

/// CG/CUC decision: with probability `guard_prob` the control, otherwise
/// the argmax of `inner` over the experimental arms.
pub fn guarded_allocate<R: Rng + ?Sized>(
    guard_prob: f64,
    inner: impl FnOnce(&mut R) -> Result<Vec<f64>>,
    rng: &mut R,
) -> Result<usize> {
    let coin: f64 = rng.random();
    if coin < guard_prob {
        return Ok(0);
    }
    let scores = inner(rng)?;
    Ok(1 + select_argmax(&scores[1..], rng))
}

/// Refreshes an inner probability vector only when the number of patients
/// already allocated is a multiple of the block size. Between refreshes the
/// cached vector is reused, so outcomes observed inside a block do not
/// influence allocation until the next refresh.
#[derive(Debug, Clone)]
pub struct BatchedWrapper {
    batch: usize,
    cached: Vec<f64>,
    refreshes: Vec<usize>,
}

impl BatchedWrapper {
    /// Starts from the uniform vector over `arms` arms.
    pub fn new(batch: usize, arms: usize) -> Self {
        Self { batch: batch.max(1), cached: vec![1.0 / arms as f64; arms], refreshes: Vec::new() }
    }

    pub fn needs_refresh(&self, allocated: usize) -> bool {
        allocated > 0 && allocated.is_multiple_of(self.batch)
    }

    /// Vector to use for the patient after `allocated` allocations.
    pub fn probabilities(
        &mut self,
        allocated: usize,
        refresh: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<&[f64]> {
        if self.needs_refresh(allocated) {
            self.cached = refresh()?;
            self.refreshes.push(allocated + 1);
        }
        Ok(&self.cached)
    }

    /// 1-based patient indices at which a refresh took effect.
    pub fn refresh_points(&self) -> &[usize] {
        &self.refreshes
    }
}

/// Per-trial allocation state: start-up order and batch cache.
#[derive(Debug, Clone)]
pub struct Allocator {
    spec: PolicySpec,
    startup: Vec<usize>,
    batched: Option<BatchedWrapper>,
}

impl Allocator {
    /// Draws the start-up order (one patient per arm) from `rng`.
    pub fn new<R: Rng + ?Sized>(spec: PolicySpec, arms: usize, rng: &mut R) -> Self {
        let mut startup: Vec<usize> = (0..arms).collect();
        if !spec.kind.deterministic_start() {
            startup.shuffle(rng);
        }
        let batched = spec.kind.is_batched().then(|| BatchedWrapper::new(spec.batch, arms));
        Self { spec, startup, batched }
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn startup_order(&self) -> &[usize] {
        &self.startup
    }

    pub fn batch_refreshes(&self) -> Option<&[usize]> {
        self.batched.as_ref().map(|b| b.refresh_points())
    }

    /// Arm for the patient described by `ctx`.
    pub fn next_arm<R: Rng + ?Sized>(&mut self, ctx: &DecisionContext<'_>, rng: &mut R) -> Result<usize> {
        let allocated = ctx.allocated();
        if allocated < self.startup.len() {
            return Ok(self.startup[allocated]);
        }
        let spec = &self.spec;
        if spec.kind.is_guarded() {
            let guard = spec.guard_prob(ctx.k());
            return guarded_allocate(
                guard,
                |r: &mut R| match policy_scores(spec, ctx, r)? {
                    Allocation::Scores(s) => Ok(s),
                    Allocation::Probabilities(_) => unreachable!("guarded rules score"),
                },
                rng,
            );
        }
        if let Some(wrapper) = self.batched.as_mut() {
            let inner = PolicySpec { kind: spec.kind.unbatched(), ..spec.clone() };
            let probs = wrapper.probabilities(allocated, || match policy_scores(&inner, ctx, rng)? {
                Allocation::Probabilities(p) => Ok(p),
                Allocation::Scores(_) => unreachable!("batched rules are randomized"),
            })?;
            let probs = probs.to_vec();
            return Ok(sample_index(&probs, rng));
        }
        let alloc = policy_scores(spec, ctx, rng)?;
        Ok(choose(&alloc, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ctx<'a>(arms: &'a [ArmState], patient: usize, table: Option<&'a GittinsTable>) -> DecisionContext<'a> {
        DecisionContext { arms, sigma: 1.0, patient, trial_size: 100, table }
    }

    #[test]
    fn names_parse_case_insensitively() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().to_lowercase().parse::<PolicyKind>().unwrap(), k);
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("XYZ".parse::<PolicyKind>().is_err());
        assert_eq!(String::from(PolicyKind::Tsb), "TSB");
    }

    #[test]
    fn ucb_hand_values() {
        let a = ArmState::with_mean(0.5, 4);
        assert!((ucb_score(&a, 1.0, 10) - 1.572_983_013).abs() < 1e-8);
        let b = ArmState::with_mean(-1.0, 1);
        assert!((ucb_score(&b, 2.0, 3) - 1.964_607_615).abs() < 1e-8);
        let c = ArmState::with_mean(0.0, 1_000_000_000);
        assert!(ucb_score(&c, 1.0, 10).abs() < 1e-4);
    }

    #[test]
    fn klu_hand_values() {
        let a = ArmState::with_mean(0.0, 1);
        assert!((klu_score(&a, 1.0, 10) - 3.099_897_556).abs() < 1e-8);
        let b = ArmState::with_mean(0.5, 4);
        assert!(klu_score(&b, 1.0, 10) >= ucb_score(&b, 1.0, 10));
        let c = ArmState::with_mean(1.0, 1_000_000_000);
        assert!((klu_score(&c, 1.0, 10) - 1.0).abs() < 1e-4);
        // ln ln 2 < 0 drives the radicand negative; floored to the mean.
        let d = ArmState::with_mean(0.3, 1);
        assert_eq!(klu_score(&d, 1.0, 2), 0.3);
    }

    #[test]
    fn exploration_bonus_decreases_in_n() {
        for n in 1..200 {
            let a = ArmState::with_mean(0.2, n);
            let b = ArmState::with_mean(0.2, n + 1);
            assert!(ucb_score(&b, 1.0, 50) < ucb_score(&a, 1.0, 50));
            assert!(klu_score(&b, 1.0, 50) < klu_score(&a, 1.0, 50));
        }
    }

    #[test]
    fn fr_is_uniform() {
        let arms = vec![ArmState::with_mean(0.0, 3); 4];
        let alloc = policy_scores(&PolicySpec::new(PolicyKind::Fr), &ctx(&arms, 10, None), &mut rng(1)).unwrap();
        assert_eq!(alloc, Allocation::Probabilities(vec![0.25; 4]));
    }

    #[test]
    fn cb_picks_highest_mean() {
        let arms = [ArmState::with_mean(0.1, 2), ArmState::with_mean(0.4, 2), ArmState::with_mean(0.2, 2)];
        let alloc = policy_scores(&PolicySpec::new(PolicyKind::Cb), &ctx(&arms, 10, None), &mut rng(1)).unwrap();
        assert_eq!(choose(&alloc, &mut rng(2)), 1);
    }

    #[test]
    fn uninitialized_arm_is_rejected() {
        let arms = [ArmState::with_mean(0.1, 2), ArmState::default()];
        let err = policy_scores(&PolicySpec::new(PolicyKind::Cb), &ctx(&arms, 10, None), &mut rng(1)).unwrap_err();
        assert!(matches!(err, Error::UninitializedArm { arm: 1 }));
    }

    #[test]
    fn gi_ties_are_broken_uniformly() {
        let table = GittinsTable::from_values(0.9, vec![0.5, 0.3, 0.2, 0.1], None).unwrap();
        let arms = vec![ArmState::with_mean(0.3, 2); 3];
        let spec = PolicySpec::new(PolicyKind::Gi).with_discount(0.9);
        let alloc = policy_scores(&spec, &ctx(&arms, 7, Some(&table)), &mut rng(0)).unwrap();
        let Allocation::Scores(s) = &alloc else { panic!() };
        assert!(s.iter().all(|&x| x == s[0]));
        let mut r = rng(5);
        let mut counts = [0usize; 3];
        let trials = 30_000;
        for _ in 0..trials {
            counts[choose(&alloc, &mut r)] += 1;
        }
        let se = (trials as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 / 3.0).abs() < 4.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn ts_uniform_at_zero_exponent() {
        let arms = [ArmState::with_mean(5.0, 100), ArmState::with_mean(-5.0, 100), ArmState::with_mean(0.0, 1)];
        let p = ts_probabilities(&arms, 1.0, 0, 100, 500, &mut rng(3));
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ts_symmetric_arms_are_near_uniform() {
        let arms = vec![ArmState::with_mean(0.2, 10); 4];
        let draws = 20_000;
        // allocated = 2T gives c = 1, so these are the raw win fractions
        let p = ts_probabilities(&arms, 1.0, 200, 100, draws, &mut rng(4));
        let se = (0.25 * 0.75 / draws as f64).sqrt();
        for x in p {
            assert!((x - 0.25).abs() < 3.0 * se, "{x}");
        }
    }

    #[test]
    fn ts_matches_closed_form_for_two_arms() {
        let arms = [ArmState::with_mean(1.0, 100), ArmState::with_mean(0.0, 100)];
        let draws = 10_000;
        let p = ts_probabilities(&arms, 1.0, 200, 100, draws, &mut rng(9));
        let exact = normal::cdf(1.0 / (2.0f64 / 100.0).sqrt());
        let se = (exact * (1.0 - exact) / draws as f64).sqrt().max(1.0 / draws as f64);
        assert!((p[0] - exact).abs() <= 3.0 * se, "{} vs {exact}", p[0]);
    }

    #[test]
    fn tp_uniform_at_start() {
        let arms = vec![ArmState::with_mean(0.0, 5); 4];
        let p = tp_probabilities(&arms, 1.0, 0, 100).unwrap();
        for x in &p {
            assert!((x - 0.25).abs() < 1e-15, "{p:?}");
        }
    }

    #[test]
    fn tp_hand_evaluation() {
        let arms = [
            ArmState::with_mean(0.0, 10),
            ArmState::with_mean(0.0, 12),
            ArmState::with_mean(0.0, 12),
            ArmState::with_mean(0.0, 12),
        ];
        let p = tp_probabilities(&arms, 1.0, 50, 100).unwrap();
        // equal means: experimental weights 1/3 each; control (1/3)e^{2^0.125}
        let control = (1.0 / 3.0) * 2f64.powf(0.125).exp();
        let total = control + 1.0;
        assert!((p[0] - control / total).abs() < 1e-12);
        for x in &p[1..] {
            assert!((x - (1.0 / 3.0) / total).abs() < 1e-12);
        }
    }

    #[test]
    fn tp_concentrates_on_dominant_arm() {
        let arms = [
            ArmState::with_mean(0.0, 50),
            ArmState::with_mean(0.0, 50),
            ArmState::with_mean(1.0, 50),
            ArmState::with_mean(-0.5, 50),
        ];
        // At t = T the exponent is 3: weights Φ(0)³, Φ(5)³, Φ(−2.5)³.
        let p = tp_probabilities(&arms, 1.0, 100, 100).unwrap();
        let exp_total: f64 = p[1..].iter().sum();
        let w = [0.125, normal::cdf(5.0).powi(3), normal::cdf(-2.5).powi(3)];
        let ws: f64 = w.iter().sum();
        for (x, wi) in p[1..].iter().zip(w) {
            assert!((x / exp_total - wi / ws).abs() < 1e-9, "{p:?}");
        }
        assert!(p[2] / exp_total > 0.88);
    }

    #[test]
    fn tp_needs_two_experimental_arms() {
        let arms = vec![ArmState::with_mean(0.0, 5); 2];
        assert!(matches!(tp_probabilities(&arms, 1.0, 3, 10), Err(Error::UnsupportedPolicy { .. })));
        assert!(PolicySpec::new(PolicyKind::Tp).validate(1).is_err());
    }

    #[test]
    fn perturbation_has_mean_one_over_n() {
        let mut r = rng(11);
        let (n, k) = (4, 3);
        let draws = 100_000;
        let samples: Vec<f64> = (0..draws).map(|_| perturbed_score(0.7, n, k, &mut r) - 0.7).collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * sd / (draws as f64).sqrt(), "{mean}");
        assert_eq!(perturbed_score_with(0.7, n, k, 0.0), 0.7);
        assert!((perturbed_score_with(0.7, 1_000_000_000, k, 0.3) - 0.7).abs() < 1e-8);
    }

    #[test]
    fn guard_fires_to_control() {
        let mut r = rng(1);
        let arm = guarded_allocate(0.999_999_999, |_| Ok(vec![f64::NEG_INFINITY, 1.2, 0.9, 1.5]), &mut r).unwrap();
        assert_eq!(arm, 0);
        let arm = guarded_allocate(1e-12, |_| Ok(vec![f64::NEG_INFINITY, 1.2, 0.9, 1.5]), &mut r).unwrap();
        assert_eq!(arm, 3);
    }

    #[test]
    fn guard_fraction_matches_probability() {
        let mut r = rng(21);
        let decisions = 100_000;
        let p = 0.25;
        let hits = (0..decisions)
            .filter(|_| guarded_allocate(p, |_| Ok(vec![f64::NEG_INFINITY, 0.0, 0.0, 0.0]), &mut r).unwrap() == 0)
            .count();
        let se = (p * (1.0 - p) / decisions as f64).sqrt();
        assert!((hits as f64 / decisions as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn batched_refresh_points() {
        let trial = 116;
        let mut w = BatchedWrapper::new(20, 2);
        for allocated in 2..trial {
            w.probabilities(allocated, || Ok(vec![0.5, 0.5])).unwrap();
        }
        // counting oracle: patient t refreshes iff t - 1 is a positive multiple of b
        let expected: Vec<usize> = (1..=trial).filter(|t| t - 1 > 0 && (t - 1) % 20 == 0).collect();
        assert_eq!(w.refresh_points(), expected.as_slice());
        assert_eq!(expected, vec![21, 41, 61, 81, 101]);
    }

    #[test]
    fn guard_default_is_one_over_k_plus_one() {
        assert_eq!(PolicySpec::new(PolicyKind::Cg).guard_prob(3), 0.25);
        assert_eq!(PolicySpec::new(PolicyKind::Cg).with_guard_prob(1.0 / 3.0).guard_prob(3), 1.0 / 3.0);
    }

    #[test]
    fn probability_vectors_are_normalized() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::default();
        let strategy = (prop::collection::vec((-3.0f64..3.0, 1usize..60), 3..6), 0usize..200, 0u64..1000);
        runner
            .run(&strategy, |(arms, allocated, seed)| {
                let arms: Vec<ArmState> = arms.into_iter().map(|(m, n)| ArmState::with_mean(m, n)).collect();
                let trial = 200;
                let ts = ts_probabilities(&arms, 1.0, allocated, trial, 200, &mut rng(seed));
                let tp = tp_probabilities(&arms, 1.0, allocated, trial).unwrap();
                for p in [ts, tp] {
                    prop_assert!(p.iter().all(|&x| x >= 0.0));
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                Ok(())
            })
            .unwrap();
    }
}
