//! Gittins indices for the normal-reward bandit with known variance.
//!
//! For a posterior `N(x̄, σ²/n)` the index separates as
//! `ν(x̄, n; σ², d) = x̄ + σ·ν(0, n; 1, d)`, so only the standardized values
//! `ν(0, n; 1, d)` need to be tabulated. Each one is the reward `λ` of a known
//! arm that makes a decision maker indifferent between retiring to it
//! (worth `λ/(1-d)`) and sampling an unknown arm whose posterior is
//! `N(0, 1/n)`, with the continuation value obtained by backward induction.
//!
//! The induction runs on a uniform grid of standardized posterior means
//! `u = z·√n`, in which the posterior-mean increment after one more
//! observation from `(z, m)` has variance `n/(m(m+1))` and the total remaining
//! movement has unit variance. Between grid points the value function is
//! interpolated linearly and the Gaussian expectation of that interpolant is
//! taken exactly. Because the grid is uniform the resulting weights depend
//! only on the offset between grid points, so each step collapses to a
//! convolution stencil. (Gauss–Hermite rules converge slowly here because the
//! value function has a kink at the retirement boundary.)

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Numerical settings for the calibration dynamic program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Half-width of the standardized posterior-mean grid.
    pub state_bound: f64,
    pub grid_step: f64,
    /// Backward-induction truncation. `None` picks the smallest `N` with
    /// `d^N < 1e-8`.
    pub horizon: Option<usize>,
    pub bisection_tol: f64,
    pub lambda_bracket: (f64, f64),
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            state_bound: 8.0,
            grid_step: 0.02,
            horizon: None,
            bisection_tol: 1e-4,
            lambda_bracket: (0.0, 3.0),
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.state_bound > 0.0 && self.state_bound.is_finite()) {
            return bad("state_bound must be positive");
        }
        if !(self.grid_step > 0.0 && self.grid_step < self.state_bound) {
            return bad("grid_step must be positive and smaller than state_bound");
        }
        if self.horizon == Some(0) {
            return bad("horizon must be at least 1");
        }
        if !(self.bisection_tol > 0.0) {
            return bad("bisection_tol must be positive");
        }
        let (lo, hi) = self.lambda_bracket;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return bad("lambda_bracket must be an increasing finite pair");
        }
        Ok(())
    }

    /// Horizon actually used for a given discount factor.
    pub fn horizon_for(&self, discount: f64) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(discount))
    }
}

/// Smallest `N ≥ 1` with `d^N < 1e-8`.
pub fn default_horizon(discount: f64) -> usize {
    if discount <= 0.0 {
        return 1;
    }
    let mut n = ((1e-8f64).ln() / discount.ln()).floor().max(1.0) as usize;
    while discount.powi(n as i32) >= 1e-8 {
        n += 1;
    }
    n
}

/// Numerical settings a table was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpMeta {
    pub grid_step: f64,
    pub state_bound: f64,
    pub horizon: usize,
    pub bisection_tol: f64,
}

/// Tabulated `ν(0, n; 1, d)` for `n = 1..=n_max`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GittinsTable {
    discount: f64,
    values: Vec<f64>,
    meta: Option<DpMeta>,
}

impl GittinsTable {
    /// Wraps externally supplied values (index 0 holds `n = 1`) after
    /// checking the table invariants.
    pub fn from_values(discount: f64, values: Vec<f64>, meta: Option<DpMeta>) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidConfig(format!("discount {discount} outside [0, 1)")));
        }
        if values.is_empty() {
            return Err(Error::Empty("index table values"));
        }
        check_values(discount, &values)?;
        Ok(Self { discount, values, meta })
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn n_max(&self) -> usize {
        self.values.len()
    }

    /// Values ordered by `n`, starting at `n = 1`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> Option<&DpMeta> {
        self.meta.as_ref()
    }

    /// `ν(0, n; 1, d)`. No extrapolation beyond `n_max`.
    pub fn value(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.values.len() {
            return Err(Error::OutOfTableRange { n, n_max: self.values.len() });
        }
        Ok(self.values[n - 1])
    }

    /// Serializes to the `# discount=<d>` / `n,value` CSV layout.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# discount={}", self.discount);
        if let Some(m) = &self.meta {
            let _ = writeln!(
                out,
                "# dp grid_step={} state_bound={} horizon={} bisection_tol={}",
                m.grid_step, m.state_bound, m.horizon, m.bisection_tol
            );
        }
        out.push_str("n,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, format_significant(*v, 15));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn check_values(discount: f64, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::MalformedTable(format!("non-finite value at n={}", i + 1)));
    }
    if discount == 0.0 {
        if let Some(i) = values.iter().position(|v| v.abs() > 1e-12) {
            return Err(Error::MalformedTable(format!(
                "discount 0 requires zero values, found {} at n={}",
                values[i],
                i + 1
            )));
        }
        return Ok(());
    }
    if let Some(i) = values.iter().position(|&v| v <= 0.0) {
        return Err(Error::MalformedTable(format!(
            "value {} at n={} is not positive",
            values[i],
            i + 1
        )));
    }
    for (i, pair) in values.windows(2).enumerate() {
        if pair[1] >= pair[0] {
            return Err(Error::NonMonotoneTable { n: i + 1, prev: pair[0], next: pair[1] });
        }
    }
    Ok(())
}

/// Plain decimal with at least `digits` significant digits.
fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return format!("{:.*}", digits, 0.0);
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(1) as usize;
    format!("{v:.decimals$}")
}

/// Parses a table from CSV text and verifies its invariants.
pub fn parse_index_table(text: &str) -> Result<GittinsTable> {
    let mut discount = None;
    let mut header_seen = false;
    let mut values = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(d) = comment.trim().strip_prefix("discount=") {
                let d: f64 = d.trim().parse().map_err(|_| {
                    Error::MalformedTable(format!("line {}: bad discount `{d}`", lineno + 1))
                })?;
                discount = Some(d);
            }
            continue;
        }
        if !header_seen {
            if line.replace(' ', "") != "n,value" {
                return Err(Error::MalformedTable(format!(
                    "line {}: expected header `n,value`, found `{line}`",
                    lineno + 1
                )));
            }
            if discount.is_none() {
                return Err(Error::MalformedTable(
                    "missing `# discount=<d>` line before the header".into(),
                ));
            }
            header_seen = true;
            continue;
        }
        let mut fields = line.split(',');
        let (Some(n), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::MalformedTable(format!("line {}: expected 2 fields", lineno + 1)));
        };
        let n: usize = n.trim().parse().map_err(|_| {
            Error::MalformedTable(format!("line {}: bad n `{n}`", lineno + 1))
        })?;
        let v: f64 = v.trim().parse().map_err(|_| {
            Error::MalformedTable(format!("line {}: bad value `{v}`", lineno + 1))
        })?;
        if n != values.len() + 1 {
            return Err(Error::MalformedTable(format!(
                "line {}: expected n={}, found n={n}",
                lineno + 1,
                values.len() + 1
            )));
        }
        values.push(v);
    }
    let Some(discount) = discount else {
        return Err(Error::MalformedTable("missing `# discount=<d>` line".into()));
    };
    if values.is_empty() {
        return Err(Error::MalformedTable("no data rows".into()));
    }
    GittinsTable::from_values(discount, values, None)
}

/// Reads a table file written by [`GittinsTable::save`] or by hand.
pub fn load_index_table(path: impl AsRef<Path>) -> Result<GittinsTable> {
    let text = std::fs::read_to_string(path)?;
    parse_index_table(&text)
}

/// Index of an arm with posterior mean `mean` after `n` observations.
pub fn gittins_index(mean: f64, n: usize, sigma: f64, table: &GittinsTable) -> Result<f64> {
    Ok(mean + sigma * table.value(n)?)
}

/// Builds `ν(0, n; 1, d)` for `n = 1..=n_max` by calibration against a known
/// arm. Entries are independent and are computed in parallel when the
/// `parallel` feature is enabled.
pub fn compute_index_table(discount: f64, n_max: usize, cfg: &DpConfig) -> Result<GittinsTable> {
    validate_request(discount, n_max, cfg)?;
    let grid = Grid::new(cfg);
    let horizon = cfg.horizon_for(discount);

    #[cfg(feature = "parallel")]
    let values: Result<Vec<f64>> = {
        use rayon::prelude::*;
        (1..=n_max)
            .into_par_iter()
            .map(|n| solve_index(n, discount, horizon, &grid, cfg))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let values: Result<Vec<f64>> =
        (1..=n_max).map(|n| solve_index(n, discount, horizon, &grid, cfg)).collect();

    finish_table(discount, values?, cfg, horizon)
}

/// Single-threaded construction; identical output to [`compute_index_table`].
pub fn compute_index_table_sequential(
    discount: f64,
    n_max: usize,
    cfg: &DpConfig,
) -> Result<GittinsTable> {
    validate_request(discount, n_max, cfg)?;
    let grid = Grid::new(cfg);
    let horizon = cfg.horizon_for(discount);
    let values = (1..=n_max)
        .map(|n| solve_index(n, discount, horizon, &grid, cfg))
        .collect::<Result<Vec<_>>>()?;
    finish_table(discount, values, cfg, horizon)
}

fn validate_request(discount: f64, n_max: usize, cfg: &DpConfig) -> Result<()> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidConfig(format!("discount {discount} outside [0, 1)")));
    }
    if n_max == 0 {
        return Err(Error::InvalidConfig("n_max must be at least 1".into()));
    }
    Ok(())
}

fn finish_table(discount: f64, values: Vec<f64>, cfg: &DpConfig, horizon: usize) -> Result<GittinsTable> {
    if discount > 0.0 {
        for (i, pair) in values.windows(2).enumerate() {
            if pair[1] >= pair[0] {
                return Err(Error::NonMonotoneTable { n: i + 1, prev: pair[0], next: pair[1] });
            }
        }
    }
    let meta = DpMeta {
        grid_step: cfg.grid_step,
        state_bound: cfg.state_bound,
        horizon,
        bisection_tol: cfg.bisection_tol,
    };
    GittinsTable::from_values(discount, values, Some(meta))
}

/// Uniform grid on `[-B, B]` with an odd number of points so that `u = 0`
/// is a node.
struct Grid {
    step: f64,
    points: Vec<f64>,
    zero: usize,
}

impl Grid {
    fn new(cfg: &DpConfig) -> Self {
        let half = (cfg.state_bound / cfg.grid_step).round().max(1.0) as usize;
        let step = cfg.state_bound / half as f64;
        let points = (0..=2 * half).map(|i| (i as f64 - half as f64) * step).collect();
        Self { step, points, zero: half }
    }

    fn len(&self) -> usize {
        self.points.len()
    }
}

/// `(offset, weight)` taps with `Σ w·v[i+k] = E[V(u_i + sd·X)]` exactly when
/// `V` is the linear interpolant of `v`. Weight `k` is the expectation of the
/// hat function centred `k` steps away.
fn stencil(sd: f64, grid: &Grid) -> Vec<(isize, f64)> {
    let sigma = sd / grid.step;
    if sigma < 1e-12 {
        return vec![(0, 1.0)];
    }
    // Upper-tail mass and first moment of N(0, σ²) beyond `a ≥ 0`; both are
    // evaluated in the tail to avoid cancellation far from the centre.
    let tail = |a: f64| normal::cdf(-a / sigma);
    let tail_moment = |a: f64| sigma * normal::pdf(a / sigma);
    // ∫_a^b of (y − c)·φ_σ(y) dy for 0 ≤ a < b.
    let lin = |a: f64, b: f64, c: f64| {
        (tail_moment(a) - tail_moment(b)) - c * (tail(a) - tail(b))
    };
    let reach = (10.0 * sigma).ceil() as isize + 1;
    let mut half = Vec::with_capacity(reach as usize + 1);
    // k = 0: two half-hats, symmetric.
    half.push(2.0 * ((tail(0.0) - tail(1.0)) - lin(0.0, 1.0, 0.0)));
    for k in 1..=reach {
        let kf = k as f64;
        let rising = lin(kf - 1.0, kf, kf - 1.0);
        let falling = -lin(kf, kf + 1.0, kf + 1.0);
        half.push(rising + falling);
    }
    let total: f64 = half[0] + 2.0 * half[1..].iter().sum::<f64>();
    let mut taps = Vec::with_capacity(2 * half.len() - 1);
    for k in -reach..=reach {
        let w = half[k.unsigned_abs()] / total;
        if w > 0.0 {
            taps.push((k, w));
        }
    }
    taps
}

/// `out[i] = Σ w · v[clamp(i + k)]`; points past the grid take the boundary value.
fn convolve(v: &[f64], taps: &[(isize, f64)], out: &mut [f64]) {
    let g = v.len() as isize;
    out.iter_mut().for_each(|o| *o = 0.0);
    let first = v[0];
    let last = v[v.len() - 1];
    for &(k, w) in taps {
        let start = (-k).clamp(0, g) as usize;
        let end = (g - k).clamp(0, g) as usize;
        for o in &mut out[..start] {
            *o += w * first;
        }
        if start < end {
            let src = &v[(start as isize + k) as usize..(end as isize + k) as usize];
            for (o, s) in out[start..end].iter_mut().zip(src) {
                *o += w * s;
            }
        }
        for o in &mut out[end.max(start)..] {
            *o += w * last;
        }
    }
}

struct Calibration<'a> {
    discount: f64,
    grid: &'a Grid,
    rewards: Vec<f64>,
    stencils: Vec<Vec<(isize, f64)>>,
}

impl<'a> Calibration<'a> {
    fn new(n: usize, discount: f64, horizon: usize, grid: &'a Grid) -> Self {
        let root_n = (n as f64).sqrt();
        let rewards = grid.points.iter().map(|u| u / root_n).collect();
        let nf = n as f64;
        let stencils = (0..horizon)
            .map(|j| {
                let m = nf + j as f64;
                stencil((nf / (m * (m + 1.0))).sqrt(), grid)
            })
            .collect();
        Self { discount, grid, rewards, stencils }
    }

    /// Value of sampling once from `(0, n)` then acting optimally, minus the
    /// retirement value `λ/(1-d)`. Decreasing in `λ`.
    fn gap(&self, lambda: f64, v: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        let d = self.discount;
        let retire = lambda / (1.0 - d);
        let horizon = self.stencils.len();
        v.clear();
        v.extend(self.rewards.iter().map(|r| retire.max(r / (1.0 - d))));
        scratch.resize(v.len(), 0.0);
        for j in (1..horizon).rev() {
            convolve(v, &self.stencils[j], scratch);
            for ((vi, ev), r) in v.iter_mut().zip(scratch.iter()).zip(&self.rewards) {
                *vi = retire.max(r + d * ev);
            }
        }
        let zero = self.grid.zero as isize;
        let last = self.grid.len() as isize - 1;
        let ev0: f64 = self.stencils[0]
            .iter()
            .map(|&(k, w)| w * v[(zero + k).clamp(0, last) as usize])
            .sum();
        d * ev0 - retire
    }
}

fn solve_index(
    n: usize,
    discount: f64,
    horizon: usize,
    grid: &Grid,
    cfg: &DpConfig,
) -> Result<f64> {
    let cal = Calibration::new(n, discount, horizon, grid);
    let mut v = Vec::with_capacity(grid.len());
    let mut scratch = Vec::with_capacity(grid.len());
    let mut f = |lambda: f64| cal.gap(lambda, &mut v, &mut scratch);
    bisect(&mut f, cfg.lambda_bracket, cfg.bisection_tol)
}

/// Bisection to bracket width `tol`, finished with one secant step inside
/// the final bracket.
fn bisect(f: &mut impl FnMut(f64) -> f64, bracket: (f64, f64), tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let mut f_hi = f(hi);
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if (f_lo > 0.0) == (f_hi > 0.0) {
        return Err(Error::BracketDoesNotStraddle { lo, hi, f_lo, f_hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    let root = lo - f_lo * (hi - lo) / (f_hi - f_lo);
    Ok(root.clamp(lo, hi))
}
