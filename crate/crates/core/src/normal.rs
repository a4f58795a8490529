//! Standard normal helpers shared by the index DP, the allocation rules and
//! the inference code.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, finite far into the lower tail where `Φ` itself underflows.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        cdf(x).ln()
    } else {
        // Mills ratio expansion: Φ(x) ≈ φ(x)/|x| · (1 - 1/x² + 3/x⁴)
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Standard normal quantile, `Φ⁻¹(p)`.
pub fn quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
