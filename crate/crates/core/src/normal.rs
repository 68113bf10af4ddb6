//! Standard normal and chi-square distribution functions.
//!
//! `cdf` evaluates `0.5 * libm::erfc(-x / sqrt 2)` with the `libm` port of the
//! msun `erfc`, accurate to about one ulp. Working through `erfc` rather than
//! `1 - erf` keeps full accuracy in both tails. `quantile` evaluates
//! `-sqrt 2 * erfc_inv(2p)` with the `statrs` port of the Boost rational
//! approximation. The `statrs` `erfc` itself is only good to about 1e-11
//! absolute, which is why it is not used for the cdf.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Result};

pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("normal quantile needs 0 < p < 1, got {p}"));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

/// Two-sided critical value z_{1-alpha/2}.
pub fn two_sided_z(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    quantile(1.0 - alpha / 2.0)
}

/// Upper-tail probability of a chi-square with `df` degrees of freedom.
pub fn chi2_sf(stat: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return domain("chi-square needs df >= 1");
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| crate::error::PupError::Domain(e.to_string()))?;
    Ok(dist.sf(stat.max(0.0)).clamp(0.0, 1.0))
}
