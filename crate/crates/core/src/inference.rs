//! Prediction intervals, conditional coverage of standard intervals, and an
//! LM test for residual dependence.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, PupError, Result};
use crate::linalg;
use crate::normal;
use crate::process::ErrorProcess;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub point: f64,
    pub sd: f64,
    pub alpha: f64,
}

impl IntervalSpec {
    pub fn width(&self) -> Result<f64> {
        Ok(2.0 * normal::two_sided_z(self.alpha)? * self.sd)
    }
}

/// `point -/+ z_{1-alpha/2} * sd`.
pub fn prediction_interval(spec: &IntervalSpec) -> Result<(f64, f64)> {
    if !(spec.sd >= 0.0) || !spec.sd.is_finite() {
        return domain(format!("interval sd must be finite and non-negative, got {}", spec.sd));
    }
    if !spec.point.is_finite() {
        return Err(PupError::NonFinite);
    }
    let half = normal::two_sided_z(spec.alpha)? * spec.sd;
    Ok((spec.point - half, spec.point + half))
}

/// Which standardization produced a coverage report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoverageConvention {
    /// AR(1): bias over the h-step conditional sd omega_h.
    #[serde(rename = "ar1-omega")]
    Ar1Omega,
    /// Bias over the marginal sd sigma_e, unit conditional spread.
    #[serde(rename = "simplified-sigma_e")]
    SimplifiedSigmaE,
    /// Cross-section display: bias over sigma_v with sigma_v^2 = sigma_e^2 - theta^2 sigma00.
    #[serde(rename = "formula")]
    Formula,
    /// Asymptotic coverage of a correctly centred corrected interval.
    #[serde(rename = "pup-asymptotic")]
    PupAsymptotic,
}

impl CoverageConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            CoverageConvention::Ar1Omega => "ar1-omega",
            CoverageConvention::SimplifiedSigmaE => "simplified-sigma_e",
            CoverageConvention::Formula => "formula",
            CoverageConvention::PupAsymptotic => "pup-asymptotic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub h: usize,
    pub coverage: f64,
    pub standardized_bias: f64,
    pub convention: CoverageConvention,
}

/// Conventions for the cross-section calculator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsConvention {
    #[default]
    Simplified,
    Formula,
}

/// `P(|X| <= z * scale)` for `X ~ N(bias, 1)`.
fn shifted_coverage(bias: f64, scale: f64, z: f64) -> f64 {
    let c = normal::cdf(-bias + z * scale) - normal::cdf(-bias - z * scale);
    c.clamp(0.0, 1.0)
}

fn check_horizon(h: usize) -> Result<()> {
    if h == 0 {
        return domain("horizon must be at least 1");
    }
    Ok(())
}

/// Conditional coverage of the standard interval when the error is AR(1)
/// and the last in-sample error is known.
///
/// `sigma_v2` is the innovation variance.
pub fn analytic_coverage_ar1(phi: f64, sigma_v2: f64, e_t0: f64, h: usize, alpha: f64) -> Result<CoverageReport> {
    check_horizon(h)?;
    ErrorProcess::Ar1 { phi, sigma_v2 }.validate()?;
    let z = normal::two_sided_z(alpha)?;
    let gamma0 = sigma_v2 / (1.0 - phi * phi);
    let phi_h = phi.powi(h as i32);
    let omega_h = (gamma0 * (1.0 - phi_h * phi_h)).sqrt();
    let bias = phi_h * e_t0 / omega_h;
    let scale = gamma0.sqrt() / omega_h;
    Ok(CoverageReport {
        h,
        coverage: shifted_coverage(bias, scale, z),
        standardized_bias: bias,
        convention: CoverageConvention::Ar1Omega,
    })
}

/// Conditional coverage of the standard interval under MA(1) errors.
///
/// At h = 1 the mean shift `theta * e_t0` is standardized by the marginal sd.
/// Beyond one period the error is independent of the conditioning value.
pub fn analytic_coverage_ma1(theta: f64, sigma_v2: f64, e_t0: f64, h: usize, alpha: f64) -> Result<CoverageReport> {
    check_horizon(h)?;
    ErrorProcess::Ma1 { theta, sigma_v2 }.validate()?;
    let z = normal::two_sided_z(alpha)?;
    let (coverage, bias) = if h == 1 {
        let sigma_e = (sigma_v2 * (1.0 + theta * theta)).sqrt();
        let b = theta * e_t0 / sigma_e;
        (shifted_coverage(b, 1.0, z), b)
    } else {
        (1.0 - alpha, 0.0)
    };
    Ok(CoverageReport { h, coverage, standardized_bias: bias, convention: CoverageConvention::SimplifiedSigmaE })
}

/// Conditional coverage per horizon when the treated error loads on one
/// control error whose post-treatment path `e2_path[h-1]` is held fixed.
pub fn analytic_coverage_cs(
    theta1: f64,
    sigma_e1_2: f64,
    sigma00: f64,
    e2_path: &[f64],
    alpha: f64,
    convention: CsConvention,
) -> Result<Vec<CoverageReport>> {
    ErrorProcess::CrossSection { theta1, sigma_e1_2, sigma00 }.validate()?;
    let z = normal::two_sided_z(alpha)?;
    let sigma_e = sigma_e1_2.sqrt();
    let (denom, scale, tag) = match convention {
        CsConvention::Simplified => (sigma_e, 1.0, CoverageConvention::SimplifiedSigmaE),
        CsConvention::Formula => {
            let sigma_v2 = sigma_e1_2 - theta1 * theta1 * sigma00;
            if !(sigma_v2 > 0.0) {
                return domain(format!("conditional variance {sigma_v2} is not positive"));
            }
            let sigma_v = sigma_v2.sqrt();
            (sigma_v, sigma_e / sigma_v, CoverageConvention::Formula)
        }
    };
    Ok(e2_path
        .iter()
        .enumerate()
        .map(|(i, &e2)| {
            let bias = theta1 * e2 / denom;
            CoverageReport { h: i + 1, coverage: shifted_coverage(bias, scale, z), standardized_bias: bias, convention: tag }
        })
        .collect())
}

/// Coverage of the corrected interval: nominal, with zero conditional bias.
pub fn analytic_coverage_pup(process: &ErrorProcess, h: usize, alpha: f64) -> Result<CoverageReport> {
    check_horizon(h)?;
    process.validate()?;
    normal::two_sided_z(alpha)?;
    Ok(CoverageReport { h, coverage: 1.0 - alpha, standardized_bias: 0.0, convention: CoverageConvention::PupAsymptotic })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTestReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_obs: usize,
    pub r_squared: f64,
    /// Labels of the dependence regressors, in design order.
    pub regressors: Vec<String>,
}

/// LM test of no dependence in unit `unit`'s residuals.
///
/// `residuals` holds one row per unit over the estimation window. The
/// auxiliary regression has an intercept, optional covariates (one row per
/// period), own lags `1..=p_own`, and for every other unit the terms
/// `e[j, t-s]` with `s = -p_cross..=p_cross` when `p_cross` is given. The
/// statistic is `n_obs * R^2`, referred to a chi-square with one degree of
/// freedom per dependence regressor.
pub fn lm_dependence_test(
    residuals: &DMatrix<f64>,
    covariates: Option<&DMatrix<f64>>,
    p_own: usize,
    p_cross: Option<usize>,
    unit: usize,
) -> Result<LmTestReport> {
    let (n_units, t_len) = residuals.shape();
    if unit >= n_units {
        return domain(format!("unit {unit} out of range for {n_units} units"));
    }
    if let Some(x) = covariates {
        if x.nrows() != t_len {
            return Err(PupError::DimensionMismatch { expected: t_len, got: x.nrows() });
        }
    }
    let cross_units: Vec<usize> = match p_cross {
        Some(_) => (0..n_units).filter(|&j| j != unit).collect(),
        None => Vec::new(),
    };
    let pc = p_cross.unwrap_or(0);
    let mut labels = Vec::new();
    for s in 1..=p_own {
        labels.push(format!("own:lag{s}"));
    }
    for &j in &cross_units {
        for s in -(pc as i64)..=(pc as i64) {
            labels.push(format!("unit{j}:lag{s}"));
        }
    }
    let q = labels.len();
    if q == 0 {
        return domain("no dependence regressors requested");
    }

    let lo = p_own.max(pc);
    let hi = t_len.saturating_sub(pc);
    let n_obs = hi.saturating_sub(lo);
    let k_x = covariates.map_or(0, |x| x.ncols());
    let n_reg = 1 + k_x + q;
    if n_obs <= n_reg + 5 {
        return Err(PupError::Overparameterized { regressors: n_reg, obs: n_obs });
    }

    let mut design = DMatrix::zeros(n_obs, n_reg);
    let mut target = DVector::zeros(n_obs);
    for (r, t) in (lo..hi).enumerate() {
        target[r] = residuals[(unit, t)];
        let mut c = 0;
        design[(r, c)] = 1.0;
        c += 1;
        if let Some(x) = covariates {
            for k in 0..k_x {
                design[(r, c)] = x[(t, k)];
                c += 1;
            }
        }
        for s in 1..=p_own {
            design[(r, c)] = residuals[(unit, t - s)];
            c += 1;
        }
        for &j in &cross_units {
            for s in -(pc as i64)..=(pc as i64) {
                design[(r, c)] = residuals[(j, (t as i64 - s) as usize)];
                c += 1;
            }
        }
    }

    let coef = linalg::least_squares(&design, &target)?;
    let fitted = &design * coef;
    let ybar = linalg::mean(target.as_slice());
    let sst: f64 = target.iter().map(|y| (y - ybar).powi(2)).sum();
    if !(sst > 0.0) {
        return domain("residual series has no variation");
    }
    let ssr: f64 = target.iter().zip(fitted.iter()).map(|(y, f)| (y - f).powi(2)).sum();
    let r_squared = (1.0 - ssr / sst).clamp(0.0, 1.0);
    let statistic = n_obs as f64 * r_squared;
    let p_value = normal::chi2_sf(statistic, q)?;
    Ok(LmTestReport { statistic, df: q, p_value, n_obs, r_squared, regressors: labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_interval() {
        let (lo, hi) = prediction_interval(&IntervalSpec { point: 0.0, sd: 1.0, alpha: 0.05 }).unwrap();
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-12);
        assert_eq!(lo, -hi);
        let (lo, hi) = prediction_interval(&IntervalSpec { point: 2.5, sd: 0.0, alpha: 0.05 }).unwrap();
        assert_eq!((lo, hi), (2.5, 2.5));
        assert!(prediction_interval(&IntervalSpec { point: 0.0, sd: -1.0, alpha: 0.05 }).is_err());
    }

    #[test]
    fn ar1_table_cells() {
        let r = analytic_coverage_ar1(0.8, 0.5, -2.0, 1, 0.05).unwrap();
        assert!((r.coverage - 0.84).abs() < 0.005 && (r.standardized_bias + 2.26).abs() < 0.005);
        let r = analytic_coverage_ar1(0.8, 0.5, -2.0, 3, 0.05).unwrap();
        assert!((r.coverage - 0.90).abs() < 0.005 && (r.standardized_bias + 1.01).abs() < 0.005);
        assert_eq!(r.convention.as_str(), "ar1-omega");
    }

    #[test]
    fn zero_dependence_gives_nominal_coverage() {
        for h in 1..6 {
            let r = analytic_coverage_ar1(0.0, 0.5, -2.0, h, 0.05).unwrap();
            assert!((r.coverage - 0.95).abs() < 1e-12);
            assert_eq!(r.standardized_bias, 0.0);
            let m = analytic_coverage_ma1(0.0, 0.5, -2.0, h, 0.05).unwrap();
            assert!((m.coverage - 0.95).abs() < 1e-12);
        }
        for r in analytic_coverage_cs(0.0, 0.5, 0.841, &[0.68, -0.83], 0.05, CsConvention::Simplified).unwrap() {
            assert!((r.coverage - 0.95).abs() < 1e-12);
            assert_eq!(r.standardized_bias, 0.0);
        }
    }

    #[test]
    fn ma1_memory_of_one_period() {
        let r = analytic_coverage_ma1(0.8, 0.5, -2.0, 1, 0.05).unwrap();
        assert!((r.coverage - 0.58).abs() < 0.01 && (r.standardized_bias + 1.77).abs() < 0.01);
        let r = analytic_coverage_ma1(0.8, 0.5, -2.0, 2, 0.05).unwrap();
        assert_eq!(r.coverage, 0.95);
        assert_eq!(r.standardized_bias, 0.0);
    }

    #[test]
    fn cs_formula_needs_positive_conditional_variance() {
        assert!(analytic_coverage_cs(1.0, 0.5, 0.841, &[0.1], 0.05, CsConvention::Formula).is_err());
        let r = analytic_coverage_cs(-0.7289, 0.5, 0.841, &[0.68], 0.05, CsConvention::Formula).unwrap();
        assert_eq!(r[0].convention, CoverageConvention::Formula);
        assert!(r[0].coverage >= 0.0 && r[0].coverage <= 1.0);
    }

    #[test]
    fn pup_coverage_is_nominal() {
        let r = analytic_coverage_pup(&ErrorProcess::Ar1 { phi: 0.8, sigma_v2: 0.5 }, 1, 0.05).unwrap();
        assert_eq!((r.coverage, r.standardized_bias), (0.95, 0.0));
    }

    #[test]
    fn lm_requires_dependence_regressors() {
        let e = DMatrix::from_fn(2, 40, |i, t| ((i * 7 + t * 13) % 11) as f64 - 5.0);
        assert!(matches!(lm_dependence_test(&e, None, 0, None, 0), Err(PupError::Domain(_))));
        assert!(matches!(lm_dependence_test(&e, None, 30, None, 0), Err(PupError::Overparameterized { .. })));
    }
}
