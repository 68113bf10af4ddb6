//! Parametric descriptions of error dependence.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Error dependence used by the simulators and the coverage calculators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorProcess {
    Ar1 { phi: f64, sigma_v2: f64 },
    Ar2 { phi1: f64, phi2: f64, sigma_v2: f64 },
    Ma1 { theta: f64, sigma_v2: f64 },
    /// Treated error `e1 = theta1 * e2 + v1` with `var(e1) = sigma_e1_2`
    /// and `var(e2) = sigma00`.
    CrossSection { theta1: f64, sigma_e1_2: f64, sigma00: f64 },
}

impl ErrorProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorProcess::Ar1 { phi, sigma_v2 } => {
                if !(phi.abs() < 1.0) {
                    return domain(format!("AR(1) coefficient {phi} is not stationary"));
                }
                positive(sigma_v2, "sigma_v2")
            }
            ErrorProcess::Ar2 { phi1, phi2, sigma_v2 } => {
                // stationarity triangle
                if !(phi2.abs() < 1.0 && phi1 + phi2 < 1.0 && phi2 - phi1 < 1.0) {
                    return domain(format!("AR(2) coefficients ({phi1}, {phi2}) are not stationary"));
                }
                positive(sigma_v2, "sigma_v2")
            }
            ErrorProcess::Ma1 { theta, sigma_v2 } => {
                if !(theta.abs() <= 1.0) {
                    return domain(format!("MA(1) coefficient {theta} outside [-1, 1]"));
                }
                positive(sigma_v2, "sigma_v2")
            }
            ErrorProcess::CrossSection { theta1, sigma_e1_2, sigma00 } => {
                if !theta1.is_finite() {
                    return domain("theta1 must be finite");
                }
                positive(sigma_e1_2, "sigma_e1_2")?;
                positive(sigma00, "sigma00")
            }
        }
    }

    /// Marginal variance of the error.
    pub fn gamma0(&self) -> f64 {
        match *self {
            ErrorProcess::Ar1 { phi, sigma_v2 } => sigma_v2 / (1.0 - phi * phi),
            ErrorProcess::Ar2 { phi1, phi2, sigma_v2 } => {
                (1.0 - phi2) * sigma_v2 / ((1.0 + phi2) * ((1.0 - phi2).powi(2) - phi1 * phi1))
            }
            ErrorProcess::Ma1 { theta, sigma_v2 } => sigma_v2 * (1.0 + theta * theta),
            ErrorProcess::CrossSection { sigma_e1_2, .. } => sigma_e1_2,
        }
    }

    /// Autocorrelation at lag `k` (Yule–Walker recursion for the AR cases).
    pub fn autocorrelation(&self, k: usize) -> f64 {
        match *self {
            ErrorProcess::Ar1 { phi, .. } => phi.powi(k as i32),
            ErrorProcess::Ar2 { phi1, phi2, .. } => {
                let mut prev = 1.0;
                let mut cur = phi1 / (1.0 - phi2);
                if k == 0 {
                    return 1.0;
                }
                for _ in 1..k {
                    let next = phi1 * cur + phi2 * prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
            ErrorProcess::Ma1 { theta, .. } => match k {
                0 => 1.0,
                1 => theta / (1.0 + theta * theta),
                _ => 0.0,
            },
            ErrorProcess::CrossSection { .. } => {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be positive, got {v}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yule_walker_values() {
        let ar1 = ErrorProcess::Ar1 { phi: 0.8, sigma_v2: 0.05 };
        assert!((ar1.gamma0() - 0.138_888_888_888_888_9).abs() < 1e-15);
        let ar2 = ErrorProcess::Ar2 { phi1: 1.3, phi2: -0.4, sigma_v2: 0.05 };
        assert!((ar2.gamma0() - 0.432_098_765_432_099_5).abs() < 1e-12);
        assert!((ar2.autocorrelation(1) - 0.928_571_428_571_428_7).abs() < 1e-15);
        // rho_2 = phi1 rho_1 + phi2
        assert!((ar2.autocorrelation(2) - (1.3 * 1.3 / 1.4 - 0.4)).abs() < 1e-15);
    }

    #[test]
    fn stationarity_checks() {
        assert!(ErrorProcess::Ar1 { phi: 1.0, sigma_v2: 1.0 }.validate().is_err());
        assert!(ErrorProcess::Ar2 { phi1: 0.7, phi2: 0.4, sigma_v2: 1.0 }.validate().is_err());
        assert!(ErrorProcess::Ar2 { phi1: 1.3, phi2: -0.4, sigma_v2: 1.0 }.validate().is_ok());
        assert!(ErrorProcess::Ma1 { theta: 0.8, sigma_v2: 0.0 }.validate().is_err());
    }
}
