use serde::{Deserialize, Serialize};

use super::{normal, replicate, substream};
use crate::error::{domain, Result};
use crate::inference::CsConvention;
use crate::normal::two_sided_z;
use crate::process::ErrorProcess;

/// What `e_t0` fixes in an MA(1) process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ma1Conditioning {
    /// The one-step error is `theta * e_t0` plus noise with the marginal
    /// variance, the reading under which the analytic table is reproduced.
    #[default]
    MeanShift,
    /// `e_t0` is the last innovation; the one-step error is
    /// `theta * e_t0 + v` with `v` the next innovation.
    Innovation,
}

/// Error process together with the values conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OracleCase {
    Ar1 { phi: f64, sigma_v2: f64, e_t0: f64 },
    Ma1 { theta: f64, sigma_v2: f64, e_t0: f64, conditioning: Ma1Conditioning },
    /// `e1 = theta1 * e2 + v1` given `e2` at the target period.
    CrossSection { theta1: f64, sigma_e1_2: f64, sigma00: f64, e2: f64, convention: CsConvention },
}

impl OracleCase {
    fn validate(&self) -> Result<()> {
        match *self {
            OracleCase::Ar1 { phi, sigma_v2, .. } => ErrorProcess::Ar1 { phi, sigma_v2 }.validate(),
            OracleCase::Ma1 { theta, sigma_v2, .. } => ErrorProcess::Ma1 { theta, sigma_v2 }.validate(),
            OracleCase::CrossSection { theta1, sigma_e1_2, sigma00, convention, .. } => {
                ErrorProcess::CrossSection { theta1, sigma_e1_2, sigma00 }.validate()?;
                if convention == CsConvention::Formula && !(sigma_e1_2 - theta1 * theta1 * sigma00 > 0.0) {
                    return domain("formula convention needs sigma_e1_2 > theta1^2 sigma00");
                }
                Ok(())
            }
        }
    }

    /// Conditional innovation variance of the cross-section case.
    fn cs_sigma_v2(theta1: f64, sigma_e1_2: f64, sigma00: f64) -> f64 {
        sigma_e1_2 - theta1 * theta1 * sigma00
    }
}

/// Interval centred on zero with the marginal spread, or on the
/// population conditional mean with the conditional spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Standard,
    Pup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub coverage: f64,
    /// Binomial standard error of `coverage`.
    pub se: f64,
    pub reps: usize,
}

/// Simulated conditional coverage of a prediction interval for the error
/// `h` periods after the conditioning date, using population parameters.
pub fn mc_coverage_oracle(
    case: &OracleCase,
    h: usize,
    interval: IntervalKind,
    reps: usize,
    alpha: f64,
    seed: u64,
    threads: Option<usize>,
) -> Result<OracleEstimate> {
    case.validate()?;
    if reps < 1000 {
        return domain(format!("coverage oracle needs at least 1000 replications, got {reps}"));
    }
    if h == 0 {
        return domain("horizon must be at least 1");
    }
    let z = two_sided_z(alpha)?;
    let (center, half) = interval_for(case, h, interval, z);
    let hits = replicate(reps, threads, |rep| {
        let mut rng = substream(seed, rep);
        let e = simulate_error(case, h, &mut || normal(&mut rng));
        Ok((e - center).abs() <= half)
    })?;
    let c = hits.iter().filter(|&&x| x).count() as f64 / reps as f64;
    Ok(OracleEstimate { coverage: c, se: (c * (1.0 - c) / reps as f64).sqrt(), reps })
}

fn interval_for(case: &OracleCase, h: usize, interval: IntervalKind, z: f64) -> (f64, f64) {
    match (*case, interval) {
        (OracleCase::Ar1 { phi, sigma_v2, .. }, IntervalKind::Standard) => (0.0, z * (sigma_v2 / (1.0 - phi * phi)).sqrt()),
        (OracleCase::Ar1 { phi, sigma_v2, e_t0 }, IntervalKind::Pup) => {
            let var: f64 = (0..h).map(|j| phi.powi(2 * j as i32)).sum::<f64>() * sigma_v2;
            (phi.powi(h as i32) * e_t0, z * var.sqrt())
        }
        (OracleCase::Ma1 { theta, sigma_v2, .. }, IntervalKind::Standard) => (0.0, z * (sigma_v2 * (1.0 + theta * theta)).sqrt()),
        (OracleCase::Ma1 { theta, sigma_v2, e_t0, conditioning }, IntervalKind::Pup) => {
            let sigma_e2 = sigma_v2 * (1.0 + theta * theta);
            match (h, conditioning) {
                (1, Ma1Conditioning::Innovation) => (theta * e_t0, z * sigma_v2.sqrt()),
                (1, Ma1Conditioning::MeanShift) => (theta * e_t0, z * sigma_e2.sqrt()),
                _ => (0.0, z * sigma_e2.sqrt()),
            }
        }
        (OracleCase::CrossSection { sigma_e1_2, .. }, IntervalKind::Standard) => (0.0, z * sigma_e1_2.sqrt()),
        (OracleCase::CrossSection { theta1, sigma_e1_2, sigma00, e2, convention }, IntervalKind::Pup) => {
            let var = match convention {
                CsConvention::Formula => OracleCase::cs_sigma_v2(theta1, sigma_e1_2, sigma00),
                CsConvention::Simplified => sigma_e1_2,
            };
            (theta1 * e2, z * var.sqrt())
        }
    }
}

/// Draws the target error by running the process forward from the
/// conditioning values.
fn simulate_error(case: &OracleCase, h: usize, draw: &mut impl FnMut() -> f64) -> f64 {
    match *case {
        OracleCase::Ar1 { phi, sigma_v2, e_t0 } => {
            let sd = sigma_v2.sqrt();
            let mut e = e_t0;
            for _ in 0..h {
                e = phi * e + sd * draw();
            }
            e
        }
        OracleCase::Ma1 { theta, sigma_v2, e_t0, conditioning } => {
            let sd = sigma_v2.sqrt();
            match conditioning {
                Ma1Conditioning::Innovation => {
                    let mut prev = e_t0;
                    let mut e = 0.0;
                    for _ in 0..h {
                        let v = sd * draw();
                        e = v + theta * prev;
                        prev = v;
                    }
                    e
                }
                Ma1Conditioning::MeanShift => {
                    let shift = if h == 1 { theta * e_t0 } else { 0.0 };
                    shift + (sigma_v2 * (1.0 + theta * theta)).sqrt() * draw()
                }
            }
        }
        OracleCase::CrossSection { theta1, sigma_e1_2, sigma00, e2, convention } => {
            let var = match convention {
                CsConvention::Formula => OracleCase::cs_sigma_v2(theta1, sigma_e1_2, sigma00),
                CsConvention::Simplified => sigma_e1_2,
            };
            theta1 * e2 + var.sqrt() * draw()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pup_interval_is_nominal_for_ar1() {
        let case = OracleCase::Ar1 { phi: 0.8, sigma_v2: 0.5, e_t0: -2.0 };
        let est = mc_coverage_oracle(&case, 2, IntervalKind::Pup, 20_000, 0.05, 5, Some(2)).unwrap();
        assert!((est.coverage - 0.95).abs() < 3.0 * est.se + 1e-12);
    }

    #[test]
    fn too_few_reps_rejected() {
        let case = OracleCase::Ar1 { phi: 0.8, sigma_v2: 0.5, e_t0: -2.0 };
        assert!(mc_coverage_oracle(&case, 1, IntervalKind::Standard, 999, 0.05, 5, None).is_err());
    }
}
