use serde::{Deserialize, Serialize};

use super::{ErrorModel, ImputationResult};
use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EffectTarget {
    Pointwise { h: usize },
    /// Mean effect over horizons `1..=t1`.
    TimeAverage { t1: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub unit: usize,
    pub target: EffectTarget,
    pub estimate: f64,
    pub variance: f64,
}

/// Pointwise or time-averaged treatment effect from per-horizon imputations
/// of a single unit.
pub fn treatment_effect(results: &[ImputationResult], target: EffectTarget) -> Result<EffectEstimate> {
    let Some(first) = results.first() else {
        return domain("no imputations supplied");
    };
    let unit = first.unit;
    if results.iter().any(|r| r.unit != unit) {
        return domain("imputations mix several units");
    }
    let at = |h: usize| results.iter().find(|r| r.horizon == h);
    match target {
        EffectTarget::Pointwise { h } => {
            let r = at(h).ok_or_else(|| crate::error::PupError::Domain(format!("no imputation for horizon {h}")))?;
            Ok(EffectEstimate { unit, target, estimate: r.delta_hat, variance: r.variance })
        }
        EffectTarget::TimeAverage { t1 } => {
            if t1 == 0 {
                return domain("time average needs at least one horizon");
            }
            let mut ordered = Vec::with_capacity(t1);
            for h in 1..=t1 {
                match at(h) {
                    Some(r) => ordered.push(r),
                    None => return domain(format!("incomplete horizons: {h} of 1..={t1} missing")),
                }
            }
            let n = t1 as f64;
            let estimate = ordered.iter().map(|r| r.delta_hat).sum::<f64>() / n;
            let mut total = 0.0;
            for a in &ordered {
                for b in &ordered {
                    total += error_cov(a, b, first.error_model);
                }
            }
            Ok(EffectEstimate { unit, target, estimate, variance: (total / (n * n)).max(0.0) })
        }
    }
}

fn error_cov(a: &ImputationResult, b: &ImputationResult, model: ErrorModel) -> f64 {
    let (h, k) = (a.horizon, b.horizon);
    match model {
        ErrorModel::Stationary { rho } => {
            if h == k {
                a.variance
            } else {
                (a.variance * b.variance).sqrt() * rho.powi(h.abs_diff(k) as i32)
            }
        }
        ErrorModel::Ar1Corrected { sigma_v2, phi } => {
            let gap = h.abs_diff(k) as i32;
            (0..h.min(k) as i32).map(|j| phi.powi(gap + 2 * j)).sum::<f64>() * sigma_v2
        }
    }
}
