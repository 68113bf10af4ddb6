use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ar1_path, normal, substream, Conditioning, McConfig, McMethod, RepOutcome, SHARED_STREAM};
use crate::error::{domain, Result};
use crate::normal::two_sided_z;
use crate::panel_impute::{factor_fit_controls, impute_pup, CorrectionSpec, PanelDataset};

/// Idiosyncratic dependence of the factor design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FactorVariant {
    /// Treated unit's error is AR(1) with coefficient `phi1`; others are white noise.
    Ts { phi1: f64 },
    /// Treated unit's error is `theta * e_2 + v_1`; all errors serially independent.
    Cs { theta: f64 },
}

/// Panel `Y_it(0) = lambda_i' F_t + e_it` with AR(1) factors and Gaussian
/// loadings; treated units receive a constant effect after `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDgp {
    pub variant: FactorVariant,
    pub n: usize,
    pub n_treated: usize,
    pub t: usize,
    pub t0: usize,
    /// `(AR coefficient, innovation variance)` for each factor.
    pub factors: Vec<(f64, f64)>,
    pub sigma_v2: f64,
    pub delta: f64,
    pub burn_in: usize,
}

impl FactorDgp {
    /// 20 units, one treated, 50 periods of which 40 untreated, two factors.
    pub fn new(variant: FactorVariant) -> Self {
        Self {
            variant,
            n: 20,
            n_treated: 1,
            t: 50,
            t0: 40,
            factors: vec![(0.8, 0.5), (0.5, 0.3)],
            sigma_v2: 0.25,
            delta: 0.1,
            burn_in: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_treated == 0 || self.n_treated + 2 > self.n {
            return domain("factor design needs one or more treated units and at least two controls");
        }
        if self.t0 == 0 || self.t0 >= self.t {
            return domain(format!("need 1 <= t0 < {}, got {}", self.t, self.t0));
        }
        if self.factors.is_empty() {
            return domain("factor design needs at least one factor");
        }
        for &(phi, var) in &self.factors {
            if !(phi.abs() < 1.0) || !(var > 0.0) {
                return domain(format!("factor law (AR {phi}, variance {var}) is not stationary"));
            }
        }
        if !(self.sigma_v2 > 0.0) {
            return domain("sigma_v2 must be positive");
        }
        match self.variant {
            FactorVariant::Ts { phi1 } if !(phi1.abs() < 1.0) => domain(format!("AR coefficient {phi1} is not stationary")),
            FactorVariant::Cs { theta } if !theta.is_finite() => domain("theta must be finite"),
            _ => Ok(()),
        }
    }

    pub fn t1(&self) -> usize {
        self.t - self.t0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDraw {
    pub panel: PanelDataset,
    /// Untreated outcomes for every cell.
    pub y0: DMatrix<f64>,
    /// Effect on the treated units after `t0`, per post period.
    pub delta: Vec<f64>,
    pub f: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

/// One draw of the design from the first stream of `seed`.
pub fn simulate_factor_dgp(dgp: &FactorDgp, seed: u64, conditioning: Conditioning) -> Result<FactorDraw> {
    dgp.validate()?;
    let shared = shared_path(dgp, seed, conditioning);
    draw(dgp, conditioning, shared.as_deref(), &mut substream(seed, 0))
}

/// The second unit's post-period errors, drawn once per run.
fn shared_path(dgp: &FactorDgp, seed: u64, conditioning: Conditioning) -> Option<Vec<f64>> {
    if !matches!(conditioning, Conditioning::FixControlPostPath) {
        return None;
    }
    let mut rng = substream(seed, SHARED_STREAM);
    let sd = dgp.sigma_v2.sqrt();
    Some((0..dgp.t1()).map(|_| sd * normal(&mut rng)).collect())
}

fn draw(dgp: &FactorDgp, conditioning: Conditioning, shared: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Result<FactorDraw> {
    let (n, t, t0) = (dgp.n, dgp.t, dgp.t0);
    let r = dgp.factors.len();
    let paths: Vec<Vec<f64>> = dgp.factors.iter().map(|&(phi, var)| ar1_path(rng, phi, var, dgp.burn_in, t)).collect();
    let f = DMatrix::from_fn(t, r, |s, k| paths[k][s]);
    let mut lambda = DMatrix::zeros(n, r);
    for i in 0..n {
        for k in 0..r {
            lambda[(i, k)] = normal(rng);
        }
    }

    let sd = dgp.sigma_v2.sqrt();
    let mut e = DMatrix::zeros(n, t);
    match dgp.variant {
        FactorVariant::Ts { phi1 } => {
            let fixed = match conditioning {
                Conditioning::None => None,
                Conditioning::FixTreatedLast { value } => Some(value),
                other => return domain(format!("conditioning {other:?} does not apply to this design")),
            };
            for i in 0..n {
                if i < dgp.n_treated {
                    let mut x = 0.0;
                    for s in 0..dgp.burn_in + t {
                        x = phi1 * x + sd * normal(rng);
                        if s + 1 == dgp.burn_in + t0 {
                            x = fixed.unwrap_or(x);
                        }
                        if s >= dgp.burn_in {
                            e[(i, s - dgp.burn_in)] = x;
                        }
                    }
                } else {
                    for s in 0..t {
                        e[(i, s)] = sd * normal(rng);
                    }
                }
            }
        }
        FactorVariant::Cs { theta } => {
            if !matches!(conditioning, Conditioning::None | Conditioning::FixControlPostPath) {
                return domain(format!("conditioning {conditioning:?} does not apply to this design"));
            }
            let mut v = DMatrix::zeros(n, t);
            for i in 0..n {
                for s in 0..t {
                    v[(i, s)] = sd * normal(rng);
                }
            }
            let link = dgp.n_treated;
            if let Some(path) = shared {
                for (s, &x) in path.iter().enumerate() {
                    v[(link, t0 + s)] = x;
                }
            }
            for i in 0..n {
                for s in 0..t {
                    e[(i, s)] = if i < dgp.n_treated { theta * v[(link, s)] + v[(i, s)] } else { v[(i, s)] };
                }
            }
        }
    }

    let y0 = &lambda * f.transpose() + &e;
    let mut y = y0.clone();
    for i in 0..dgp.n_treated {
        for s in t0..t {
            y[(i, s)] += dgp.delta;
        }
    }
    Ok(FactorDraw {
        panel: PanelDataset::new(y, dgp.n_treated, t0)?,
        y0,
        delta: vec![dgp.delta; dgp.t1()],
        f,
        lambda,
        e,
    })
}

pub(crate) fn replication(dgp: &FactorDgp, config: &McConfig, rep: u64) -> Result<RepOutcome> {
    let shared = shared_path(dgp, config.seed, config.conditioning);
    let d = draw(dgp, config.conditioning, shared.as_deref(), &mut substream(config.seed, rep))?;
    let fit = factor_fit_controls(&d.panel, dgp.factors.len())?;
    let z = two_sided_z(config.alpha)?;
    let mut errors = Vec::with_capacity(config.methods.len());
    let mut covered = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let spec = match method {
            McMethod::Pca => CorrectionSpec::default(),
            McMethod::Pup(spec) => *spec,
            other => return domain(format!("method '{}' does not apply to a factor design", other.name())),
        };
        let mut em = Vec::with_capacity(config.horizons.len());
        let mut cm = Vec::with_capacity(config.horizons.len());
        for &h in &config.horizons {
            let res = impute_pup(&fit, 0, h, &spec)?;
            // equals delta_hat - delta
            let err = d.y0[(0, dgp.t0 + h - 1)] - res.y0_hat;
            em.push(err);
            cm.push(err.abs() <= z * res.variance.sqrt());
        }
        errors.push(em);
        covered.push(cm);
    }
    Ok(RepOutcome { errors, covered })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effect_path_and_conditioning() {
        let dgp = FactorDgp::new(FactorVariant::Ts { phi1: 0.6 });
        let d = simulate_factor_dgp(&dgp, 3, Conditioning::FixTreatedLast { value: 1.0 }).unwrap();
        assert_eq!(d.e[(0, 39)], 1.0);
        for s in 40..50 {
            assert!((d.panel.outcomes()[(0, s)] - d.y0[(0, s)] - 0.1).abs() < 1e-12);
        }
        assert_eq!(d.panel.outcomes()[(1, 45)], d.y0[(1, 45)]);
    }

    #[test]
    fn shared_path_is_common_to_draws() {
        let dgp = FactorDgp::new(FactorVariant::Cs { theta: 0.5 });
        let a = simulate_factor_dgp(&dgp, 9, Conditioning::FixControlPostPath).unwrap();
        let shared = shared_path(&dgp, 9, Conditioning::FixControlPostPath).unwrap();
        let b = draw(&dgp, Conditioning::FixControlPostPath, Some(&shared), &mut substream(9, 5)).unwrap();
        for s in 40..50 {
            assert_eq!(a.e[(1, s)], b.e[(1, s)]);
        }
        assert_ne!(a.e[(1, 10)], b.e[(1, 10)]);
    }
}
