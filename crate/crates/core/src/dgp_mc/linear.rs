use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ar1_path, normal, substream, Conditioning, McConfig, McMethod, RepOutcome};
use crate::error::{domain, Result};
use crate::linalg;
use crate::linpred::{ols_fit, predict_plup, predict_standard, PlupMode, SeriesSample};
use crate::normal::two_sided_z;
use crate::process::ErrorProcess;

/// Regression `y_t = x_t' beta + e_t` with independent AR(1) regressors and
/// AR(1) or AR(2) errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDgp {
    pub errors: ErrorProcess,
    pub t0: usize,
    /// Periods simulated after `t0` for scoring predictions.
    pub n_future: usize,
    pub burn_in: usize,
    pub regressor_phi: f64,
    pub beta: Vec<f64>,
}

impl LinearDgp {
    /// Two regressors, unit coefficients, 200 estimation periods, 10 ahead.
    pub fn new(errors: ErrorProcess) -> Self {
        Self { errors, t0: 200, n_future: 10, burn_in: 500, regressor_phi: 0.5, beta: vec![1.0, 1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.errors, ErrorProcess::Ar1 { .. } | ErrorProcess::Ar2 { .. }) {
            return domain("linear design supports AR(1) and AR(2) errors");
        }
        self.errors.validate()?;
        if !(self.regressor_phi.abs() < 1.0) {
            return domain(format!("regressor AR coefficient {} is not stationary", self.regressor_phi));
        }
        if self.beta.is_empty() || self.t0 <= self.beta.len() + 2 || self.n_future == 0 {
            return domain("linear design needs t0 > K + 2 and at least one future period");
        }
        Ok(())
    }

    /// Innovation variance giving each regressor marginal variance `gamma0`,
    /// so that with unit coefficients the population R^2 is `K / (K + 1)`.
    pub fn regressor_innovation_var(&self) -> f64 {
        self.errors.gamma0() * (1.0 - self.regressor_phi * self.regressor_phi)
    }

    fn ar_coefficients(&self) -> (f64, f64, f64) {
        match self.errors {
            ErrorProcess::Ar1 { phi, sigma_v2 } => (phi, 0.0, sigma_v2),
            ErrorProcess::Ar2 { phi1, phi2, sigma_v2 } => (phi1, phi2, sigma_v2),
            _ => unreachable!("validated"),
        }
    }

    /// `E[e_{t0+h} | e_{t0}, e_{t0-1}]` and the matching error variance.
    pub fn conditional_moments(&self, e_last: f64, e_prev: f64, h: usize) -> (f64, f64) {
        let (p1, p2, s2) = self.ar_coefficients();
        let (mut cur, mut prev) = (e_last, e_prev);
        for _ in 0..h {
            let next = p1 * cur + p2 * prev;
            prev = cur;
            cur = next;
        }
        let mut psi = vec![1.0, p1];
        for j in 2..h {
            psi.push(p1 * psi[j - 1] + p2 * psi[j - 2]);
        }
        let var = s2 * psi.iter().take(h).map(|v| v * v).sum::<f64>();
        (cur, var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDraw {
    pub sample: SeriesSample,
    /// Regressors for periods `t0+1..t0+n_future`, one row per period.
    pub x_future: DMatrix<f64>,
    pub y_future: DVector<f64>,
    /// Errors for periods `1..t0+n_future`.
    pub errors: Vec<f64>,
}

/// One draw of the design from the first stream of `seed`.
pub fn simulate_linear_dgp(dgp: &LinearDgp, seed: u64, conditioning: Conditioning) -> Result<LinearDraw> {
    dgp.validate()?;
    draw(dgp, conditioning, &mut substream(seed, 0))
}

pub(crate) fn draw(dgp: &LinearDgp, conditioning: Conditioning, rng: &mut ChaCha8Rng) -> Result<LinearDraw> {
    let k = dgp.beta.len();
    let n = dgp.t0 + dgp.n_future;
    let innov = dgp.regressor_innovation_var();
    let xs: Vec<Vec<f64>> = (0..k).map(|_| ar1_path(rng, dgp.regressor_phi, innov, dgp.burn_in, n)).collect();

    let (p1, p2, s2) = dgp.ar_coefficients();
    let sd = s2.sqrt();
    let fixed = match conditioning {
        Conditioning::None => None,
        Conditioning::FixPreErrors { prev, last } => Some((prev, last)),
        other => return domain(format!("conditioning {other:?} does not apply to a linear design")),
    };
    let (mut e1, mut e2) = (0.0, 0.0);
    let mut errors = Vec::with_capacity(n);
    for t in 0..dgp.burn_in + n {
        let mut e = p1 * e1 + p2 * e2 + sd * normal(rng);
        if let Some((prev, last)) = fixed {
            if t + 2 == dgp.burn_in + dgp.t0 {
                e = prev;
            } else if t + 1 == dgp.burn_in + dgp.t0 {
                e = last;
            }
        }
        e2 = e1;
        e1 = e;
        if t >= dgp.burn_in {
            errors.push(e);
        }
    }

    let x = DMatrix::from_fn(n, k, |t, c| xs[c][t]);
    let y = DVector::from_fn(n, |t, _| linalg::dot_in_order(x.row(t).iter(), dgp.beta.iter()) + errors[t]);
    let sample = SeriesSample::new(y.rows(0, dgp.t0).into_owned(), x.rows(0, dgp.t0).into_owned())?;
    Ok(LinearDraw {
        sample,
        x_future: x.rows(dgp.t0, dgp.n_future).into_owned(),
        y_future: y.rows(dgp.t0, dgp.n_future).into_owned(),
        errors,
    })
}

pub(crate) fn replication(dgp: &LinearDgp, config: &McConfig, rep: u64) -> Result<RepOutcome> {
    let mut rng = substream(config.seed, rep);
    let d = draw(dgp, config.conditioning, &mut rng)?;
    let fit = ols_fit(&d.sample)?;
    let z = two_sided_z(config.alpha)?;
    let t0 = dgp.t0;
    let (e_last, e_prev) = (d.errors[t0 - 1], d.errors[t0 - 2]);
    let gamma0 = dgp.errors.gamma0();

    let mut errors = Vec::with_capacity(config.methods.len());
    let mut covered = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let mut em = Vec::with_capacity(config.horizons.len());
        let mut cm = Vec::with_capacity(config.horizons.len());
        for &h in &config.horizons {
            let x_f = d.x_future.row(h - 1).transpose();
            let truth = linalg::dot_in_order(x_f.iter(), dgp.beta.iter());
            let (point, var) = match method {
                McMethod::Best => {
                    let (m, v) = dgp.conditional_moments(e_last, e_prev, h);
                    (truth + m, v)
                }
                McMethod::Noadj => (truth, gamma0),
                McMethod::Ols => {
                    let b = predict_standard(&fit, &x_f, h)?;
                    (b.point, b.variance)
                }
                McMethod::Plupi | McMethod::Plupd => {
                    let mode = if matches!(method, McMethod::Plupi) { PlupMode::Iterated } else { PlupMode::Direct };
                    let b = predict_plup(&fit, &x_f, h, mode)?;
                    (b.point, b.variance)
                }
                other => return domain(format!("method '{}' does not apply to a linear design", other.name())),
            };
            let err = d.y_future[h - 1] - point;
            em.push(err);
            cm.push(err.abs() <= z * var.sqrt());
        }
        errors.push(em);
        covered.push(cm);
    }
    Ok(RepOutcome { errors, covered })
}
