//! Single-equation linear prediction with serially correlated errors.
//!
//! Covers least squares, iterated feasible GLS (Cochrane–Orcutt and
//! Prais–Winsten), Goldberger's best linear unbiased predictor, and the
//! practical corrections that add `rho_hat * e_hat[T0]` to a least-squares
//! prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, PupError, Result};
use crate::linalg;

/// Bound applied to sample autocorrelations before they enter a variance.
pub const RHO_CLAMP: f64 = 0.999;

/// Clamps an autocorrelation to `[-RHO_CLAMP, RHO_CLAMP]`.
pub fn clamp_rho(rho: f64) -> f64 {
    rho.clamp(-RHO_CLAMP, RHO_CLAMP)
}

/// Outcome vector and predictors over the estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl SeriesSample {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(PupError::DimensionMismatch { expected: y.len(), got: x.nrows() });
        }
        let k = x.ncols();
        if k == 0 {
            return domain("at least one predictor is required");
        }
        if y.len() <= k {
            return Err(PupError::InsufficientData { needed: k + 1, got: y.len() });
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(PupError::NonFinite);
        }
        Ok(Self { y, x })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Number of estimation periods.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_predictors(&self) -> usize {
        self.x.ncols()
    }
}

/// Least-squares fit with the residual summaries the corrections need.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Mean of squared residuals (no degrees-of-freedom correction).
    pub gamma0_hat: f64,
}

impl LinearFit {
    /// Sample autocorrelation of the residuals at lag `h`.
    pub fn rho_hat(&self, h: usize) -> Result<f64> {
        residual_autocorr(self.residuals.as_slice(), h)
    }

    pub fn last_residual(&self) -> f64 {
        self.residuals[self.residuals.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlsVariant {
    CochraneOrcutt,
    PraisWinsten,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlsOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub variant: GlsVariant,
}

impl Default for GlsOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, variant: GlsVariant::CochraneOrcutt }
    }
}

/// Feasible GLS fit under AR(1) errors.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsFit {
    pub beta_gls: DVector<f64>,
    pub phi: f64,
    pub residuals_gls: DVector<f64>,
    pub sigma_v2: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMethod {
    Standard,
    Plupd,
    Plupi,
    Blup,
}

/// How a correction extends to horizons beyond one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlupMode {
    /// Lag-h autocorrelation times the last residual.
    #[default]
    Direct,
    /// Lag-1 autocorrelation raised to the power h.
    Iterated,
}

/// A point prediction together with the correction that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub point: f64,
    /// Regression part of the prediction, before any correction.
    pub base_point: f64,
    pub correction: f64,
    pub method: PredictionMethod,
    pub horizon: usize,
    pub variance: f64,
}

impl PredictionBundle {
    fn assemble(base: f64, correction: f64, method: PredictionMethod, horizon: usize, variance: f64) -> Self {
        Self {
            point: base + correction,
            base_point: base,
            correction,
            method,
            horizon,
            variance: variance.max(0.0),
        }
    }
}

/// Covariance of a stationary AR(1) error over `size` periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToeplitzCov {
    pub sigma_e2: f64,
    pub phi: f64,
    pub size: usize,
}

impl ToeplitzCov {
    pub fn new(sigma_e2: f64, phi: f64, size: usize) -> Result<Self> {
        if !(sigma_e2 > 0.0) || !(phi.abs() < 1.0) || size == 0 {
            return domain("AR(1) covariance needs sigma_e2 > 0, |phi| < 1 and size >= 1");
        }
        Ok(Self { sigma_e2, phi, size })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.sigma_e2 * self.phi.powi(i.abs_diff(j) as i32)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| self.entry(i, j))
    }

    /// Covariances between the sample errors and the error `h` periods
    /// past the end of the sample.
    pub fn target_covariance(&self, h: usize) -> DVector<f64> {
        let n = self.size;
        DVector::from_fn(n, |t, _| self.sigma_e2 * self.phi.powi((n - 1 - t + h) as i32))
    }
}

pub fn ols_fit(sample: &SeriesSample) -> Result<LinearFit> {
    let beta = linalg::least_squares(sample.x(), sample.y())?;
    let residuals = sample.y() - sample.x() * &beta;
    let gamma0_hat = linalg::mean_square(residuals.as_slice());
    Ok(LinearFit { beta, residuals, gamma0_hat })
}

/// Lag-`h` sample autocorrelation of a residual series.
///
/// Only observed pairs enter: the numerator sums `e[t-h] e[t]` and the
/// denominator `e[t-h]^2` over `t = h+1..T0`. The ratio is not bounded by one.
pub fn residual_autocorr(residuals: &[f64], h: usize) -> Result<f64> {
    let n = residuals.len();
    if n < 2 || h >= n - 1 {
        return Err(PupError::HorizonTooLarge { h, len: n });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for t in h..n {
        num += residuals[t - h] * residuals[t];
        den += residuals[t - h] * residuals[t - h];
    }
    if den <= 0.0 || !den.is_finite() {
        return Err(PupError::ZeroDenominator);
    }
    Ok(num / den)
}

fn check_horizon(h: usize) -> Result<()> {
    if h == 0 {
        return domain("horizon must be at least 1");
    }
    Ok(())
}

fn regression_point(beta: &DVector<f64>, x_future: &DVector<f64>) -> Result<f64> {
    if x_future.len() != beta.len() {
        return Err(PupError::DimensionMismatch { expected: beta.len(), got: x_future.len() });
    }
    Ok(linalg::dot_in_order(x_future.iter(), beta.iter()))
}

pub fn predict_standard(fit: &LinearFit, x_future: &DVector<f64>, h: usize) -> Result<PredictionBundle> {
    check_horizon(h)?;
    let base = regression_point(&fit.beta, x_future)?;
    Ok(PredictionBundle::assemble(base, 0.0, PredictionMethod::Standard, h, fit.gamma0_hat))
}

/// Least-squares prediction plus an autocorrelation correction.
pub fn predict_plup(
    fit: &LinearFit,
    x_future: &DVector<f64>,
    h: usize,
    mode: PlupMode,
) -> Result<PredictionBundle> {
    check_horizon(h)?;
    let base = regression_point(&fit.beta, x_future)?;
    let e_last = fit.last_residual();
    let rho_h = fit.rho_hat(h)?;
    let bundle = match mode {
        PlupMode::Direct => {
            let variance = asymptotic_prediction_variance(
                fit.gamma0_hat,
                clamp_rho(rho_h),
                clamp_rho(rho_h),
                h,
                PredictionMethod::Plupd,
            )?;
            PredictionBundle::assemble(base, rho_h * e_last, PredictionMethod::Plupd, h, variance)
        }
        PlupMode::Iterated => {
            let rho_1 = fit.rho_hat(1)?;
            let variance = asymptotic_prediction_variance(
                fit.gamma0_hat,
                clamp_rho(rho_1),
                clamp_rho(rho_h),
                h,
                PredictionMethod::Plupi,
            )?;
            PredictionBundle::assemble(base, rho_1.powi(h as i32) * e_last, PredictionMethod::Plupi, h, variance)
        }
    };
    Ok(bundle)
}

/// Asymptotic mean squared prediction error of each predictor.
///
/// The iterated form is evaluated as `gamma0 * ((1 - rho_h^2) + (rho_h - rho_1^h)^2)`,
/// which equals `gamma0 * (1 + rho_1^{2h} - 2 rho_1^h rho_h)` and keeps the
/// direct/iterated ordering exact in floating point.
pub fn asymptotic_prediction_variance(
    gamma0: f64,
    rho1: f64,
    rho_h: f64,
    h: usize,
    method: PredictionMethod,
) -> Result<f64> {
    check_horizon(h)?;
    if !(gamma0 >= 0.0) || !gamma0.is_finite() {
        return domain(format!("gamma0 must be a finite non-negative variance, got {gamma0}"));
    }
    if !(rho1.abs() <= 1.0) || !(rho_h.abs() <= 1.0) {
        return domain(format!("correlations must lie in [-1, 1], got rho1={rho1}, rho_h={rho_h}"));
    }
    let direct = 1.0 - rho_h * rho_h;
    let v = match method {
        PredictionMethod::Standard => gamma0,
        PredictionMethod::Plupd => gamma0 * direct,
        PredictionMethod::Plupi => {
            let gap = rho_h - rho1.powi(h as i32);
            gamma0 * (direct + gap * gap)
        }
        PredictionMethod::Blup => gamma0 * (1.0 - rho1.powi(2 * h as i32)),
    };
    Ok(v)
}

fn is_perfect_fit(residuals: &DVector<f64>, y: &DVector<f64>) -> bool {
    let scale = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    residuals.iter().all(|e| e.abs() <= 1e-12 * scale)
}

fn ar1_coefficient(residuals: &DVector<f64>) -> Result<f64> {
    let phi = residual_autocorr(residuals.as_slice(), 1)?;
    if !(phi.abs() < 1.0) {
        return Err(PupError::NonstationaryResidual { phi });
    }
    Ok(phi)
}

fn quasi_difference(sample: &SeriesSample, phi: f64, variant: GlsVariant) -> (DMatrix<f64>, DVector<f64>) {
    let n = sample.len();
    let k = sample.n_predictors();
    let (x, y) = (sample.x(), sample.y());
    let offset = match variant {
        GlsVariant::CochraneOrcutt => 1,
        GlsVariant::PraisWinsten => 0,
    };
    let rows = n - offset;
    let mut xs = DMatrix::zeros(rows, k);
    let mut ys = DVector::zeros(rows);
    let first_scale = (1.0 - phi * phi).sqrt();
    for r in 0..rows {
        let t = r + offset;
        if t == 0 {
            ys[r] = first_scale * y[0];
            for c in 0..k {
                xs[(r, c)] = first_scale * x[(0, c)];
            }
        } else {
            ys[r] = y[t] - phi * y[t - 1];
            for c in 0..k {
                xs[(r, c)] = x[(t, c)] - phi * x[(t - 1, c)];
            }
        }
    }
    (xs, ys)
}

/// Iterated feasible GLS under AR(1) errors.
///
/// Non-convergence is reported through `converged = false`; an AR(1)
/// estimate on or outside the unit circle at any iteration is an error.
pub fn cochrane_orcutt_fit(sample: &SeriesSample, opts: GlsOptions) -> Result<GlsFit> {
    let n = sample.len();
    let k = sample.n_predictors();
    if n <= k + 1 {
        return Err(PupError::InsufficientData { needed: k + 2, got: n });
    }
    let ols = ols_fit(sample)?;
    if is_perfect_fit(&ols.residuals, sample.y()) {
        return Ok(GlsFit {
            beta_gls: ols.beta,
            phi: 0.0,
            residuals_gls: ols.residuals,
            sigma_v2: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut phi = ar1_coefficient(&ols.residuals)?;
    let mut beta = ols.beta;
    let mut residuals = ols.residuals;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let (xs, ys) = quasi_difference(sample, phi, opts.variant);
        beta = linalg::least_squares(&xs, &ys)?;
        residuals = sample.y() - sample.x() * &beta;
        let phi_new = if is_perfect_fit(&residuals, sample.y()) { 0.0 } else { ar1_coefficient(&residuals)? };
        let step = (phi_new - phi).abs();
        phi = phi_new;
        if step < opts.tol {
            converged = true;
            break;
        }
    }

    let innovations: Vec<f64> = (1..n).map(|t| residuals[t] - phi * residuals[t - 1]).collect();
    let sigma_v2 = linalg::mean_square(&innovations);
    Ok(GlsFit { beta_gls: beta, phi, residuals_gls: residuals, sigma_v2, iterations, converged })
}

/// Feasible BLUP under AR(1) errors: GLS prediction plus `phi^h e_GLS[T0]`.
pub fn blup_predict(gls: &GlsFit, x_future: &DVector<f64>, h: usize) -> Result<PredictionBundle> {
    check_horizon(h)?;
    let base = regression_point(&gls.beta_gls, x_future)?;
    let e_last = gls.residuals_gls[gls.residuals_gls.len() - 1];
    let correction = gls.phi.powi(h as i32) * e_last;
    let phi2 = gls.phi * gls.phi;
    let mut weight = 0.0;
    let mut term = 1.0;
    for _ in 0..h {
        weight += term;
        term *= phi2;
    }
    Ok(PredictionBundle::assemble(base, correction, PredictionMethod::Blup, h, gls.sigma_v2 * weight))
}

/// Goldberger's correction `omega' Omega^{-1} e` via a Cholesky solve.
pub fn goldberger_correction(
    omega: &DMatrix<f64>,
    omega_vec: &DVector<f64>,
    residuals: &DVector<f64>,
) -> Result<f64> {
    if omega_vec.len() != omega.nrows() {
        return Err(PupError::DimensionMismatch { expected: omega.nrows(), got: omega_vec.len() });
    }
    let z = linalg::spd_solve(omega, residuals)?;
    Ok(omega_vec.dot(&z))
}
