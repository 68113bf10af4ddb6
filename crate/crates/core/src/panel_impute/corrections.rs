use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_post_horizon, check_treated, impute_standard, FactorFit, ResidualPanel};
use crate::error::{domain, PupError, Result};
use crate::linalg;
use crate::linpred::{asymptotic_prediction_variance, clamp_rho, residual_autocorr, PlupMode, PredictionMethod};

/// Which residual dependence the imputation exploits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionMode {
    #[default]
    None,
    Ts,
    Cs,
    Both,
}

impl CorrectionMode {
    fn uses_ts(self) -> bool {
        matches!(self, CorrectionMode::Ts | CorrectionMode::Both)
    }

    fn uses_cs(self) -> bool {
        matches!(self, CorrectionMode::Cs | CorrectionMode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionMode::None => "none",
            CorrectionMode::Ts => "ts",
            CorrectionMode::Cs => "cs",
            CorrectionMode::Both => "both",
        }
    }
}

impl std::str::FromStr for CorrectionMode {
    type Err = PupError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CorrectionMode::None),
            "ts" => Ok(CorrectionMode::Ts),
            "cs" => Ok(CorrectionMode::Cs),
            "both" => Ok(CorrectionMode::Both),
            other => domain(format!("unknown correction mode '{other}'")),
        }
    }
}

/// Rule for choosing the control units used by the cross-section correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "lowercase")]
pub enum Selection {
    All,
    /// The `k` controls whose pre-period residuals are most correlated with
    /// the treated unit's, by absolute value.
    TopK(usize),
    /// Controls with absolute residual correlation at least this large.
    Threshold(f64),
}

impl Selection {
    /// All controls when they fit comfortably in the pre-period, otherwise
    /// the top `T0 / 10`.
    pub fn default_for(n_controls: usize, t0: usize) -> Self {
        if 2 * n_controls <= t0 {
            Selection::All
        } else {
            Selection::TopK((t0 / 10).max(1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionSpec {
    pub mode: CorrectionMode,
    /// Number of own-residual terms; 1 uses only the last pre-period residual.
    pub ar_order: usize,
    /// Leads and lags of each selected control, `-cs_lag..=cs_lag`.
    pub cs_lag: usize,
    /// `None` applies [`Selection::default_for`].
    pub selection: Option<Selection>,
    pub ts_mode: PlupMode,
}

impl Default for CorrectionSpec {
    fn default() -> Self {
        Self { mode: CorrectionMode::None, ar_order: 1, cs_lag: 0, selection: None, ts_mode: PlupMode::Direct }
    }
}

impl CorrectionSpec {
    pub fn ts() -> Self {
        Self { mode: CorrectionMode::Ts, ..Self::default() }
    }

    pub fn cs(selection: Selection) -> Self {
        Self { mode: CorrectionMode::Cs, selection: Some(selection), ..Self::default() }
    }

    fn resolved_selection(&self, res: &ResidualPanel) -> Selection {
        self.selection.unwrap_or_else(|| Selection::default_for(res.n_controls(), res.t0()))
    }
}

/// Dependence assumed between prediction errors at different horizons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorModel {
    /// Correlation `rho^|h - h'|` scaled by the pointwise standard deviations.
    Stationary { rho: f64 },
    /// Errors of an AR(1) prediction from a common origin:
    /// `sigma_v2 * sum_{j < min(h, h')} phi^{|h - h'| + 2j}`.
    Ar1Corrected { sigma_v2: f64, phi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub unit: usize,
    pub horizon: usize,
    /// Corrected imputation of the untreated outcome.
    pub y0_hat: f64,
    pub y0_standard: f64,
    pub correction: f64,
    pub observed: f64,
    /// Observed outcome minus `y0_hat`.
    pub delta_hat: f64,
    pub variance: f64,
    pub mode: CorrectionMode,
    pub error_model: ErrorModel,
}

/// Controls selected for a treated unit, as indices into the control block.
pub fn select_controls(res: &ResidualPanel, unit: usize, selection: Selection) -> Result<Vec<usize>> {
    check_treated(res.n_treated, unit)?;
    let n0 = res.n_controls();
    let t0 = res.t0();
    match selection {
        Selection::All => {
            if 2 * n0 > t0 {
                return Err(PupError::Overfit { selected: n0, obs: t0 });
            }
            Ok((0..n0).collect())
        }
        Selection::TopK(k) => {
            if k == 0 {
                return domain("top-k selection needs k >= 1");
            }
            let ranked = ranked_controls(res, unit);
            let mut chosen: Vec<usize> = ranked.into_iter().take(k.min(n0)).map(|(j, _)| j).collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
        Selection::Threshold(c) => {
            if !(0.0..=1.0).contains(&c) {
                return domain(format!("correlation threshold {c} outside [0, 1]"));
            }
            let mut chosen: Vec<usize> =
                ranked_controls(res, unit).into_iter().filter(|&(_, r)| r >= c).map(|(j, _)| j).collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

fn ranked_controls(res: &ResidualPanel, unit: usize) -> Vec<(usize, f64)> {
    let target = res.unit_pre(unit);
    let mut ranked: Vec<(usize, f64)> = (0..res.n_controls())
        .map(|j| (j, linalg::correlation(&target, &res.unit_pre(res.n_treated + j)).abs()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// A projection of the treated residual on own lags and control residuals.
struct Projection {
    coefficients: DVector<f64>,
    correction: f64,
    fitted_residuals: Vec<f64>,
    n_regressors: usize,
}

/// Controls entering a projection with leads and lags `-lag..=lag`.
struct CsTerms<'a> {
    res: &'a ResidualPanel,
    controls: &'a [usize],
    lag: usize,
}

/// Regresses `e_t` on `e_{t-h-s}` for `s < own_terms` and on `e_{j,t-s}`
/// for the given controls, over the pre-period rows where every regressor is
/// observed, then evaluates the fitted projection at `t0 + h`.
fn project(
    target: &[f64],
    h: usize,
    own_terms: usize,
    cs: Option<CsTerms<'_>>,
    guard_overfit: bool,
) -> Result<Projection> {
    let t0 = target.len();
    let cs = cs.filter(|c| !c.controls.is_empty());
    let p = cs.as_ref().map_or(0, |c| c.lag);

    let lo = if own_terms > 0 { h + own_terms - 1 } else { 0 }.max(p);
    let hi = t0.saturating_sub(p);
    let n_reg = own_terms + cs.as_ref().map_or(0, |c| c.controls.len() * (2 * p + 1));
    let n_obs = hi.saturating_sub(lo);
    if n_reg == 0 {
        return Ok(Projection {
            coefficients: DVector::zeros(0),
            correction: 0.0,
            fitted_residuals: target.to_vec(),
            n_regressors: 0,
        });
    }
    if guard_overfit && 2 * n_reg > n_obs {
        return Err(PupError::Overfit { selected: n_reg, obs: n_obs });
    }
    if n_obs <= n_reg {
        if cs.is_none() {
            return Err(PupError::HorizonTooLarge { h, len: t0 });
        }
        return Err(PupError::InsufficientData { needed: n_reg + 1, got: n_obs });
    }

    let mut x = DMatrix::zeros(n_obs, n_reg);
    let mut eval = DVector::zeros(n_reg);
    let y = DVector::from_iterator(n_obs, target[lo..hi].iter().copied());
    let mut col = 0;
    for s in 0..own_terms {
        for (r, t) in (lo..hi).enumerate() {
            x[(r, col)] = target[t - h - s];
        }
        eval[col] = target[t0 - 1 - s];
        col += 1;
    }
    if let Some(cs) = &cs {
        let pi = p as isize;
        for &j in cs.controls {
            let row = cs.res.n_treated + j;
            for s in -pi..=pi {
                for (r, t) in (lo..hi).enumerate() {
                    x[(r, col)] = cs.res.pre[(row, (t as isize - s) as usize)];
                }
                let at = (t0 - 1 + h) as isize - s;
                eval[col] = cs.res.value(row, at as usize).ok_or_else(|| {
                    PupError::Domain(format!("control residual at period {} is not observed", at + 1))
                })?;
                col += 1;
            }
        }
    }

    let beta = match linalg::least_squares(&x, &y) {
        // residuals of a fitted factor model are exactly collinear across
        // units; every solution then gives the same fitted projection
        Err(PupError::SingularDesign { .. }) if cs.is_some() => linalg::min_norm_least_squares(&x, &y)?,
        other => other?,
    };
    let correction = linalg::dot_in_order(beta.iter(), eval.iter());
    let fitted = &y - &x * &beta;
    Ok(Projection {
        coefficients: beta,
        correction,
        fitted_residuals: fitted.iter().copied().collect(),
        n_regressors: n_reg,
    })
}

/// Time-series correction from a single residual series.
///
/// `ar_order = p` uses the last `p` pre-period residuals. The direct mode
/// projects `e_t` on `e_{t-h}, ..., e_{t-h-p+1}`; the iterated mode fits an
/// AR(p) and iterates it `h` steps, which for `p = 1` is `rho_1^h e_T0`.
pub fn ts_correction(residuals: &[f64], h: usize, ar_order: usize, mode: PlupMode) -> Result<f64> {
    if h == 0 {
        return domain("horizon must be at least 1");
    }
    if ar_order == 0 {
        return domain("ar_order must be at least 1");
    }
    if residuals.len() < ar_order + h + 1 {
        return Err(PupError::HorizonTooLarge { h, len: residuals.len() });
    }
    match mode {
        PlupMode::Direct => {
            Ok(project(residuals, h, ar_order, None, false)?.correction)
        }
        PlupMode::Iterated => {
            let n = residuals.len();
            let last = residuals[n - 1];
            if ar_order == 1 {
                return Ok(residual_autocorr(residuals, 1)?.powi(h as i32) * last);
            }
            let coef = ar_fit(residuals, ar_order)?;
            let mut path: Vec<f64> = residuals[n - ar_order..].to_vec();
            for _ in 0..h {
                let k = path.len();
                let next = (0..ar_order).map(|s| coef[s] * path[k - 1 - s]).sum();
                path.push(next);
            }
            Ok(path[path.len() - 1])
        }
    }
}

fn ar_fit(e: &[f64], p: usize) -> Result<DVector<f64>> {
    let n = e.len();
    let rows = n - p;
    if rows <= p {
        return Err(PupError::InsufficientData { needed: 2 * p + 1, got: n });
    }
    let x = DMatrix::from_fn(rows, p, |r, s| e[r + p - 1 - s]);
    let y = DVector::from_iterator(rows, e[p..].iter().copied());
    linalg::least_squares(&x, &y)
}

/// Cross-section correction `theta' e_{0, t0+h}` with `theta` from the
/// pre-period regression of the treated residual on selected controls.
pub fn cs_correction(res: &ResidualPanel, unit: usize, h: usize, selection: Selection) -> Result<f64> {
    check_post_horizon(res.t1(), h)?;
    let controls = select_controls(res, unit, selection)?;
    let cs = CsTerms { res, controls: &controls, lag: 0 };
    Ok(project(&res.unit_pre(unit), h, 0, Some(cs), false)?.correction)
}

/// Joint projection on own lags and on leads and lags of selected controls.
///
/// With `mode = ts` this is the direct time-series correction, and with
/// `mode = cs, cs_lag = 0` it is the cross-section correction.
pub fn combined_correction(res: &ResidualPanel, unit: usize, h: usize, spec: &CorrectionSpec) -> Result<f64> {
    Ok(combined_projection(res, unit, h, spec)?.correction)
}

fn combined_projection(res: &ResidualPanel, unit: usize, h: usize, spec: &CorrectionSpec) -> Result<Projection> {
    check_treated(res.n_treated, unit)?;
    check_post_horizon(res.t1(), h)?;
    let own = if spec.mode.uses_ts() {
        if spec.ar_order == 0 {
            return domain("ar_order must be at least 1");
        }
        spec.ar_order
    } else {
        0
    };
    let (controls, guard) = if spec.mode.uses_cs() {
        let sel = spec.resolved_selection(res);
        (select_controls(res, unit, sel)?, matches!(sel, Selection::All))
    } else {
        (Vec::new(), false)
    };
    let cs = spec.mode.uses_cs().then_some(CsTerms { res, controls: &controls, lag: spec.cs_lag });
    project(&res.unit_pre(unit), h, own, cs, guard)
}

/// Corrected imputation of unit `unit` at `t0 + h` with its variance.
pub fn impute_pup(fit: &FactorFit, unit: usize, h: usize, spec: &CorrectionSpec) -> Result<ImputationResult> {
    let res = &fit.residuals;
    let y0_standard = impute_standard(fit, unit, h)?;
    let observed = fit.observed_treated(unit, h)?;
    let e = res.unit_pre(unit);
    let gamma0 = linalg::mean_square(&e);
    let rho1 = clamp_rho(residual_autocorr(&e, 1)?);

    let (correction, variance, error_model) = match spec.mode {
        CorrectionMode::None => (0.0, gamma0, ErrorModel::Stationary { rho: rho1 }),
        CorrectionMode::Ts if spec.ar_order == 1 => {
            let c = match spec.ts_mode {
                PlupMode::Direct => combined_correction(res, unit, h, spec)?,
                PlupMode::Iterated => ts_correction(&e, h, 1, PlupMode::Iterated)?,
            };
            let rho_h = clamp_rho(residual_autocorr(&e, h)?);
            let method = match spec.ts_mode {
                PlupMode::Direct => PredictionMethod::Plupd,
                PlupMode::Iterated => PredictionMethod::Plupi,
            };
            let v = asymptotic_prediction_variance(gamma0, rho1, rho_h, h, method)?;
            let sigma_v2 = gamma0 * (1.0 - rho1 * rho1);
            (c, v, ErrorModel::Ar1Corrected { sigma_v2, phi: rho1 })
        }
        CorrectionMode::Ts => {
            let sigma_v2 = gamma0 * (1.0 - rho1 * rho1);
            let model = ErrorModel::Ar1Corrected { sigma_v2, phi: rho1 };
            match spec.ts_mode {
                PlupMode::Direct => {
                    let proj = combined_projection(res, unit, h, spec)?;
                    (proj.correction, linalg::mean_square(&proj.fitted_residuals), model)
                }
                PlupMode::Iterated => {
                    let c = ts_correction(&e, h, spec.ar_order, PlupMode::Iterated)?;
                    (c, iterated_ar_variance(&e, spec.ar_order, h)?, model)
                }
            }
        }
        CorrectionMode::Cs => {
            let proj = combined_projection(res, unit, h, spec)?;
            let v = cs_variance(res, unit, gamma0, spec, &proj)?;
            let rho = clamp_rho(residual_autocorr(&proj.fitted_residuals, 1).unwrap_or(0.0));
            (proj.correction, v, ErrorModel::Stationary { rho })
        }
        CorrectionMode::Both => {
            let proj = combined_projection(res, unit, h, spec)?;
            let v = linalg::mean_square(&proj.fitted_residuals);
            let rho = clamp_rho(residual_autocorr(&proj.fitted_residuals, 1).unwrap_or(0.0));
            (proj.correction, v, ErrorModel::Stationary { rho })
        }
    };

    let y0_hat = y0_standard + correction;
    Ok(ImputationResult {
        unit,
        horizon: h,
        y0_hat,
        y0_standard,
        correction,
        observed,
        delta_hat: observed - y0_hat,
        variance: variance.max(0.0),
        mode: spec.mode,
        error_model,
    })
}

/// `gamma0 - theta' Sigma00 theta`, with `Sigma00` the pre-period second
/// moments of the regressors.
fn cs_variance(res: &ResidualPanel, unit: usize, gamma0: f64, spec: &CorrectionSpec, proj: &Projection) -> Result<f64> {
    if proj.n_regressors == 0 {
        return Ok(gamma0);
    }
    if spec.cs_lag > 0 {
        return Ok(linalg::mean_square(&proj.fitted_residuals));
    }
    let controls = select_controls(res, unit, spec.resolved_selection(res))?;
    let t0 = res.t0();
    let x = DMatrix::from_fn(t0, controls.len(), |t, c| res.pre[(res.n_treated + controls[c], t)]);
    let sigma00 = x.transpose() * &x / t0 as f64;
    let explained = (proj.coefficients.transpose() * sigma00 * &proj.coefficients)[(0, 0)];
    Ok((gamma0 - explained).max(0.0))
}

/// `sigma_v^2 * sum_{j<h} psi_j^2` for a fitted AR(p).
fn iterated_ar_variance(e: &[f64], p: usize, h: usize) -> Result<f64> {
    let coef = ar_fit(e, p)?;
    let n = e.len();
    let innov: Vec<f64> = (p..n).map(|t| e[t] - (0..p).map(|s| coef[s] * e[t - 1 - s]).sum::<f64>()).collect();
    let sigma_v2 = linalg::mean_square(&innov);
    let mut psi = vec![1.0];
    for j in 1..h {
        let v = (1..=p.min(j)).map(|s| coef[s - 1] * psi[j - s]).sum();
        psi.push(v);
    }
    Ok(sigma_v2 * psi.iter().map(|v| v * v).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_residuals() -> ResidualPanel {
        // deterministic pseudo-noise
        let mut state = 0x2545_f491_u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let (n, t0, t1) = (6, 30, 4);
        let mut full = DMatrix::zeros(n, t0 + t1);
        for i in 0..n {
            let mut prev = 0.0;
            for t in 0..t0 + t1 {
                prev = 0.5 * prev + next();
                full[(i, t)] = prev;
            }
        }
        for t in 0..t0 + t1 {
            full[(0, t)] += 0.8 * full[(2, t)];
        }
        ResidualPanel::new(full.columns(0, t0).into_owned(), full.view((1, t0), (n - 1, t1)).into_owned(), 1)
            .unwrap()
    }

    #[test]
    fn ts_nesting_is_exact() {
        let res = panel_residuals();
        let e = res.unit_pre(0);
        for h in 1..=4 {
            let spec = CorrectionSpec::ts();
            let direct = ts_correction(&e, h, 1, PlupMode::Direct).unwrap();
            assert_eq!(combined_correction(&res, 0, h, &spec).unwrap(), direct);
            let rho = residual_autocorr(&e, h).unwrap();
            assert_eq!(direct, rho * e[e.len() - 1]);
        }
    }

    #[test]
    fn cs_nesting_is_exact() {
        let res = panel_residuals();
        let spec = CorrectionSpec { cs_lag: 0, ..CorrectionSpec::cs(Selection::TopK(2)) };
        for h in 1..=4 {
            assert_eq!(
                combined_correction(&res, 0, h, &spec).unwrap(),
                cs_correction(&res, 0, h, Selection::TopK(2)).unwrap()
            );
        }
    }

    #[test]
    fn top_k_finds_the_loaded_control() {
        let res = panel_residuals();
        assert_eq!(select_controls(&res, 0, Selection::TopK(1)).unwrap(), vec![1]);
    }

    #[test]
    fn select_all_guards_overfit() {
        let res = panel_residuals();
        assert!(select_controls(&res, 0, Selection::All).is_ok());
        let small = ResidualPanel::new(res.pre.columns(0, 8).into_owned(), res.post_controls.clone(), 1).unwrap();
        assert!(matches!(select_controls(&small, 0, Selection::All), Err(PupError::Overfit { .. })));
    }

    #[test]
    fn lead_beyond_panel_is_an_error() {
        let res = panel_residuals();
        let spec = CorrectionSpec { cs_lag: 1, ..CorrectionSpec::cs(Selection::TopK(1)) };
        assert!(combined_correction(&res, 0, 3, &spec).is_ok());
        assert!(combined_correction(&res, 0, 4, &spec).is_err());
    }

    #[test]
    fn iterated_ar1_is_power_of_rho1() {
        let e = panel_residuals().unit_pre(0);
        let r1 = residual_autocorr(&e, 1).unwrap();
        let c = ts_correction(&e, 3, 1, PlupMode::Iterated).unwrap();
        assert_eq!(c, r1.powi(3) * e[e.len() - 1]);
    }

    #[test]
    fn short_series_rejected() {
        assert!(ts_correction(&[1.0, 0.5, 0.2], 2, 1, PlupMode::Direct).is_err());
        assert!(ts_correction(&[1.0, 0.5, 0.2], 1, 0, PlupMode::Direct).is_err());
    }
}
