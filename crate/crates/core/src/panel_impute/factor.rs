use nalgebra::{DMatrix, DVector};

use super::{check_post_horizon, check_treated, PanelDataset, ResidualPanel};
use crate::error::{domain, PupError, Result};
use crate::linalg;

/// Factor model fitted on the controls, with treated loadings from the
/// pre-period.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub r: usize,
    /// Factors for every period, `T x r`.
    pub f_hat: DMatrix<f64>,
    /// Loadings, `N x r`.
    pub loadings: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub residuals: ResidualPanel,
    /// Observed outcomes of treated units after treatment, `N1 x T1`.
    pub treated_post: DMatrix<f64>,
}

/// Principal components of the period-demeaned controls, then pre-period
/// loadings for each treated unit.
pub fn factor_fit_controls(panel: &PanelDataset, r: usize) -> Result<FactorFit> {
    let n0 = panel.n_controls();
    let t = panel.n_periods();
    if r == 0 || r > n0.min(t) {
        return domain(format!("number of factors {r} must lie in 1..={}", n0.min(t)));
    }
    let z = demeaned_controls(panel)?;
    let svd = z.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| PupError::Domain("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let scale = (t as f64).sqrt();
    let f_hat = DMatrix::from_fn(t, r, |s, k| scale * v_t[(order[k], s)]);
    FactorFit::from_factors(panel, f_hat)
}

fn demeaned_controls(panel: &PanelDataset) -> Result<DMatrix<f64>> {
    let y = panel.outcomes();
    let n1 = panel.n_treated();
    let n0 = panel.n_controls();
    let t = panel.n_periods();
    let mut z = DMatrix::zeros(n0, t);
    for j in 0..n0 {
        let row: Vec<f64> = y.row(n1 + j).iter().copied().collect();
        let m = linalg::mean(&row);
        if row.iter().all(|v| (v - m).abs() <= 1e-14 * m.abs().max(1.0)) {
            return Err(PupError::DegenerateUnit { unit: n1 + j });
        }
        for s in 0..t {
            z[(j, s)] = row[s] - m;
        }
    }
    Ok(z)
}

impl FactorFit {
    /// Loadings, intercepts and residuals for given factors.
    ///
    /// Controls are demeaned over all periods and projected on `f_hat`.
    /// Each treated unit is regressed on an intercept and the pre-period
    /// factors, which is the same as demeaning both sides over the pre-period.
    pub fn from_factors(panel: &PanelDataset, f_hat: DMatrix<f64>) -> Result<Self> {
        let y = panel.outcomes();
        let (n, t) = y.shape();
        let n1 = panel.n_treated();
        let t0 = panel.t0();
        let r = f_hat.ncols();
        if f_hat.nrows() != t {
            return Err(PupError::DimensionMismatch { expected: t, got: f_hat.nrows() });
        }
        if t0 <= r + 1 {
            return Err(PupError::InsufficientData { needed: r + 2, got: t0 });
        }

        let mut loadings = DMatrix::zeros(n, r);
        let mut intercepts = DVector::zeros(n);
        let mut fitted = DMatrix::zeros(n, t);

        let z = demeaned_controls(panel)?;
        for j in 0..panel.n_controls() {
            let zj = z.row(j).transpose();
            let lam = linalg::least_squares(&f_hat, &zj)?;
            let i = n1 + j;
            let row: Vec<f64> = y.row(i).iter().copied().collect();
            intercepts[i] = linalg::mean(&row);
            for k in 0..r {
                loadings[(i, k)] = lam[k];
            }
        }

        let mut design = DMatrix::from_element(t0, r + 1, 1.0);
        design.view_mut((0, 1), (t0, r)).copy_from(&f_hat.rows(0, t0));
        for i in 0..n1 {
            let y_pre = DVector::from_iterator(t0, y.row(i).iter().take(t0).copied());
            let m = linalg::mean(y_pre.as_slice());
            if y_pre.iter().all(|v| (v - m).abs() <= 1e-14 * m.abs().max(1.0)) {
                return Err(PupError::DegenerateUnit { unit: i });
            }
            let coef = linalg::least_squares(&design, &y_pre)?;
            intercepts[i] = coef[0];
            for k in 0..r {
                loadings[(i, k)] = coef[k + 1];
            }
        }

        for i in 0..n {
            for s in 0..t {
                let mut v = intercepts[i];
                for k in 0..r {
                    v += loadings[(i, k)] * f_hat[(s, k)];
                }
                fitted[(i, s)] = v;
            }
        }

        let pre = DMatrix::from_fn(n, t0, |i, s| y[(i, s)] - fitted[(i, s)]);
        let post_controls = DMatrix::from_fn(n - n1, t - t0, |j, s| y[(n1 + j, t0 + s)] - fitted[(n1 + j, t0 + s)]);
        let treated_post = DMatrix::from_fn(n1, t - t0, |i, s| y[(i, t0 + s)]);
        Ok(Self {
            r,
            f_hat,
            loadings,
            intercepts,
            residuals: ResidualPanel::new(pre, post_controls, n1)?,
            treated_post,
        })
    }

    pub fn t0(&self) -> usize {
        self.residuals.t0()
    }

    pub fn t1(&self) -> usize {
        self.residuals.t1()
    }

    pub fn n_treated(&self) -> usize {
        self.residuals.n_treated
    }

    /// `intercept + loadings * factors'`, `N x T`.
    pub fn common_component(&self) -> DMatrix<f64> {
        let mut c = &self.loadings * self.f_hat.transpose();
        for i in 0..c.nrows() {
            for s in 0..c.ncols() {
                c[(i, s)] += self.intercepts[i];
            }
        }
        c
    }

    /// Observed outcome of treated unit `unit` at `t0 + h`.
    pub fn observed_treated(&self, unit: usize, h: usize) -> Result<f64> {
        check_treated(self.n_treated(), unit)?;
        check_post_horizon(self.t1(), h)?;
        Ok(self.treated_post[(unit, h - 1)])
    }
}

/// Imputed untreated outcome `intercept_i + loadings_i' F_{t0+h}`.
pub fn impute_standard(fit: &FactorFit, unit: usize, h: usize) -> Result<f64> {
    check_treated(fit.n_treated(), unit)?;
    check_post_horizon(fit.t1(), h)?;
    let s = fit.t0() + h - 1;
    let mut v = fit.intercepts[unit];
    for k in 0..fit.r {
        v += fit.loadings[(unit, k)] * fit.f_hat[(s, k)];
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one_panel() -> PanelDataset {
        let lam = [1.5, 0.7, -1.2, 2.0, 0.4, -0.9];
        let f = [0.3, 1.1, -0.4, 0.8, 2.2, -1.3, 0.5, 1.7, -0.6, 0.9];
        PanelDataset::new(DMatrix::from_fn(6, 10, |i, t| lam[i] * f[t]), 1, 7).unwrap()
    }

    #[test]
    fn exact_low_rank_panel() {
        let panel = rank_one_panel();
        let fit = factor_fit_controls(&panel, 1).unwrap();
        assert!(fit.residuals.pre.iter().all(|e| e.abs() < 1e-10));
        assert!(fit.residuals.post_controls.iter().all(|e| e.abs() < 1e-10));
        for h in 1..=3 {
            let truth = panel.outcomes()[(0, 6 + h)];
            assert!((impute_standard(&fit, 0, h).unwrap() - truth).abs() < 1e-10);
        }
    }

    #[test]
    fn untreated_unit_and_bad_horizon_rejected() {
        let fit = factor_fit_controls(&rank_one_panel(), 1).unwrap();
        assert!(impute_standard(&fit, 1, 1).is_err());
        assert!(impute_standard(&fit, 0, 0).is_err());
        assert!(impute_standard(&fit, 0, 4).is_err());
    }

    #[test]
    fn too_many_factors() {
        assert!(factor_fit_controls(&rank_one_panel(), 6).is_err());
        assert!(factor_fit_controls(&rank_one_panel(), 0).is_err());
    }

    #[test]
    fn constant_control_is_degenerate() {
        let mut y = rank_one_panel().outcomes().clone();
        for t in 0..10 {
            y[(3, t)] = 2.0;
        }
        let panel = PanelDataset::new(y, 1, 7).unwrap();
        assert_eq!(factor_fit_controls(&panel, 1).err(), Some(PupError::DegenerateUnit { unit: 3 }));
    }
}
