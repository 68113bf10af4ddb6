//! Counterfactual imputation for treated units in a panel.
//!
//! Treated units occupy the first `n_treated` rows of the outcome matrix and
//! are observed under treatment from period `t0 + 1` on. A factor model is
//! estimated on the controls, treated loadings come from the pre-period, and
//! the resulting residuals feed the time-series and cross-section
//! corrections.

mod corrections;
mod effect;
mod factor;
mod oracle;

pub use corrections::{
    combined_correction, cs_correction, impute_pup, select_controls, ts_correction, CorrectionMode,
    CorrectionSpec, ErrorModel, ImputationResult, Selection,
};
pub use effect::{treatment_effect, EffectEstimate, EffectTarget};
pub use factor::{factor_fit_controls, impute_standard, FactorFit};
pub use oracle::{case1_correction, case2_correction, panel_blup_oracle, StackedCov, MAX_STACKED_DIM};

use nalgebra::DMatrix;

use crate::error::{domain, PupError, Result};

/// Outcomes for `N` units over `T` periods, treated units first.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    y: DMatrix<f64>,
    n_treated: usize,
    t0: usize,
    units: Vec<String>,
    periods: Vec<String>,
}

impl PanelDataset {
    pub fn new(y: DMatrix<f64>, n_treated: usize, t0: usize) -> Result<Self> {
        let units = (0..y.nrows()).map(|i| format!("unit{}", i + 1)).collect();
        let periods = (0..y.ncols()).map(|t| (t + 1).to_string()).collect();
        Self::with_labels(y, n_treated, t0, units, periods)
    }

    pub fn with_labels(
        y: DMatrix<f64>,
        n_treated: usize,
        t0: usize,
        units: Vec<String>,
        periods: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = y.shape();
        if n_treated == 0 || n_treated >= n {
            return domain(format!("need 1 <= treated units < {n}, got {n_treated}"));
        }
        if t0 == 0 || t0 >= t {
            return domain(format!("need 1 <= t0 < {t}, got {t0}"));
        }
        if units.len() != n {
            return Err(PupError::DimensionMismatch { expected: n, got: units.len() });
        }
        if periods.len() != t {
            return Err(PupError::DimensionMismatch { expected: t, got: periods.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(PupError::NonFinite);
        }
        Ok(Self { y, n_treated, t0, units, periods })
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_controls(&self) -> usize {
        self.n_units() - self.n_treated
    }

    /// Last pre-treatment period (1-based count of pre periods).
    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.n_periods() - self.t0
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn unit_index(&self, label: &str) -> Option<usize> {
        self.units.iter().position(|u| u == label)
    }
}

/// Estimated idiosyncratic errors on the observed untreated cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPanel {
    /// All units over the pre-period, `N x T0`.
    pub pre: DMatrix<f64>,
    /// Control units over the post-period, `(N - N1) x T1`.
    pub post_controls: DMatrix<f64>,
    pub n_treated: usize,
}

impl ResidualPanel {
    pub fn new(pre: DMatrix<f64>, post_controls: DMatrix<f64>, n_treated: usize) -> Result<Self> {
        let n = pre.nrows();
        if n_treated == 0 || n_treated >= n {
            return domain(format!("need 1 <= treated units < {n}, got {n_treated}"));
        }
        if post_controls.nrows() != n - n_treated {
            return Err(PupError::DimensionMismatch { expected: n - n_treated, got: post_controls.nrows() });
        }
        Ok(Self { pre, post_controls, n_treated })
    }

    pub fn n_units(&self) -> usize {
        self.pre.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.post_controls.nrows()
    }

    pub fn t0(&self) -> usize {
        self.pre.ncols()
    }

    pub fn t1(&self) -> usize {
        self.post_controls.ncols()
    }

    pub fn unit_pre(&self, unit: usize) -> Vec<f64> {
        self.pre.row(unit).iter().copied().collect()
    }

    /// Residual of unit `unit` at 0-based period `t`, if observed.
    pub fn value(&self, unit: usize, t: usize) -> Option<f64> {
        let t0 = self.t0();
        if t < t0 {
            return Some(self.pre[(unit, t)]);
        }
        if unit < self.n_treated || t - t0 >= self.t1() {
            return None;
        }
        Some(self.post_controls[(unit - self.n_treated, t - t0)])
    }
}

pub(crate) fn check_treated(n_treated: usize, unit: usize) -> Result<()> {
    if unit >= n_treated {
        return domain(format!("unit {unit} is not treated; nothing to impute"));
    }
    Ok(())
}

pub(crate) fn check_post_horizon(t1: usize, h: usize) -> Result<()> {
    if h == 0 || h > t1 {
        return domain(format!("horizon {h} outside 1..={t1}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_invariants() {
        let y = DMatrix::from_element(3, 4, 1.0);
        assert!(PanelDataset::new(y.clone(), 0, 2).is_err());
        assert!(PanelDataset::new(y.clone(), 3, 2).is_err());
        assert!(PanelDataset::new(y.clone(), 1, 4).is_err());
        let p = PanelDataset::new(y, 1, 2).unwrap();
        assert_eq!((p.n_units(), p.n_periods(), p.t1(), p.n_controls()), (3, 4, 2, 2));
    }

    #[test]
    fn residual_lookup() {
        let pre = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let post = DMatrix::from_row_slice(1, 1, &[5.0]);
        let r = ResidualPanel::new(pre, post, 1).unwrap();
        assert_eq!(r.value(1, 2), Some(5.0));
        assert_eq!(r.value(0, 2), None);
        assert_eq!(r.value(1, 3), None);
        assert_eq!(r.value(0, 1), Some(2.0));
    }
}
