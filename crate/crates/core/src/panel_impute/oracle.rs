use nalgebra::{DMatrix, DVector};

use super::{check_post_horizon, check_treated, ResidualPanel};
use crate::error::{domain, PupError, Result};
use crate::linalg;

/// Largest stacked error vector the dense oracle will factorize.
pub const MAX_STACKED_DIM: usize = 5000;

/// Error covariance with `E[e_{i,t} e_{j,s}] = Sigma_ij phi_i^{t-s}` for
/// `t >= s`, over the observed cells of a panel with `n_treated` treated
/// units, `t0` pre-periods and `t` periods in total.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedCov {
    sigma: DMatrix<f64>,
    phi: Vec<f64>,
    n_treated: usize,
    t0: usize,
    t: usize,
}

impl StackedCov {
    pub fn new(sigma: DMatrix<f64>, phi: Vec<f64>, n_treated: usize, t0: usize, t: usize) -> Result<Self> {
        let n = sigma.nrows();
        if !sigma.is_square() {
            return Err(PupError::DimensionMismatch { expected: n, got: sigma.ncols() });
        }
        if phi.len() != n {
            return Err(PupError::DimensionMismatch { expected: n, got: phi.len() });
        }
        if n_treated == 0 || n_treated >= n || t0 == 0 || t0 >= t {
            return domain("invalid treatment pattern for stacked covariance");
        }
        if let Some(p) = phi.iter().find(|p| !(p.abs() < 1.0)) {
            return domain(format!("AR coefficient {p} is not stationary"));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return domain("cross-sectional covariance is not symmetric");
                }
            }
        }
        let cov = Self { sigma, phi, n_treated, t0, t };
        let n_stacked = cov.n_stacked();
        if n_stacked > MAX_STACKED_DIM {
            return domain(format!("stacked dimension {n_stacked} exceeds {MAX_STACKED_DIM}"));
        }
        Ok(cov)
    }

    pub fn n_units(&self) -> usize {
        self.sigma.nrows()
    }

    /// Number of observed untreated cells, `N T - N1 T1`.
    pub fn n_stacked(&self) -> usize {
        self.n_units() * self.t - self.n_treated * (self.t - self.t0)
    }

    /// Covariance of two cells, periods 0-based.
    pub fn cell_cov(&self, i: usize, t: usize, j: usize, s: usize) -> f64 {
        if t >= s {
            self.sigma[(i, j)] * self.phi[i].powi((t - s) as i32)
        } else {
            self.sigma[(i, j)] * self.phi[j].powi((s - t) as i32)
        }
    }

    /// Observed cells in stacking order: unit by unit, period within unit.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_stacked());
        for i in 0..self.n_units() {
            let last = if i < self.n_treated { self.t0 } else { self.t };
            out.extend((0..last).map(|s| (i, s)));
        }
        out
    }

    pub fn gamma(&self) -> DMatrix<f64> {
        let cells = self.cells();
        DMatrix::from_fn(cells.len(), cells.len(), |a, b| {
            let ((i, t), (j, s)) = (cells[a], cells[b]);
            self.cell_cov(i, t, j, s)
        })
    }

    /// Covariance of the target cell `(unit, t0 + h)` with each observed cell.
    pub fn omega(&self, unit: usize, h: usize) -> DVector<f64> {
        let target = self.t0 + h - 1;
        let cells = self.cells();
        DVector::from_iterator(cells.len(), cells.iter().map(|&(j, s)| self.cell_cov(unit, target, j, s)))
    }

    /// Residual panel values in stacking order.
    pub fn stack(&self, res: &ResidualPanel) -> Result<DVector<f64>> {
        if res.n_units() != self.n_units() || res.t0() != self.t0 || res.t0() + res.t1() != self.t {
            return domain("residual panel does not match the covariance pattern");
        }
        let cells = self.cells();
        let v: Vec<f64> = cells.iter().map(|&(i, s)| res.value(i, s).expect("observed cell")).collect();
        Ok(DVector::from_vec(v))
    }
}

/// Best linear unbiased correction `omega' Gamma^{-1} e` for the target cell.
pub fn panel_blup_oracle(cov: &StackedCov, unit: usize, h: usize, residuals: &DVector<f64>) -> Result<f64> {
    check_treated(cov.n_treated, unit)?;
    check_post_horizon(cov.t - cov.t0, h)?;
    let n = cov.n_stacked();
    if residuals.len() != n {
        return Err(PupError::DimensionMismatch { expected: n, got: residuals.len() });
    }
    let z = linalg::spd_solve(&cov.gamma(), residuals)?;
    Ok(linalg::dot_in_order(cov.omega(unit, h).iter(), z.iter()))
}

/// Oracle under uncorrelated units: `phi_i^h e_{i,t0}`.
pub fn case1_correction(cov: &StackedCov, unit: usize, h: usize, res: &ResidualPanel) -> Result<f64> {
    check_treated(cov.n_treated, unit)?;
    check_post_horizon(res.t1(), h)?;
    Ok(cov.phi[unit].powi(h as i32) * res.pre[(unit, res.t0() - 1)])
}

/// Oracle under serially uncorrelated errors: `theta' e_{0,t0+h}` with
/// `theta = Sigma_00^{-1} Sigma_0i`.
pub fn case2_correction(cov: &StackedCov, unit: usize, h: usize, res: &ResidualPanel) -> Result<f64> {
    check_treated(cov.n_treated, unit)?;
    check_post_horizon(res.t1(), h)?;
    let n1 = cov.n_treated;
    let n0 = cov.n_units() - n1;
    let sigma00 = cov.sigma.view((n1, n1), (n0, n0)).into_owned();
    let sigma0i = cov.sigma.view((n1, unit), (n0, 1)).column(0).into_owned();
    let theta = linalg::spd_solve(&sigma00, &sigma0i)?;
    Ok(linalg::dot_in_order(theta.iter(), res.post_controls.column(h - 1).iter()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacked_dimension_and_symmetry() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let cov = StackedCov::new(sigma, vec![0.5, -0.2], 1, 3, 5).unwrap();
        assert_eq!(cov.n_stacked(), 8);
        let g = cov.gamma();
        assert_eq!(g, g.transpose());
        assert_eq!(cov.cell_cov(0, 4, 1, 2), 0.3 * 0.25);
        assert_eq!(cov.cell_cov(1, 2, 0, 4), 0.3 * 0.25);
    }

    #[test]
    fn oversized_problem_rejected() {
        let sigma = DMatrix::identity(60, 60);
        assert!(StackedCov::new(sigma, vec![0.0; 60], 1, 50, 100).is_err());
    }
}
