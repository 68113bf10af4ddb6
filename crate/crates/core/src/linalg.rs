//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Least squares goes through a Householder QR with an explicit rank check;
//! covariance solves go through Cholesky. Nothing here forms an inverse.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{PupError, Result};

/// Relative tolerance on |R_jj| used to declare a design rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Least-squares coefficients of `y` on the columns of `x`.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(PupError::DimensionMismatch { expected: n, got: y.len() });
    }
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    if n < k {
        return Err(PupError::InsufficientData { needed: k, got: n });
    }
    if k == 1 {
        // closed form keeps single-regressor projections on the same
        // arithmetic path as the ratio-of-sums autocorrelation
        let col = x.column(0);
        let den = dot_in_order(col.iter(), col.iter());
        if den <= 0.0 || !den.is_finite() {
            return Err(PupError::SingularDesign { column: 0 });
        }
        let num = dot_in_order(col.iter(), y.iter());
        return Ok(DVector::from_element(1, num / den));
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    for j in 0..k {
        if !(r[(j, j)].abs() > RANK_TOL * scale.max(f64::MIN_POSITIVE)) {
            return Err(PupError::SingularDesign { column: j });
        }
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
        .ok_or(PupError::SingularDesign { column: k - 1 })
}

/// Minimum-norm least squares through the SVD, treating singular values
/// below `RANK_TOL` times the largest as zero.
///
/// Used where the design can be exactly collinear by construction and the
/// fitted values, not the individual coefficients, are what matter.
pub fn min_norm_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(PupError::DimensionMismatch { expected: n, got: y.len() });
    }
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, v| m.max(*v));
    if !(smax > 0.0) {
        return Err(PupError::SingularDesign { column: 0 });
    }
    svd.solve(y, RANK_TOL * smax).map_err(|e| PupError::Domain(e.to_string()))
}

/// Sequential left-to-right dot product.
pub fn dot_in_order<'a>(
    a: impl Iterator<Item = &'a f64>,
    b: impl Iterator<Item = &'a f64>,
) -> f64 {
    let mut s = 0.0;
    for (u, v) in a.zip(b) {
        s += u * v;
    }
    s
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(PupError::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(PupError::NonFinite);
    }
    Cholesky::new(m.clone()).ok_or(PupError::NotPositiveDefinite)
}

/// Solves `m z = b` for SPD `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if b.len() != m.nrows() {
        return Err(PupError::DimensionMismatch { expected: m.nrows(), got: b.len() });
    }
    Ok(spd_factor(m)?.solve(b))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Pearson correlation; zero when either input has no variation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovers_coefficients() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let b = least_squares(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12);
        assert!((b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_are_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(least_squares(&x, &y), Err(PupError::SingularDesign { .. })));
    }

    #[test]
    fn indefinite_matrix_fails_cholesky() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(spd_factor(&m).err(), Some(PupError::NotPositiveDefinite));
    }

    #[test]
    fn min_norm_handles_duplicate_columns() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        assert!(least_squares(&x, &y).is_err());
        let b = min_norm_least_squares(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12);
    }
}
