//! Small dense solves for scoring steps.

use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Solves `a x = b` for symmetric positive definite `a` (Cholesky).
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    let chol = a.clone().cholesky().ok_or(NumericsError::Singular)?;
    let x = chol.solve(b);
    finite(x)
}

/// Solves a general square system by LU with partial pivoting.
pub fn solve_lu(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    let lu = a.clone().lu();
    let x = lu.solve(b).ok_or(NumericsError::Singular)?;
    finite(x)
}

/// Cholesky first, LU when the matrix is not numerically positive definite.
pub fn solve_spd_or_lu(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    solve_spd(a, b).or_else(|_| solve_lu(a, b))
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    let inv = a.clone().try_inverse().ok_or(NumericsError::Singular)?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(NumericsError::Singular)
    }
}

fn finite(x: DVector<f64>) -> Result<DVector<f64>, NumericsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(NumericsError::Singular)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_multiplies_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s = DVector::from_vec(vec![1.0, -2.0, 0.25]);
        let x = solve_spd(&a, &s).unwrap();
        let r = &a * &x - &s;
        assert!(r.norm() / s.norm() < 1e-10);
    }

    #[test]
    fn lu_fallback_handles_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 3.0]);
        assert!(solve_spd(&a, &b).is_err());
        let x = solve_spd_or_lu(&a, &b).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve_spd_or_lu(&a, &b).is_err());
        assert!(inverse(&a).is_err());
    }
}
