//! Thin wrappers over nalgebra for the symmetric/PSD operations the rest of
//! the crate needs: eigendecompositions, matrix half-powers, SPD solves, and
//! operator norms, all with explicit tolerance handling.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Relative tolerance for symmetry and PSD checks.
pub const SYM_TOL: f64 = 1e-10;

/// Returns an error if `m` is not square-symmetric within `tol·scale`,
/// where scale is the largest absolute entry.
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Validation(format!(
            "matrix is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return Err(Error::Validation(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues and eigenvectors of a symmetric matrix. The input is
/// symmetrized first so tiny floating-point asymmetry cannot leak through.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let s = (m + m.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Eigenvalues only, ascending order not guaranteed.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    sym_eigen(m).0
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

/// Operator (spectral) norm of a symmetric matrix: max |λ|.
pub fn op_norm_sym(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).abs().max()
}

/// Operator norm of a general rectangular matrix: largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// f(m) for symmetric m via the eigendecomposition, with eigenvalues below
/// `-tol·‖m‖` rejected and small negatives clamped to zero.
fn sym_matrix_function(
    m: &DMatrix<f64>,
    f: impl Fn(f64) -> f64,
    needs_positive: bool,
    what: &str,
) -> Result<DMatrix<f64>> {
    check_symmetric(m, SYM_TOL)?;
    let (vals, vecs) = sym_eigen(m);
    let scale = vals.abs().max().max(1.0);
    let mut fvals = DVector::zeros(vals.len());
    for i in 0..vals.len() {
        let mut v = vals[i];
        if v < -SYM_TOL * scale {
            return Err(Error::Validation(format!(
                "{what}: matrix not PSD (eigenvalue {v})"
            )));
        }
        v = v.max(0.0);
        if needs_positive && v <= SYM_TOL * scale {
            return Err(Error::Numerical(format!(
                "{what}: matrix singular (eigenvalue {v})"
            )));
        }
        fvals[i] = f(v);
    }
    Ok(&vecs * DMatrix::from_diagonal(&fvals) * vecs.transpose())
}

/// Unique PSD square root of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_matrix_function(m, |v| v.sqrt(), false, "psd_sqrt")
}

/// Inverse of the PSD square root (the −1/2 power) of a PD matrix.
pub fn psd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_matrix_function(m, |v| 1.0 / v.sqrt(), true, "psd_inv_sqrt")
}

/// Inverse of a PD matrix via the eigendecomposition.
pub fn psd_inv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_matrix_function(m, |v| 1.0 / v, true, "psd_inv")
}

/// Solve A x = b for symmetric PD A via Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    check_symmetric(a, SYM_TOL)?;
    let sym = (a + a.transpose()) * 0.5;
    let chol = sym.clone().cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "solve_spd: Cholesky failed (min eigenvalue {})",
            min_eig_sym(&sym)
        ))
    })?;
    Ok(chol.solve(b))
}

/// Solve A X = B (matrix right-hand side) for symmetric PD A.
pub fn solve_spd_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(a, SYM_TOL)?;
    let sym = (a + a.transpose()) * 0.5;
    let chol = sym.clone().cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "solve_spd_mat: Cholesky failed (min eigenvalue {})",
            min_eig_sym(&sym)
        ))
    })?;
    Ok(chol.solve(b))
}

/// Largest generalized eigenvalue λ of S v = λ T v for symmetric S and
/// symmetric PD T, computed by whitening with T^{-1/2}.
pub fn max_gen_eig(s: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    let w = psd_inv_sqrt(t)?;
    let white = &w * s * &w;
    Ok(sym_eigenvalues(&white).max())
}

/// Range of generalized eigenvalues (min, max) of S v = λ T v.
pub fn gen_eig_range(s: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<(f64, f64)> {
    let w = psd_inv_sqrt(t)?;
    let vals = sym_eigenvalues(&(&w * s * &w));
    Ok((vals.min(), vals.max()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_psd(p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::CounterRng::new(seed, 0);
        let a = DMatrix::from_fn(p, p, |_, _| rng.normal());
        &a * a.transpose() / p as f64
    }

    #[test]
    fn sqrt_squares_back() {
        let m = random_psd(6, 11);
        let r = psd_sqrt(&m).unwrap();
        assert_relative_eq!(&r * &r, m, epsilon = 1e-10);
    }

    #[test]
    fn inv_sqrt_whitens() {
        let m = random_psd(5, 12) + DMatrix::identity(5, 5) * 0.1;
        let w = psd_inv_sqrt(&m).unwrap();
        let id = &w * &m * &w;
        assert_relative_eq!(id, DMatrix::identity(5, 5), epsilon = 1e-9);
    }

    #[test]
    fn spd_solve_matches_inverse() {
        let m = random_psd(7, 13) + DMatrix::identity(7, 7);
        let b = DVector::from_fn(7, |i, _| (i as f64 + 1.0).sin());
        let x = solve_spd(&m, &b).unwrap();
        assert_relative_eq!(&m * x, b, epsilon = 1e-9);
    }

    #[test]
    fn rejects_asymmetric() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(check_symmetric(&m, SYM_TOL).is_err());
        assert!(psd_sqrt(&m).is_err());
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(psd_sqrt(&m).is_err());
    }

    #[test]
    fn gen_eig_identity_weights() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let t = DMatrix::identity(2, 2);
        let (lo, hi) = gen_eig_range(&s, &t).unwrap();
        assert_relative_eq!(lo, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn op_norm_of_rectangular() {
        let m = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_relative_eq!(op_norm(&m), 5.0, epsilon = 1e-12);
    }
}
