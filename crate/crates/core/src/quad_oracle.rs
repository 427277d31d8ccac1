//! Exact optimization identities for quadratic objectives, used as
//! ground-truth oracles by the estimation tests.
//!
//! For a quadratic f with constant negative Hessian F and maximizer υ*,
//! adding a linear term ⟨A, ·⟩ moves the maximizer by F⁻¹A and raises the
//! maximum by ½‖F^(−1/2)A‖²; adding the penalty −½‖Gυ‖² moves it by
//! −(F+G²)⁻¹G²υ*. When f is only approximately quadratic with relative
//! defect ω inside the localization ball, the same quantities are bracketed
//! by explicit ω-dependent factors ([`fisher_wilks_brackets`]), and the
//! maximizer of the perturbed objective stays inside the ball whenever the
//! linear drift ‖F^(−1/2)A‖ is a fraction ν of its radius
//! ([`concentration_check`]).

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, check_symmetric, SYM_TOL};
use crate::rng::CounterRng;
use crate::semiparam::fd_newton_max;
use crate::{Error, Result};

/// Absolute slack added to closed inequality checks to absorb solver
/// tolerance.
const CHECK_SLACK: f64 = 1e-7;

/// A quadratic objective υ ↦ value0 − ½(υ−center)ᵀF(υ−center) described by
/// its maximizer and its constant negative Hessian.
#[derive(Clone, Debug)]
pub struct QuadObjective {
    /// Negative Hessian −∇²f, positive definite.
    pub f: DMatrix<f64>,
    /// The maximizer υ*.
    pub center: DVector<f64>,
    /// The maximal value f(υ*).
    pub value0: f64,
}

impl QuadObjective {
    /// Validates symmetry, positive definiteness, and dimension agreement.
    pub fn new(f: DMatrix<f64>, center: DVector<f64>, value0: f64) -> Result<Self> {
        check_symmetric(&f, SYM_TOL)?;
        if f.nrows() != center.len() {
            return Err(Error::Validation(format!(
                "negative Hessian is {}x{} but the center has length {}",
                f.nrows(),
                f.ncols(),
                center.len()
            )));
        }
        if !value0.is_finite() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "quadratic objective data must be finite".into(),
            ));
        }
        let min_eig = linalg::min_eig_sym(&f);
        if min_eig <= 0.0 {
            return Err(Error::Validation(format!(
                "negative Hessian must be positive definite, smallest eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { f, center, value0 })
    }

    /// Dimension of the argument.
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Evaluates the quadratic at υ.
    pub fn value(&self, ups: &DVector<f64>) -> f64 {
        let u = ups - &self.center;
        self.value0 - 0.5 * u.dot(&(&self.f * &u))
    }

    /// Gradient at υ: −F(υ − center).
    pub fn gradient(&self, ups: &DVector<f64>) -> DVector<f64> {
        -(&self.f * (ups - &self.center))
    }
}

/// Maximizer shift and value gain caused by adding the linear term ⟨A, ·⟩
/// to a quadratic objective.
///
/// Returns (F⁻¹A, ½‖F^(−1/2)A‖²): the perturbed maximizer is
/// center + F⁻¹A and the perturbed maximum exceeds the perturbed value at
/// the old center by the gain.
pub fn linear_perturb_shift(
    q: &QuadObjective,
    a: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    if a.len() != q.dim() {
        return Err(Error::Validation(format!(
            "linear term has length {} but the objective has dimension {}",
            a.len(),
            q.dim()
        )));
    }
    let shift = linalg::solve_spd(&q.f, a)?;
    let gain = 0.5 * a.dot(&shift);
    Ok((shift, gain))
}

/// Maximizer shift and value gain caused by adding the penalty −½‖Gυ‖² to
/// a quadratic objective.
///
/// With F_G = F + G², returns (−F_G⁻¹G²·center, ½‖F_G^(−1/2)G²·center‖²):
/// the penalized maximizer is center − F_G⁻¹G²·center and the penalized
/// objective at that point exceeds its value at the old center by the gain.
pub fn quad_penalty_bias(
    q: &QuadObjective,
    g_sq: &DMatrix<f64>,
) -> Result<(DVector<f64>, f64)> {
    check_symmetric(g_sq, SYM_TOL)?;
    if g_sq.nrows() != q.dim() {
        return Err(Error::Validation(format!(
            "penalty operator is {}x{} but the objective has dimension {}",
            g_sq.nrows(),
            g_sq.ncols(),
            q.dim()
        )));
    }
    if linalg::min_eig_sym(g_sq) < -SYM_TOL {
        return Err(Error::Validation(
            "penalty operator must be positive semi-definite".into(),
        ));
    }
    let f_g = &q.f + g_sq;
    let a_g = -(g_sq * &q.center);
    let bias = linalg::solve_spd(&f_g, &a_g)?;
    let gain = 0.5 * a_g.dot(&bias);
    Ok((bias, gain))
}

/// The four bracket constants controlling how far an ω-approximately
/// quadratic maximization can deviate from the exact quadratic identities.
#[derive(Clone, Copy, Debug)]
pub struct FisherWilksBrackets {
    /// Magnitude of the lower Wilks bracket: 2g(ῠ)−2g(υ*)−‖ξ‖² ≥ −wilks_lo.
    pub wilks_lo: f64,
    /// Upper Wilks bracket: 2g(ῠ)−2g(υ*)−‖ξ‖² ≤ wilks_hi.
    pub wilks_hi: f64,
    /// Fisher residual bound: ‖D(ῠ−υ*) − ξ‖ ≤ fisher_resid.
    pub fisher_resid: f64,
    /// Norm bound: ‖D(ῠ−υ*)‖ ≤ norm_hi.
    pub norm_hi: f64,
    /// The Fisher residual bound is proved only for ω ≤ 1/3; false flags
    /// that `fisher_resid` is extrapolated beyond its guarantee.
    pub fisher_valid: bool,
}

/// Evaluates the Fisher/Wilks bracket constants for local quadraticity
/// defect ω and effective-score norm ‖ξ‖ = ‖D⁻¹A‖.
///
/// The brackets are exact at ω = 0 and blow up as ω → 1; ω ≥ 1 is outside
/// the domain.
pub fn fisher_wilks_brackets(omega: f64, xi_norm: f64) -> Result<FisherWilksBrackets> {
    if !(omega.is_finite() && xi_norm.is_finite()) || xi_norm < 0.0 {
        return Err(Error::Validation(
            "omega and the score norm must be finite and the norm non-negative".into(),
        ));
    }
    if !(0.0..1.0).contains(&omega) {
        return Err(Error::Domain(format!(
            "the brackets require 0 <= omega < 1, got {omega}"
        )));
    }
    let xi_sq = xi_norm * xi_norm;
    Ok(FisherWilksBrackets {
        wilks_lo: omega / (1.0 + omega) * xi_sq,
        wilks_hi: omega / (1.0 - omega) * xi_sq,
        fisher_resid: (3.0 * omega).sqrt() / (1.0 - omega) * xi_norm,
        norm_hi: (1.0 + (2.0 * omega).sqrt()) / (1.0 - omega) * xi_norm,
        fisher_valid: omega <= 1.0 / 3.0,
    })
}

/// Maximizes g numerically and checks the localization conclusion
/// ‖F^(1/2)(ῠ − υ*)‖ ≤ r.
///
/// The premise ‖F^(−1/2)A‖ ≤ ν·r with ν ∈ (0, 1] is validated up front;
/// the general guarantee additionally needs ν ≤ 2/3 and a small
/// quadraticity defect, so a `false` return on such inputs is a genuine
/// counterexample while larger ν merely probes the exact-quadratic case.
pub fn concentration_check(
    g: &dyn Fn(&DVector<f64>) -> f64,
    q: &QuadObjective,
    a: &DVector<f64>,
    nu: f64,
    r: f64,
) -> Result<bool> {
    if a.len() != q.dim() {
        return Err(Error::Validation(format!(
            "linear term has length {} but the objective has dimension {}",
            a.len(),
            q.dim()
        )));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Validation(format!(
            "nu must lie in (0, 1], got {nu}"
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Validation(format!("r must be positive, got {r}")));
    }
    let drift = a.dot(&linalg::solve_spd(&q.f, a)?).max(0.0).sqrt();
    if drift > nu * r * (1.0 + 1e-12) + f64::EPSILON {
        return Err(Error::Validation(format!(
            "the drift ||F^(-1/2)A|| = {drift:.6e} exceeds nu*r = {:.6e}; the localization \
             premise does not hold",
            nu * r
        )));
    }
    let maximizer = fd_newton_max(g, &q.center)?;
    let dist = linalg::psd_sqrt(&q.f)? * (&maximizer - &q.center);
    Ok(dist.norm() <= r + CHECK_SLACK * (1.0 + r))
}

/// Measures the local quadraticity defect ω of f around the reference
/// quadratic `q` inside the ball ‖F^(1/2)(υ − υ*)‖ ≤ r.
///
/// Samples 200 directions at staggered radii and returns the largest value
/// of 2·|f(υ) − f(υ*) + ½‖F^(1/2)(υ−υ*)‖²| / ‖F^(1/2)(υ−υ*)‖².
pub fn measured_omega(
    f: &dyn Fn(&DVector<f64>) -> f64,
    q: &QuadObjective,
    r: f64,
    seed: u64,
) -> Result<f64> {
    const DIRECTIONS: usize = 200;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Validation(format!("r must be positive, got {r}")));
    }
    let p = q.dim();
    let inv_sqrt = linalg::psd_inv_sqrt(&q.f)?;
    let f0 = f(&q.center);
    if !f0.is_finite() {
        return Err(Error::Numerical(
            "objective is not finite at the reference maximizer".into(),
        ));
    }
    let mut rng = CounterRng::new(seed, 0);
    let mut omega: f64 = 0.0;
    for k in 0..DIRECTIONS {
        let mut dir = DVector::from_fn(p, |_, _| rng.normal());
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir /= norm;
        let radius = r * (k % 4 + 1) as f64 / 4.0;
        let ups = &q.center + &inv_sqrt * (radius * &dir);
        let value = f(&ups);
        if !value.is_finite() {
            return Err(Error::Numerical(
                "objective is not finite inside the localization ball".into(),
            ));
        }
        let defect = value - f0 + 0.5 * radius * radius;
        omega = omega.max(2.0 * defect.abs() / (radius * radius));
    }
    Ok(omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    fn random_quad(seed: u64, p: usize) -> QuadObjective {
        let mut rng = CounterRng::new(seed, 0);
        let x = DMatrix::from_fn(p, p, |_, _| rng.normal());
        let f = &x * x.transpose() + DMatrix::identity(p, p) * 0.5;
        let center = DVector::from_fn(p, |_, _| rng.normal());
        QuadObjective::new(f, center, rng.normal()).unwrap()
    }

    /// One exact Newton step from an arbitrary start maximizes a quadratic;
    /// verifies the result against a tiny gradient norm.
    fn maximize_quadratic(
        g: &dyn Fn(&DVector<f64>) -> f64,
        grad: &dyn Fn(&DVector<f64>) -> DVector<f64>,
        hess: &DMatrix<f64>,
        start: &DVector<f64>,
    ) -> DVector<f64> {
        let step = linalg::solve_spd(hess, &grad(start)).unwrap();
        let opt = start + step;
        assert!(grad(&opt).norm() <= 1e-10 * (1.0 + g(&opt).abs()));
        opt
    }

    #[test]
    fn objective_value_and_gradient_match_definition() {
        let q = QuadObjective::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            vec(&[1.0, -1.0]),
            3.0,
        )
        .unwrap();
        assert_eq!(q.value(&q.center), 3.0);
        assert!(q.gradient(&q.center).norm() == 0.0);
        let ups = vec(&[2.0, 0.0]);
        // u = (1,1): value = 3 − ½(2+0.5+0.5+1) = 1.
        assert!((q.value(&ups) - 1.0).abs() < 1e-14);
        // gradient = −F·u = −(2.5, 1.5).
        assert!((q.gradient(&ups) - vec(&[-2.5, -1.5])).norm() < 1e-14);
    }

    #[test]
    fn objective_rejects_bad_data() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadObjective::new(asym, vec(&[0.0, 0.0]), 0.0).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadObjective::new(indefinite, vec(&[0.0, 0.0]), 0.0).is_err());
        let ok = DMatrix::identity(2, 2);
        assert!(QuadObjective::new(ok.clone(), vec(&[0.0]), 0.0).is_err());
        assert!(QuadObjective::new(ok, vec(&[f64::NAN, 0.0]), 0.0).is_err());
    }

    #[test]
    fn linear_shift_hand_values() {
        let q = QuadObjective::new(
            DMatrix::from_diagonal(&vec(&[1.0, 4.0])),
            vec(&[0.0, 0.0]),
            0.0,
        )
        .unwrap();
        let (shift, gain) = linear_perturb_shift(&q, &vec(&[0.0, 0.0])).unwrap();
        assert_eq!(shift.norm(), 0.0);
        assert_eq!(gain, 0.0);
        let (shift, gain) = linear_perturb_shift(&q, &vec(&[1.0, 2.0])).unwrap();
        assert!((shift - vec(&[1.0, 0.5])).norm() < 1e-15);
        assert!((gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linear_shift_matches_direct_maximization() {
        for seed in 0..20 {
            let p = 2 + (seed as usize % 6);
            let q = random_quad(seed, p);
            let mut rng = CounterRng::new(seed, 1);
            let a = DVector::from_fn(p, |_, _| rng.normal());
            let (shift, gain) = linear_perturb_shift(&q, &a).unwrap();

            let g = |ups: &DVector<f64>| q.value(ups) + a.dot(ups);
            let grad = |ups: &DVector<f64>| q.gradient(ups) + &a;
            let opt = maximize_quadratic(&g, &grad, &q.f, &q.center);
            assert!((&opt - &q.center - &shift).norm() < 1e-12 * (1.0 + shift.norm()));
            assert!((g(&opt) - g(&q.center) - gain).abs() < 1e-12 * (1.0 + gain.abs()));
        }
    }

    #[test]
    fn penalty_bias_hand_values() {
        let q = QuadObjective::new(DMatrix::identity(2, 2), vec(&[2.0, 0.0]), 0.0).unwrap();
        let (bias, gain) = quad_penalty_bias(&q, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(bias.norm(), 0.0);
        assert_eq!(gain, 0.0);
        let (bias, gain) = quad_penalty_bias(&q, &DMatrix::identity(2, 2)).unwrap();
        assert!((bias - vec(&[-1.0, 0.0])).norm() < 1e-15);
        assert!((gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn penalty_bias_matches_direct_maximization() {
        for seed in 0..20 {
            let p = 2 + (seed as usize % 6);
            let q = random_quad(seed + 100, p);
            let mut rng = CounterRng::new(seed, 2);
            let y = DMatrix::from_fn(p, p, |_, _| rng.normal() * 0.5);
            let g_sq = &y * y.transpose();
            let (bias, gain) = quad_penalty_bias(&q, &g_sq).unwrap();

            let fg = |ups: &DVector<f64>| q.value(ups) - 0.5 * ups.dot(&(&g_sq * ups));
            let grad = |ups: &DVector<f64>| q.gradient(ups) - &g_sq * ups;
            let hess = &q.f + &g_sq;
            let opt = maximize_quadratic(&fg, &grad, &hess, &q.center);
            assert!((&opt - &q.center - &bias).norm() < 1e-12 * (1.0 + bias.norm()));
            assert!((fg(&opt) - fg(&q.center) - gain).abs() < 1e-12 * (1.0 + gain.abs()));
        }
    }

    #[test]
    fn brackets_hand_values_and_monotonicity() {
        let b = fisher_wilks_brackets(0.0, 2.0).unwrap();
        assert_eq!(b.wilks_lo, 0.0);
        assert_eq!(b.wilks_hi, 0.0);
        assert_eq!(b.fisher_resid, 0.0);
        assert_eq!(b.norm_hi, 2.0);
        assert!(b.fisher_valid);

        let b = fisher_wilks_brackets(1.0 / 3.0, 1.0).unwrap();
        assert!((b.wilks_lo - 0.25).abs() < 1e-15);
        assert!((b.wilks_hi - 0.5).abs() < 1e-15);
        assert!((b.fisher_resid - 1.5).abs() < 1e-15);
        assert!((b.norm_hi - 1.5 * (1.0 + (2.0f64 / 3.0).sqrt())).abs() < 1e-15);
        assert!(b.fisher_valid);
        assert!(!fisher_wilks_brackets(0.34, 1.0).unwrap().fisher_valid);

        let mut prev = fisher_wilks_brackets(0.0, 1.0).unwrap();
        for k in 1..20 {
            let cur = fisher_wilks_brackets(k as f64 * 0.049, 1.0).unwrap();
            assert!(cur.wilks_lo > prev.wilks_lo);
            assert!(cur.wilks_hi > prev.wilks_hi);
            assert!(cur.fisher_resid > prev.fisher_resid);
            assert!(cur.norm_hi > prev.norm_hi);
            prev = cur;
        }
    }

    #[test]
    fn brackets_reject_out_of_domain_omega() {
        assert!(matches!(
            fisher_wilks_brackets(1.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(fisher_wilks_brackets(-0.1, 1.0).is_err());
        assert!(fisher_wilks_brackets(0.2, -1.0).is_err());
    }

    #[test]
    fn concentration_holds_for_quadratic_at_the_boundary() {
        for nu in [0.25, 2.0 / 3.0, 1.0] {
            let q = random_quad(7, 4);
            let mut rng = CounterRng::new(7, 3);
            let a = DVector::from_fn(4, |_, _| rng.normal());
            let drift = a.dot(&linalg::solve_spd(&q.f, &a).unwrap()).sqrt();
            let r = drift / nu;
            let g = {
                let q = q.clone();
                let a = a.clone();
                move |ups: &DVector<f64>| q.value(ups) + a.dot(ups)
            };
            assert!(concentration_check(&g, &q, &a, nu, r).unwrap());
        }
    }

    #[test]
    fn concentration_holds_for_small_cubic_perturbation() {
        let q = random_quad(11, 3);
        let mut rng = CounterRng::new(11, 4);
        let a = 0.1 * DVector::from_fn(3, |_, _| rng.normal());
        let drift = a.dot(&linalg::solve_spd(&q.f, &a).unwrap()).sqrt();
        let r = drift / (2.0 / 3.0);
        let g = {
            let center = q.center.clone();
            let qc = q.clone();
            let a = a.clone();
            move |ups: &DVector<f64>| {
                let u = ups - &center;
                qc.value(ups) + a.dot(ups) + 0.01 * u[0] * u[0] * u[1]
            }
        };
        assert!(concentration_check(&g, &q, &a, 2.0 / 3.0, r).unwrap());
    }

    #[test]
    fn concentration_rejects_violated_premise() {
        let q = random_quad(3, 2);
        let a = vec(&[10.0, 0.0]);
        let g = {
            let q = q.clone();
            let a = a.clone();
            move |ups: &DVector<f64>| q.value(ups) + a.dot(ups)
        };
        let err = concentration_check(&g, &q, &a, 0.5, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn measured_omega_zero_for_quadratic_and_grows_with_cubic() {
        let q = random_quad(21, 3);
        let exact = {
            let q = q.clone();
            move |ups: &DVector<f64>| q.value(ups)
        };
        assert!(measured_omega(&exact, &q, 0.5, 0).unwrap() < 1e-12);

        let center = q.center.clone();
        let mut last = 0.0;
        for (i, c) in [0.01, 0.03, 0.09].iter().enumerate() {
            let c = *c;
            let qc = q.clone();
            let centerc = center.clone();
            let cubic = move |ups: &DVector<f64>| {
                let u = ups - &centerc;
                qc.value(ups) + c * u[0] * u[0] * u[1]
            };
            let omega = measured_omega(&cubic, &q, 0.5, 0).unwrap();
            assert!(omega > last, "perturbation {i} did not raise omega");
            last = omega;
        }
        assert!(last < 1.0);
    }

    #[test]
    fn wilks_error_inside_measured_bracket_on_cubic_instances() {
        let mut checked = 0;
        for seed in 0..100 {
            let p = 2 + (seed as usize % 4);
            let q = random_quad(seed + 300, p);
            let mut rng = CounterRng::new(seed, 5);
            let a = 0.05 * DVector::from_fn(p, |_, _| rng.normal());
            let cube = 0.02 * rng.normal();
            let center = q.center.clone();
            let f_pert = {
                let q = q.clone();
                let center = center.clone();
                move |ups: &DVector<f64>| {
                    let u = ups - &center;
                    q.value(ups) + cube * u[0] * u[0] * u[1]
                }
            };
            let xi_sq = a.dot(&linalg::solve_spd(&q.f, &a).unwrap());
            let r = 4.0 * xi_sq.sqrt().max(0.05);
            let omega = measured_omega(&f_pert, &q, r, seed).unwrap();
            if omega >= 1.0 / 3.0 {
                continue;
            }
            let brackets = fisher_wilks_brackets(omega, xi_sq.sqrt()).unwrap();

            let g = {
                let f_pert = &f_pert;
                let a = a.clone();
                move |ups: &DVector<f64>| f_pert(ups) + a.dot(ups)
            };
            let opt = fd_newton_max(&g, &q.center).unwrap();
            let wilks_err = 2.0 * (g(&opt) - g(&q.center)) - xi_sq;
            // The FD optimizer resolves the objective to ~1e-9 absolute.
            let slack = 1e-7 * (1.0 + xi_sq);
            assert!(
                wilks_err >= -brackets.wilks_lo - slack,
                "seed {seed}: {wilks_err} below -{}",
                brackets.wilks_lo
            );
            assert!(
                wilks_err <= brackets.wilks_hi + slack,
                "seed {seed}: {wilks_err} above {}",
                brackets.wilks_hi
            );
            checked += 1;
        }
        assert!(checked >= 80, "only {checked} instances had omega < 1/3");
    }
}
