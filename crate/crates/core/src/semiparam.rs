//! Block decompositions of a joint (θ, η) information matrix.
//!
//! A smooth objective f(θ, η) with target θ and nuisance η carries its local
//! geometry in the negated Hessian 𝓕 = −∇²f, partitioned into blocks. This
//! module measures how strongly the two groups interact (the separability
//! number ρ), builds the linear nuisance reparameterization that removes the
//! mixed second derivative at a reference point, and evaluates the bias
//! bounds that come with one-point orthogonality.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::{Error, Result};

/// Interpolation constant ν shared by the curvature-error bounds.
pub const NU: f64 = 2.0 / 3.0;

/// Step scale for finite-difference mixed Hessian blocks.
pub const MIXED_FD_STEP: f64 = 1e-5;

/// Relative tolerance for the Loewner checks in [`sandwich_check`].
pub const SANDWICH_TOL: f64 = 1e-10;

/// Blocks of the negated Hessian −∇²f(θ, η): the θθ-block `dtt` (p×p), the
/// θη cross block `a` (p×q) and the ηη-block `hnn` (q×q).
#[derive(Clone, Debug)]
pub struct BlockHessian {
    pub dtt: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub hnn: DMatrix<f64>,
}

impl BlockHessian {
    /// Validates dimensions and symmetry of the diagonal blocks.
    pub fn new(dtt: DMatrix<f64>, a: DMatrix<f64>, hnn: DMatrix<f64>) -> Result<Self> {
        let p = dtt.nrows();
        let q = hnn.nrows();
        if dtt.ncols() != p || hnn.ncols() != q {
            return Err(Error::Validation(
                "diagonal blocks must be square".into(),
            ));
        }
        if a.nrows() != p || a.ncols() != q {
            return Err(Error::Validation(format!(
                "cross block is {}×{} but the diagonal blocks give p = {}, q = {}",
                a.nrows(),
                a.ncols(),
                p,
                q
            )));
        }
        let scale = 1.0 + linalg::op_norm_sym(&dtt).max(linalg::op_norm_sym(&hnn));
        linalg::check_symmetric(&dtt, linalg::SYM_TOL * scale)?;
        linalg::check_symmetric(&hnn, linalg::SYM_TOL * scale)?;
        Ok(Self { dtt, a, hnn })
    }

    pub fn p(&self) -> usize {
        self.dtt.nrows()
    }

    pub fn q(&self) -> usize {
        self.hnn.nrows()
    }

    /// Assembles the full (p+q)×(p+q) matrix [[Dtt, A], [Aᵀ, Hnn]].
    pub fn assemble(&self) -> DMatrix<f64> {
        let p = self.p();
        let q = self.q();
        let mut full = DMatrix::zeros(p + q, p + q);
        full.view_mut((0, 0), (p, p)).copy_from(&self.dtt);
        full.view_mut((0, p), (p, q)).copy_from(&self.a);
        full.view_mut((p, 0), (q, p)).copy_from(&self.a.transpose());
        full.view_mut((p, p), (q, q)).copy_from(&self.hnn);
        full
    }

    /// The block-diagonal part [[Dtt, 0], [0, Hnn]].
    pub fn block_diagonal(&self) -> DMatrix<f64> {
        let p = self.p();
        let q = self.q();
        let mut bd = DMatrix::zeros(p + q, p + q);
        bd.view_mut((0, 0), (p, p)).copy_from(&self.dtt);
        bd.view_mut((p, p), (q, q)).copy_from(&self.hnn);
        bd
    }
}

/// The linear transform that makes the objective one-point orthogonal at a
/// reference point: τ = η + C(θ − θ_ref) with C = Hnn⁻¹Aᵀ, and the effective
/// θθ-curvature 𝔻̆² = Dtt − A·Hnn⁻¹·Aᵀ left after eliminating the nuisance.
#[derive(Clone, Debug)]
pub struct OrthoTransform {
    /// q×p reparameterization coefficient.
    pub c: DMatrix<f64>,
    /// p×p effective curvature; satisfies (1−ρ)·Dtt ⪯ D_eff² ⪯ Dtt.
    pub d_eff_sq: DMatrix<f64>,
    pub rho: f64,
}

/// The interaction strength ρ = ‖Dtt^(−1/2)·A·Hnn⁻¹·Aᵀ·Dtt^(−1/2)‖ between
/// the target and nuisance groups. The blocks separate cleanly when ρ < 1;
/// ρ = 0 means no interaction at all.
pub fn separability_rho(blocks: &BlockHessian) -> Result<f64> {
    let w = linalg::psd_inv_sqrt(&blocks.dtt)?;
    let hinv = linalg::psd_inv(&blocks.hnn)?;
    let cross = &w * &blocks.a * hinv * blocks.a.transpose() * &w;
    Ok(linalg::op_norm_sym(&cross))
}

/// Verifies the two-sided Loewner bound (1−√ρ)·blockdiag ⪯ F ⪯
/// (1+√ρ)·blockdiag by min-eigenvalue checks on the differences, with
/// relative tolerance [`SANDWICH_TOL`]. The √ρ coefficient is the operator
/// norm of the whitened cross block, so the bound is tight whenever the
/// cross block has a flat singular spectrum.
pub fn sandwich_check(f_full: &DMatrix<f64>, blocks: &BlockHessian, rho: f64) -> Result<bool> {
    let d = blocks.p() + blocks.q();
    if f_full.nrows() != d || f_full.ncols() != d {
        return Err(Error::Validation(format!(
            "full matrix is {}×{} but the blocks give dimension {}",
            f_full.nrows(),
            f_full.ncols(),
            d
        )));
    }
    if rho < 0.0 {
        return Err(Error::Validation(format!("negative rho {rho}")));
    }
    let bd = blocks.block_diagonal();
    let root = rho.sqrt();
    let upper = &bd * (1.0 + root) - f_full;
    let lower = f_full - &bd * (1.0 - root);
    let tol = SANDWICH_TOL * (1.0 + linalg::op_norm_sym(&bd));
    Ok(linalg::min_eig_sym(&upper) >= -tol && linalg::min_eig_sym(&lower) >= -tol)
}

/// Builds the one-point-orthogonality transform: C = Hnn⁻¹Aᵀ and the
/// effective curvature 𝔻̆² = Dtt − A·Hnn⁻¹·Aᵀ. After reparameterizing the
/// nuisance as τ = η + C(θ − θ_ref), the transformed objective has zero
/// mixed second derivative at the reference point.
pub fn orthogonalize(blocks: &BlockHessian) -> Result<OrthoTransform> {
    let hinv = linalg::psd_inv(&blocks.hnn)?;
    let c = &hinv * blocks.a.transpose();
    let cross = &blocks.a * hinv * blocks.a.transpose();
    let mut d_eff_sq = &blocks.dtt - cross;
    let sym = (&d_eff_sq + d_eff_sq.transpose()) * 0.5;
    d_eff_sq = sym;
    let rho = separability_rho(blocks)?;
    Ok(OrthoTransform { c, d_eff_sq, rho })
}

fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} evaluated to {value}")))
    }
}

/// Central finite-difference estimate of the mixed second-derivative block
/// ∂²f̆/∂θ∂τ (p×q) of the transformed objective f̆(θ, τ) = f(θ, τ − C(θ −
/// θ_ref)) at (θ_ref, η_ref). Near zero after [`orthogonalize`]; without the
/// transform (C = 0) it recovers the raw mixed block of f.
pub fn transformed_mixed_derivative(
    f: &dyn Fn(&DVector<f64>, &DVector<f64>) -> f64,
    transform: &OrthoTransform,
    theta_ref: &DVector<f64>,
    eta_ref: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let p = theta_ref.len();
    let q = eta_ref.len();
    if transform.c.nrows() != q || transform.c.ncols() != p {
        return Err(Error::Validation(format!(
            "transform C is {}×{} but the point gives q = {}, p = {}",
            transform.c.nrows(),
            transform.c.ncols(),
            q,
            p
        )));
    }
    let point_norm = (theta_ref.norm_squared() + eta_ref.norm_squared()).sqrt();
    let h = MIXED_FD_STEP * (1.0 + point_norm);
    let eval = |theta: &DVector<f64>, tau: &DVector<f64>| -> Result<f64> {
        let eta = tau - &transform.c * (theta - theta_ref);
        check_finite(f(theta, &eta), "transformed objective")
    };
    let mut mixed = DMatrix::zeros(p, q);
    for a in 0..p {
        let mut tp = theta_ref.clone();
        tp[a] += h;
        let mut tm = theta_ref.clone();
        tm[a] -= h;
        for b in 0..q {
            let mut up = eta_ref.clone();
            up[b] += h;
            let mut um = eta_ref.clone();
            um[b] -= h;
            let value =
                (eval(&tp, &up)? - eval(&tp, &um)? - eval(&tm, &up)? + eval(&tm, &um)?)
                    / (4.0 * h * h);
            mixed[(a, b)] = value;
        }
    }
    Ok(mixed)
}

/// Finite-difference gradient of a scalar function of θ, central two-point.
pub(crate) fn fd_gradient(
    f: &dyn Fn(&DVector<f64>) -> f64,
    theta: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let p = theta.len();
    let mut grad = DVector::zeros(p);
    for a in 0..p {
        let mut tp = theta.clone();
        tp[a] += h;
        let mut tm = theta.clone();
        tm[a] -= h;
        grad[a] = (f(&tp) - f(&tm)) / (2.0 * h);
    }
    grad
}

/// Finite-difference Hessian of a scalar function of θ, central scheme.
fn fd_hessian(f: &dyn Fn(&DVector<f64>) -> f64, theta: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let p = theta.len();
    let f0 = f(theta);
    let mut hess = DMatrix::zeros(p, p);
    for a in 0..p {
        let mut tp = theta.clone();
        tp[a] += h;
        let mut tm = theta.clone();
        tm[a] -= h;
        hess[(a, a)] = (f(&tp) - 2.0 * f0 + f(&tm)) / (h * h);
        for b in (a + 1)..p {
            let mut tpp = theta.clone();
            tpp[a] += h;
            tpp[b] += h;
            let mut tpm = theta.clone();
            tpm[a] += h;
            tpm[b] -= h;
            let mut tmp = theta.clone();
            tmp[a] -= h;
            tmp[b] += h;
            let mut tmm = theta.clone();
            tmm[a] -= h;
            tmm[b] -= h;
            let value = (f(&tpp) - f(&tpm) - f(&tmp) + f(&tmm)) / (4.0 * h * h);
            hess[(a, b)] = value;
            hess[(b, a)] = value;
        }
    }
    hess
}

/// Newton maximization of a scalar function of θ with finite-difference
/// derivatives, used as the inner solver of the semi-orthogonality and
/// concentration checks.
pub(crate) fn fd_newton_max(
    f: &dyn Fn(&DVector<f64>) -> f64,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    const MAX_ITER: usize = 100;
    const GRAD_TOL: f64 = 1e-9;
    let mut theta = start.clone();
    let mut value = check_finite(f(&theta), "inner objective")?;
    for _ in 0..MAX_ITER {
        let scale = 1.0 + theta.norm();
        let grad = fd_gradient(f, &theta, 1e-6 * scale);
        if grad.norm() <= GRAD_TOL * (1.0 + value.abs()) {
            let info = -fd_hessian(f, &theta, 1e-4 * scale);
            if linalg::min_eig_sym(&info) <= 0.0 {
                return Err(Error::Numerical(
                    "inner objective is not concave at its stationary point".into(),
                ));
            }
            return Ok(theta);
        }
        let info = -fd_hessian(f, &theta, 1e-4 * scale);
        let step = linalg::solve_spd(&info, &grad).map_err(|_| {
            Error::Numerical("inner Hessian is not negative definite".into())
        })?;
        // Newton-decrement exit: once the largest achievable improvement
        // ½·gradᵀH⁻¹grad drops below the float resolution of the objective,
        // the remaining gradient is finite-difference noise.
        let decrement = grad.dot(&step);
        if decrement <= 2.0 * f64::EPSILON * (1.0 + value.abs()) {
            return Ok(theta);
        }
        let float_slack = 8.0 * f64::EPSILON * (1.0 + value.abs());
        let mut t = 1.0;
        let mut advanced = false;
        for _ in 0..40 {
            let cand = &theta + &step * t;
            let cand_value = f(&cand);
            if cand_value.is_finite() && cand_value >= value + 1e-4 * t * decrement - float_slack {
                theta = cand;
                value = cand_value;
                advanced = true;
                break;
            }
            t *= 0.5;
        }
        if !advanced {
            return Err(Error::Numerical(
                "inner line search failed to make progress".into(),
            ));
        }
    }
    Err(Error::Numerical(format!(
        "inner Newton solver did not converge in {MAX_ITER} iterations"
    )))
}

/// For each nuisance sample τ, maximizes the transformed objective
/// f̆(·, τ) = f(·, τ − C(· − θ_ref)) over θ and returns the largest distance
/// max_τ ‖θ̂(τ) − θ_ref‖. When the transform achieves one-point
/// orthogonality and the cross block varies only through θ, the inner
/// argmax stays put and the deviation vanishes up to solver tolerance.
pub fn semiorthogonality_argmax_check(
    f: &dyn Fn(&DVector<f64>, &DVector<f64>) -> f64,
    transform: &OrthoTransform,
    theta_ref: &DVector<f64>,
    tau_samples: &[DVector<f64>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for tau in tau_samples {
        let inner = |theta: &DVector<f64>| -> f64 {
            let eta = tau - &transform.c * (theta - theta_ref);
            f(theta, &eta)
        };
        let argmax = fd_newton_max(&inner, theta_ref)?;
        worst = worst.max((&argmax - theta_ref).norm());
    }
    Ok(worst)
}

/// Bias bound for the inner target after one-point orthogonalization:
/// c₃·ν⁻²·r̄²/√n_eff·√quadform with ν = 2/3, where `f_inv_quadform` is the
/// quadratic form of the inverse information in the probed direction.
/// Quadratic objectives give c₃ = 0 and no bias.
pub fn semiparam_bias_bound(c3: f64, r_bar: f64, n_eff: f64, f_inv_quadform: f64) -> f64 {
    c3 * r_bar * r_bar / (NU * NU) / n_eff.sqrt() * f_inv_quadform.sqrt()
}

/// Separability of the target against a two-part nuisance (z, τ): returns
/// (ρ_z + ρ_τ, ρ_direct), where each pairwise ρ comes from the 2-block
/// reduction against one nuisance part and ρ_direct treats (z, τ) jointly.
/// The pairwise sum dominates ρ_direct when the two nuisance parts are
/// uncorrelated; with correlated parts it can undershoot, so callers should
/// compare the two returned values before relying on the reduction.
pub fn composite_rho(
    f_full: &DMatrix<f64>,
    dims: (usize, usize, usize),
) -> Result<(f64, f64)> {
    let (p, q1, q2) = dims;
    let d = p + q1 + q2;
    if f_full.nrows() != d || f_full.ncols() != d {
        return Err(Error::Validation(format!(
            "full matrix is {}×{} but the partition gives dimension {}",
            f_full.nrows(),
            f_full.ncols(),
            d
        )));
    }
    if p == 0 || q1 == 0 || q2 == 0 {
        return Err(Error::Validation(
            "all three partition blocks must be nonempty".into(),
        ));
    }
    let scale = 1.0 + linalg::op_norm_sym(f_full);
    linalg::check_symmetric(f_full, linalg::SYM_TOL * scale)?;
    let ftt = f_full.view((0, 0), (p, p)).into_owned();
    let ftz = f_full.view((0, p), (p, q1)).into_owned();
    let ftw = f_full.view((0, p + q1), (p, q2)).into_owned();
    let fzz = f_full.view((p, p), (q1, q1)).into_owned();
    let fww = f_full.view((p + q1, p + q1), (q2, q2)).into_owned();
    let rho_z = separability_rho(&BlockHessian::new(ftt.clone(), ftz, fzz)?)?;
    let rho_w = separability_rho(&BlockHessian::new(ftt.clone(), ftw, fww)?)?;
    let a_full = f_full.view((0, p), (p, q1 + q2)).into_owned();
    let hnn_full = f_full.view((p, p), (q1 + q2, q1 + q2)).into_owned();
    let direct = separability_rho(&BlockHessian::new(ftt, a_full, hnn_full)?)?;
    Ok((rho_z + rho_w, direct))
}

/// Exact shift of the partial argmax of a quadratic objective when the
/// nuisance moves: argmax_θ f(θ, η* + dev) − argmax_θ f(θ, η*) =
/// −Dtt⁻¹·A·dev.
pub fn partial_quad_shift(
    blocks: &BlockHessian,
    eta_dev: &DVector<f64>,
) -> Result<DVector<f64>> {
    if eta_dev.len() != blocks.q() {
        return Err(Error::Validation(format!(
            "nuisance deviation has length {} but q = {}",
            eta_dev.len(),
            blocks.q()
        )));
    }
    let rhs = &blocks.a * eta_dev;
    Ok(-linalg::solve_spd(&blocks.dtt, &rhs)?)
}
