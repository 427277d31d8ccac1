//! The calmed extension of penalized nonlinear regression.
//!
//! Instead of fitting θ against the smoothed observations directly, a free
//! image variable η is matched to both the data and the smoothed model
//! image M̄(θ) = Φm(θ) through the joint log-likelihood
//!
//!   L_G(θ, η) = −½‖Z − η‖² − ½‖M̄(θ) − η‖² − ½‖Gθ‖².
//!
//! The η-maximization is explicit, the profile in θ is a penalized
//! least-squares criterion with a doubled penalty, and the information
//! matrix keeps its block interaction below 1/2. This module provides the
//! solvers, the effective score and dimension of the profile estimator, and
//! the finite-sample Fisher and Wilks error bounds with their validity
//! conditions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::model::{smoothed_map, LocalSet, RegressionModel, Smoother};
use crate::semiparam::{BlockHessian, NU};
use crate::{Error, Result};

/// Default tolerance on the gradient norm for the fitting loops, applied
/// relative to 1 + ‖Z‖.
pub const FIT_TOL: f64 = 1e-10;

/// Default iteration cap for the fitting loops.
pub const FIT_MAX_ITER: usize = 200;

/// Armijo sufficient-decrease constant for backtracking line searches.
pub const ARMIJO_C: f64 = 1e-4;

/// Relative floor on the smallest eigenvalue of the Gauss-Newton normal
/// matrix; below it the step is refused as numerically singular.
pub const NORMAL_FLOOR: f64 = 1e-12;

/// Absolute slack used when comparing residuals against bounds that can be
/// exactly zero in the quadratic case.
const BOUND_SLACK: f64 = 1e-10;

/// A penalized regression problem in its calmed form: the model and
/// smoother define M̄(θ) = Φm(θ), `g_sq` is the penalty matrix G² (the
/// profile criterion carries 2G²), `z` holds the smoothed observations
/// Φy, and `local` is the neighbourhood the curvature certificates refer
/// to.
#[derive(Clone)]
pub struct CalmedProblem {
    pub model: Arc<dyn RegressionModel>,
    pub smoother: Smoother,
    pub g_sq: DMatrix<f64>,
    pub z: DVector<f64>,
    pub local: LocalSet,
}

impl CalmedProblem {
    pub fn new(
        model: Arc<dyn RegressionModel>,
        smoother: Smoother,
        g_sq: DMatrix<f64>,
        z: DVector<f64>,
        local: LocalSet,
    ) -> Result<Self> {
        let p = model.p();
        if smoother.n() != model.n() {
            return Err(Error::Validation(format!(
                "smoother has {} columns but the model has n = {}",
                smoother.n(),
                model.n()
            )));
        }
        if g_sq.nrows() != p || g_sq.ncols() != p {
            return Err(Error::Validation(format!(
                "penalty matrix is {}×{} but p = {}",
                g_sq.nrows(),
                g_sq.ncols(),
                p
            )));
        }
        let scale = 1.0 + linalg::op_norm_sym(&g_sq);
        linalg::check_symmetric(&g_sq, linalg::SYM_TOL * scale)?;
        if linalg::min_eig_sym(&g_sq) < -linalg::SYM_TOL * scale {
            return Err(Error::Validation(
                "penalty matrix has a negative eigenvalue".into(),
            ));
        }
        if z.len() != smoother.q() {
            return Err(Error::Validation(format!(
                "observation vector has length {} but the smoother gives q = {}",
                z.len(),
                smoother.q()
            )));
        }
        if local.theta0.len() != p {
            return Err(Error::Validation(format!(
                "local set is anchored in dimension {} but p = {}",
                local.theta0.len(),
                p
            )));
        }
        Ok(Self {
            model,
            smoother,
            g_sq,
            z,
            local,
        })
    }

    pub fn p(&self) -> usize {
        self.model.p()
    }

    pub fn q(&self) -> usize {
        self.smoother.q()
    }

    /// The same problem with a fresh observation vector, for repeated
    /// draws against one configuration.
    pub fn with_observations(&self, z: DVector<f64>) -> Result<Self> {
        if z.len() != self.q() {
            return Err(Error::Validation(format!(
                "observation vector has length {} but q = {}",
                z.len(),
                self.q()
            )));
        }
        let mut next = self.clone();
        next.z = z;
        Ok(next)
    }

    fn smoothed_image(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.p() {
            return Err(Error::Validation(format!(
                "θ has length {} but p = {}",
                theta.len(),
                self.p()
            )));
        }
        Ok(&self.smoother.matrix * self.model.value(theta))
    }

    fn penalty_quadform(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.g_sq * theta))
    }
}

/// A point of the extended parameter space (θ, η).
#[derive(Clone, Debug)]
pub struct ExtendedPoint {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
}

/// Step-by-step record of a fitting run. `objectives` holds the criterion
/// value at the start of each iteration plus the final value, and is
/// nonincreasing by line-search construction.
#[derive(Clone, Debug)]
pub struct FitTrace {
    pub objectives: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Curvature summary of the calmed problem at a reference point.
#[derive(Clone, Debug)]
pub struct InfoPack {
    /// 𝔻² = ∇M̄∇M̄ᵀ.
    pub d_sq: DMatrix<f64>,
    /// The doubled penalty block 2G² seen by the profile criterion.
    pub gg_sq: DMatrix<f64>,
    /// Profile information 𝔻_𝔾² = 𝔻² + 2G².
    pub d_gg_sq: DMatrix<f64>,
    /// Blocks of −∇²L_G at (θ_ref, η̃(θ_ref)): the θθ-block carries a
    /// single G² plus the second-derivative correction, the cross block is
    /// −∇M̄, and the ηη-block is 2I.
    pub full_blocks: BlockHessian,
    /// True when the θθ-block omits the curvature correction because the
    /// model does not expose weighted Hessians.
    pub gn_approximated: bool,
}

/// Effective score and dimension of the profile estimator at a reference
/// point: ξ_𝔾 = 𝔻_𝔾⁻¹∇M̄·Φε for a concrete noise draw, B_𝔾 its covariance,
/// p_𝔾 = tr B_𝔾, and the deviation radius r_𝔾 at the level `x`.
#[derive(Clone, Debug)]
pub struct ScoreReport {
    pub xi_gg: DVector<f64>,
    pub b_gg: DMatrix<f64>,
    pub p_gg: f64,
    pub r_gg: f64,
    pub x: f64,
}

impl ScoreReport {
    /// Attaches a concrete score draw to a dimension report.
    pub fn with_score(mut self, xi_gg: DVector<f64>) -> Self {
        self.xi_gg = xi_gg;
        self
    }
}

/// Constants entering the Fisher and Wilks error bounds: the third-order
/// curvature multiplier c₃, the certified smoothness τ, and the
/// localization product ϱ = 2r₀τ.
#[derive(Clone, Copy, Debug)]
pub struct EstimationConsts {
    pub c3: f64,
    pub tau: f64,
    pub varrho: f64,
}

/// Finite-sample expansion errors of one estimate against their bounds.
/// `conditions_met` records whether ω_𝔾 ≤ 1/3 and ϱ < 1/2; outside that
/// range the residuals are still reported but the bounds turn infinite at
/// ω_𝔾 ≥ 1 or ϱ ≥ 1/2.
#[derive(Clone, Debug)]
pub struct FisherWilksReport {
    pub fisher_residual: f64,
    pub fisher_bound: f64,
    pub wilks_residual: f64,
    pub wilks_bound: f64,
    pub omega_gg: f64,
    pub fisher_ok: bool,
    pub wilks_ok: bool,
    pub conditions_met: bool,
}

/// Penalty-induced bias of the profile estimator and the resulting risk
/// prediction.
#[derive(Clone, Debug)]
pub struct BiasRisk {
    /// First-order bias approximation −𝔻_𝔾⁻²·2G²θ*, exact for linear
    /// models.
    pub bias_vec_approx: DVector<f64>,
    /// 𝚋_𝔾 = ‖𝔻_𝔾⁻¹·2G²θ*‖.
    pub b_gg: f64,
    /// Curvature correction δ*_𝔾 = ν⁻¹·c₃·τ·𝚋_𝔾 to the bias expansion.
    pub delta_star: f64,
    /// Bound on ‖𝔻_𝔾(θ̃ − θ*)‖: (1 + δ_𝔾)‖ξ_𝔾‖ + 𝚋_𝔾/(1 − δ*_𝔾).
    pub bias_norm_bound: f64,
    /// Predicted quadratic risk 𝔼‖𝔻_𝔾(θ̃ − θ*)‖² ≈ p_𝔾 + 𝚋_𝔾².
    pub risk_prediction: f64,
    /// δ*_𝔾 ≤ 1/3, required for the expansion to be meaningful.
    pub conditions_met: bool,
}

/// The joint log-likelihood L_G(θ, η).
pub fn extended_loglik(prob: &CalmedProblem, point: &ExtendedPoint) -> Result<f64> {
    if point.eta.len() != prob.q() {
        return Err(Error::Validation(format!(
            "η has length {} but q = {}",
            point.eta.len(),
            prob.q()
        )));
    }
    let m_bar = prob.smoothed_image(&point.theta)?;
    let data = (&prob.z - &point.eta).norm_squared();
    let image = (m_bar - &point.eta).norm_squared();
    Ok(-0.5 * (data + image + prob.penalty_quadform(&point.theta)))
}

/// The exact η-maximizer η̃(θ) = ½(Z + M̄(θ)) of L_G at fixed θ. It solves
/// the stationarity equation (Z − η) + (M̄(θ) − η) = 0 exactly.
pub fn eta_partial(prob: &CalmedProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok((&prob.z + prob.smoothed_image(theta)?) * 0.5)
}

/// The profile criterion ‖Z − M̄(θ)‖² + 2θᵀG²θ. Minimizing it is
/// equivalent to maximizing sup_η L_G(θ, η) = −¼ of this value; the Wilks
/// statistics below use 𝕃_G(θ) = −½ of it so that twice the log-likelihood
/// difference matches ‖ξ_𝔾‖² in the quadratic case.
pub fn profile_objective(prob: &CalmedProblem, theta: &DVector<f64>) -> Result<f64> {
    let m_bar = prob.smoothed_image(theta)?;
    Ok((&prob.z - m_bar).norm_squared() + 2.0 * prob.penalty_quadform(theta))
}

/// Objective, gradient, residual Z − M̄ and Jacobian ∇M̄ in one pass.
fn profile_parts(
    prob: &CalmedProblem,
    theta: &DVector<f64>,
) -> Result<(f64, DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let (m_bar, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, theta)?;
    let resid = &prob.z - m_bar;
    let objective = resid.norm_squared() + 2.0 * prob.penalty_quadform(theta);
    if !objective.is_finite() {
        return Err(Error::Numerical(format!(
            "profile criterion evaluated to {objective}"
        )));
    }
    let grad = &j_bar * &resid * (-2.0) + (&prob.g_sq * theta) * 4.0;
    Ok((objective, grad, resid, j_bar))
}

/// One Gauss-Newton step of the profile criterion:
/// θ₊ = θ + (∇M̄∇M̄ᵀ + 2G²)⁻¹[∇M̄(Z − M̄) − 2G²θ].
pub fn gauss_newton_step(prob: &CalmedProblem, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let (_, grad, _, j_bar) = profile_parts(prob, theta)?;
    let step = gn_direction(prob, &grad, &j_bar)?;
    Ok(theta + step)
}

fn gn_direction(
    prob: &CalmedProblem,
    grad: &DVector<f64>,
    j_bar: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let normal = j_bar * j_bar.transpose() + &prob.g_sq * 2.0;
    let min_eig = linalg::min_eig_sym(&normal);
    if min_eig <= NORMAL_FLOOR * normal.trace() {
        return Err(Error::Numerical(format!(
            "normal matrix is numerically singular: smallest eigenvalue {min_eig}"
        )));
    }
    linalg::solve_spd(&normal, &(grad * -0.5))
}

/// Minimizes the profile criterion by Gauss-Newton with a backtracking
/// line search (halving steps, Armijo constant [`ARMIJO_C`]). Stops when
/// ‖∇‖ ≤ tol·(1 + ‖Z‖). Non-convergence within `max_iter` is reported
/// through the trace, not as an error; a stalled line search is an error.
pub fn fit_profile(
    prob: &CalmedProblem,
    theta_init: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, FitTrace)> {
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }
    let gate = tol * (1.0 + prob.z.norm());
    let mut theta = theta_init.clone();
    let mut trace = FitTrace {
        objectives: Vec::new(),
        grad_norms: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let (mut objective, mut grad, _, mut j_bar) = profile_parts(prob, &theta)?;
    for _ in 0..max_iter {
        trace.objectives.push(objective);
        trace.grad_norms.push(grad.norm());
        if grad.norm() <= gate {
            trace.converged = true;
            return Ok((theta, trace));
        }
        let step = gn_direction(prob, &grad, &j_bar)?;
        let slope = grad.dot(&step);
        // Near the minimum the predicted decrease drops below the floating
        // resolution of the criterion; the epsilon term keeps the full
        // Gauss-Newton step acceptable there.
        let float_slack = 8.0 * f64::EPSILON * (1.0 + objective.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let cand_obj = profile_objective(prob, &cand)?;
            if cand_obj <= objective + ARMIJO_C * t * slope + float_slack {
                theta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numerical(
                "line search stalled: no step length gave sufficient decrease".into(),
            ));
        }
        trace.iterations += 1;
        let parts = profile_parts(prob, &theta)?;
        objective = parts.0;
        grad = parts.1;
        j_bar = parts.3;
    }
    trace.objectives.push(objective);
    trace.grad_norms.push(grad.norm());
    trace.converged = grad.norm() <= gate;
    Ok((theta, trace))
}

/// Maximizes L_G over (θ, η) by alternating the exact η-step with a
/// Gauss-Newton θ-step at fixed η. The trace records −2·L_G. The θ-part
/// of the maximizer coincides with the profile minimizer.
pub fn fit_joint(
    prob: &CalmedProblem,
    init: &ExtendedPoint,
    tol: f64,
    max_iter: usize,
) -> Result<(ExtendedPoint, FitTrace)> {
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("tolerance must be positive, got {tol}")));
    }
    if init.eta.len() != prob.q() {
        return Err(Error::Validation(format!(
            "η has length {} but q = {}",
            init.eta.len(),
            prob.q()
        )));
    }
    let gate = tol * (1.0 + prob.z.norm());
    let mut theta = init.theta.clone();
    let mut trace = FitTrace {
        objectives: Vec::new(),
        grad_norms: Vec::new(),
        iterations: 0,
        converged: false,
    };
    for _ in 0..max_iter {
        let eta = eta_partial(prob, &theta)?;
        let point = ExtendedPoint {
            theta: theta.clone(),
            eta: eta.clone(),
        };
        let value = -2.0 * extended_loglik(prob, &point)?;
        // After the exact η-step, ∇_η L_G vanishes; only the θ-gradient of
        // the joint objective h(θ) = ½‖M̄(θ)−η‖² + ½θᵀG²θ remains.
        let (m_bar, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, &theta)?;
        let grad = &j_bar * (&m_bar - &eta) + &prob.g_sq * &theta;
        trace.objectives.push(value);
        trace.grad_norms.push(grad.norm());
        if grad.norm() <= gate {
            trace.converged = true;
            return Ok((point, trace));
        }
        let normal = &j_bar * j_bar.transpose() + &prob.g_sq;
        let min_eig = linalg::min_eig_sym(&normal);
        if min_eig <= NORMAL_FLOOR * normal.trace() {
            return Err(Error::Numerical(format!(
                "normal matrix is numerically singular: smallest eigenvalue {min_eig}"
            )));
        }
        let step = linalg::solve_spd(&normal, &(-&grad))?;
        let h = |th: &DVector<f64>| -> Result<f64> {
            let image = prob.smoothed_image(th)?;
            Ok(0.5 * (image - &eta).norm_squared() + 0.5 * prob.penalty_quadform(th))
        };
        let base = h(&theta)?;
        let slope = grad.dot(&step);
        let float_slack = 8.0 * f64::EPSILON * (1.0 + base.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            if h(&cand)? <= base + ARMIJO_C * t * slope + float_slack {
                theta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Numerical(
                "line search stalled: no step length gave sufficient decrease".into(),
            ));
        }
        trace.iterations += 1;
    }
    let eta = eta_partial(prob, &theta)?;
    let point = ExtendedPoint {
        theta: theta.clone(),
        eta: eta.clone(),
    };
    let (m_bar, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, &theta)?;
    let grad = &j_bar * (&m_bar - &eta) + &prob.g_sq * &theta;
    trace.objectives.push(-2.0 * extended_loglik(prob, &point)?);
    trace.grad_norms.push(grad.norm());
    trace.converged = grad.norm() <= gate;
    Ok((point, trace))
}

/// The noiseless target of the calmed estimator: fits the problem with
/// Z replaced by Φm* and returns (θ*_G, η*_G) with η*_G = ½(Φm* +
/// M̄(θ*_G)). `m_star` is the raw image m(θ*) ∈ ℝⁿ.
pub fn population_target(
    prob: &CalmedProblem,
    m_star: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if m_star.len() != prob.model.n() {
        return Err(Error::Validation(format!(
            "population image has length {} but n = {}",
            m_star.len(),
            prob.model.n()
        )));
    }
    let noiseless = prob.with_observations(&prob.smoother.matrix * m_star)?;
    let (theta_g, trace) = fit_profile(&noiseless, &prob.local.theta0, FIT_TOL, FIT_MAX_ITER)?;
    if !trace.converged {
        return Err(Error::Numerical(format!(
            "population fit did not converge in {FIT_MAX_ITER} iterations (last gradient norm {:.3e})",
            trace.grad_norms.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let eta_g = eta_partial(&noiseless, &theta_g)?;
    Ok((theta_g, eta_g))
}

/// Curvature blocks of the calmed problem at θ_ref, with η at its partial
/// maximizer η̃(θ_ref). The θθ-block of the full Hessian carries a single
/// G² and the second-derivative correction Σⱼ(M̄ⱼ−η̃ⱼ)∇²M̄ⱼ, evaluated
/// through the model's weighted Hessian with weights Φᵀ(M̄−η̃); the
/// correction vanishes at any θ with M̄(θ) = η̃.
pub fn info_pack(prob: &CalmedProblem, theta_ref: &DVector<f64>) -> Result<InfoPack> {
    let (m_bar, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, theta_ref)?;
    let d_sq = symmetrized(&j_bar * j_bar.transpose());
    let gg_sq = &prob.g_sq * 2.0;
    let d_gg_sq = symmetrized(&d_sq + &gg_sq);
    let eta = (&prob.z + &m_bar) * 0.5;
    let weights = prob.smoother.matrix.transpose() * (&m_bar - &eta);
    let correction = prob.model.weighted_hessian(theta_ref, &weights);
    let gn_approximated = correction.is_none();
    let mut dtt = &d_sq + &prob.g_sq;
    if let Some(c) = correction {
        if c.nrows() != prob.p() || c.ncols() != prob.p() {
            return Err(Error::Validation(format!(
                "weighted Hessian is {}×{} but p = {}",
                c.nrows(),
                c.ncols(),
                prob.p()
            )));
        }
        dtt += c;
    }
    let full_blocks = BlockHessian::new(
        symmetrized(dtt),
        -j_bar,
        DMatrix::identity(prob.q(), prob.q()) * 2.0,
    )?;
    Ok(InfoPack {
        d_sq,
        gg_sq,
        d_gg_sq,
        full_blocks,
        gn_approximated,
    })
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// The effective score ξ_𝔾 = 𝔻_𝔾⁻¹∇M̄(θ_ref)·Φε of one noise draw, where
/// 𝔻_𝔾 is the PSD square root of ∇M̄∇M̄ᵀ + 2G² and `eps_smoothed` = Φε.
pub fn effective_score(
    prob: &CalmedProblem,
    theta_ref: &DVector<f64>,
    eps_smoothed: &DVector<f64>,
) -> Result<DVector<f64>> {
    if eps_smoothed.len() != prob.q() {
        return Err(Error::Validation(format!(
            "smoothed noise has length {} but q = {}",
            eps_smoothed.len(),
            prob.q()
        )));
    }
    let (_, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, theta_ref)?;
    let d_gg_sq = symmetrized(&j_bar * j_bar.transpose() + &prob.g_sq * 2.0);
    let root_inv = linalg::psd_inv_sqrt(&d_gg_sq)?;
    Ok(root_inv * (j_bar * eps_smoothed))
}

/// Covariance, effective dimension and deviation radius of the effective
/// score: B_𝔾 = 𝔻_𝔾⁻¹∇M̄·V²·∇M̄ᵀ·𝔻_𝔾⁻¹ for the smoothed-noise covariance
/// V² (q×q), p_𝔾 = tr B_𝔾 and r_𝔾 = √p_𝔾 + √(2x‖B_𝔾‖). The returned
/// report carries a zero score; attach a draw with
/// [`ScoreReport::with_score`].
pub fn effective_dimension(
    prob: &CalmedProblem,
    theta_ref: &DVector<f64>,
    v_sq: &DMatrix<f64>,
    x: f64,
) -> Result<ScoreReport> {
    if v_sq.nrows() != prob.q() || v_sq.ncols() != prob.q() {
        return Err(Error::Validation(format!(
            "noise covariance is {}×{} but q = {}",
            v_sq.nrows(),
            v_sq.ncols(),
            prob.q()
        )));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("deviation level x must be positive, got {x}")));
    }
    let (_, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, theta_ref)?;
    let d_gg_sq = symmetrized(&j_bar * j_bar.transpose() + &prob.g_sq * 2.0);
    let root_inv = linalg::psd_inv_sqrt(&d_gg_sq)?;
    let b_gg = symmetrized(&root_inv * &j_bar * v_sq * j_bar.transpose() * &root_inv);
    let p_gg = b_gg.trace();
    let b_norm = linalg::op_norm_sym(&b_gg);
    let r_gg = p_gg.sqrt() + (2.0 * x * b_norm).sqrt();
    Ok(ScoreReport {
        xi_gg: DVector::zeros(prob.p()),
        b_gg,
        p_gg,
        r_gg,
        x,
    })
}

/// The third-order curvature multiplier c₃ = 16/((1−2ϱ)^(3/2)(1−ω⁺)³)
/// entering ω_𝔾 = ν⁻¹·c₃·τ·r_𝔾.
pub fn c3_constant(varrho: f64, omega_plus: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&varrho) {
        return Err(Error::ConditionsUnmet(format!(
            "ϱ = {varrho} is outside [0, 1/2)"
        )));
    }
    if !(0.0..1.0).contains(&omega_plus) {
        return Err(Error::ConditionsUnmet(format!(
            "ω⁺ = {omega_plus} is outside [0, 1)"
        )));
    }
    Ok(16.0 / ((1.0 - 2.0 * varrho).powf(1.5) * (1.0 - omega_plus).powi(3)))
}

pub(crate) fn fisher_factor(omega: f64, varrho: f64) -> f64 {
    if omega >= 1.0 || varrho >= 0.5 {
        f64::INFINITY
    } else {
        2.0 * ((2.0 * omega).sqrt() + varrho) / (1.0 - 2.0 * varrho)
    }
}

/// Compares one estimate θ̃ against the Fisher and Wilks expansions around
/// θ*_G. The residuals are always computed; the bounds use ω_𝔾 =
/// ν⁻¹·c₃·τ·r_𝔾 and turn infinite at ω_𝔾 ≥ 1 or ϱ ≥ 1/2. `conditions_met`
/// reports the theorem's own validity range ω_𝔾 ≤ 1/3, ϱ < 1/2.
pub fn fisher_wilks_report(
    prob: &CalmedProblem,
    theta_tilde: &DVector<f64>,
    theta_star_g: &DVector<f64>,
    score: &ScoreReport,
    consts: &EstimationConsts,
) -> Result<FisherWilksReport> {
    let (_, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, theta_star_g)?;
    let d_gg_sq = symmetrized(&j_bar * j_bar.transpose() + &prob.g_sq * 2.0);
    let root = linalg::psd_sqrt(&d_gg_sq)?;
    let fisher_residual = (&root * (theta_tilde - theta_star_g) - &score.xi_gg).norm();
    let xi_norm = score.xi_gg.norm();
    // 2𝕃_G(θ̃) − 2𝕃_G(θ*_G) with 𝕃_G = −½·profile criterion.
    let excess =
        profile_objective(prob, theta_star_g)? - profile_objective(prob, theta_tilde)?;
    let wilks_residual = (excess - xi_norm * xi_norm).abs();
    let omega_gg = consts.c3 * consts.tau * score.r_gg / NU;
    let varrho = consts.varrho;
    let fisher_bound = if omega_gg.is_finite() {
        fisher_factor(omega_gg, varrho) * xi_norm
    } else {
        f64::INFINITY
    };
    let wilks_bound = if omega_gg < 1.0 && varrho < 0.5 {
        xi_norm * xi_norm * (omega_gg / (1.0 - omega_gg) + varrho / (1.0 - 2.0 * varrho))
    } else {
        f64::INFINITY
    };
    let fisher_slack = BOUND_SLACK * (1.0 + xi_norm);
    let wilks_slack = BOUND_SLACK * (1.0 + xi_norm * xi_norm);
    Ok(FisherWilksReport {
        fisher_residual,
        fisher_bound,
        wilks_residual,
        wilks_bound,
        omega_gg,
        fisher_ok: fisher_residual <= fisher_bound + fisher_slack,
        wilks_ok: wilks_residual <= wilks_bound + wilks_slack,
        conditions_met: omega_gg <= 1.0 / 3.0 && varrho < 0.5,
    })
}

/// Penalty-induced bias and predicted risk of the profile estimator at the
/// true parameter θ*. The reference point `theta_ref` (typically θ*_G)
/// anchors the information matrix; `score` supplies p_𝔾 and the draw's
/// ‖ξ_𝔾‖ for the deviation bound.
pub fn bias_and_risk_bounds(
    prob: &CalmedProblem,
    theta_star: &DVector<f64>,
    theta_ref: &DVector<f64>,
    score: &ScoreReport,
    consts: &EstimationConsts,
) -> Result<BiasRisk> {
    if theta_star.len() != prob.p() {
        return Err(Error::Validation(format!(
            "θ* has length {} but p = {}",
            theta_star.len(),
            prob.p()
        )));
    }
    let (_, j_bar) = smoothed_map(prob.model.as_ref(), &prob.smoother, theta_ref)?;
    let d_gg_sq = symmetrized(&j_bar * j_bar.transpose() + &prob.g_sq * 2.0);
    let doubled_pen = (&prob.g_sq * theta_star) * 2.0;
    let root_inv = linalg::psd_inv_sqrt(&d_gg_sq)?;
    let b_gg = (&root_inv * &doubled_pen).norm();
    let bias_vec_approx = -(&root_inv * &root_inv * &doubled_pen);
    let delta_star = consts.c3 * consts.tau * b_gg / NU;
    let omega_gg = consts.c3 * consts.tau * score.r_gg / NU;
    let delta_gg = fisher_factor(omega_gg, consts.varrho);
    let xi_norm = score.xi_gg.norm();
    let bias_norm_bound = if delta_star < 1.0 && delta_gg.is_finite() {
        (1.0 + delta_gg) * xi_norm + b_gg / (1.0 - delta_star)
    } else {
        f64::INFINITY
    };
    Ok(BiasRisk {
        bias_vec_approx,
        b_gg,
        delta_star,
        bias_norm_bound,
        risk_prediction: score.p_gg + b_gg * b_gg,
        conditions_met: delta_star <= 1.0 / 3.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fixture_by_name, ScalarSquareModel};
    use crate::rng::CounterRng;

    fn scalar_square_problem(z: f64, g_sq: f64) -> CalmedProblem {
        let model: Arc<dyn RegressionModel> = Arc::new(ScalarSquareModel);
        let theta0 = DVector::from_element(1, 1.0);
        let local = LocalSet::new(
            theta0,
            DMatrix::from_element(1, 1, 4.0),
            1.0,
            1.0,
        )
        .unwrap();
        CalmedProblem::new(
            model,
            Smoother::identity(1),
            DMatrix::from_element(1, 1, g_sq),
            DVector::from_element(1, z),
            local,
        )
        .unwrap()
    }

    fn fixture_problem(
        name: &str,
        n: usize,
        g_scale: f64,
        seed: u64,
        sigma: f64,
    ) -> (CalmedProblem, DVector<f64>, DVector<f64>) {
        let fx = fixture_by_name(name, n, seed).unwrap();
        let model: Arc<dyn RegressionModel> = Arc::from(fx.model);
        let m_star = model.value(&fx.theta_star);
        let smoother = Smoother::identity(model.n());
        let p = model.p();
        let mut rng = CounterRng::new(seed, 77);
        let noise = DVector::from_fn(model.n(), |_, _| sigma * rng.normal());
        let z = &m_star + &noise;
        let j0 = model.jacobian(&fx.theta_star);
        let d0_sq = &j0 * j0.transpose();
        let local = LocalSet::new(fx.theta_star.clone(), d0_sq, 0.5, 1.0).unwrap();
        let prob = CalmedProblem::new(
            model,
            smoother,
            DMatrix::identity(p, p) * g_scale,
            z,
            local,
        )
        .unwrap();
        (prob, fx.theta_star, m_star)
    }

    #[test]
    fn loglik_hand_values() {
        let prob = scalar_square_problem(3.0, 0.0);
        let point = ExtendedPoint {
            theta: DVector::from_element(1, 1.0),
            eta: DVector::from_element(1, 1.0),
        };
        // −½(3−1)² − ½(1−1)² = −2.
        assert_eq!(extended_loglik(&prob, &point).unwrap(), -2.0);
        let penalized = scalar_square_problem(3.0, 2.0);
        // Extra −½·θᵀG²θ = −1.
        assert_eq!(extended_loglik(&penalized, &point).unwrap(), -3.0);
    }

    #[test]
    fn eta_step_is_exactly_stationary() {
        let (prob, theta_star, _) = fixture_problem("sine", 24, 0.1, 3, 0.2);
        let eta = eta_partial(&prob, &theta_star).unwrap();
        let m_bar = &prob.smoother.matrix * prob.model.value(&theta_star);
        let resid = (&prob.z - &eta) + (&m_bar - &eta);
        // Exact up to one rounding of z + m̄ per component.
        let scale = prob.z.norm() + m_bar.norm();
        assert!(resid.norm() <= 4.0 * f64::EPSILON * scale);
    }

    #[test]
    fn profile_is_scaled_loglik_at_partial_eta() {
        for (name, g) in [("linear", 0.3), ("exp-decay", 0.05), ("sine", 0.0)] {
            let (prob, theta_star, _) = fixture_problem(name, 30, g, 9, 0.1);
            for shift in [0.0, 0.05, -0.08] {
                let theta = theta_star.map(|v| v + shift);
                let eta = eta_partial(&prob, &theta).unwrap();
                let value = extended_loglik(
                    &prob,
                    &ExtendedPoint {
                        theta: theta.clone(),
                        eta,
                    },
                )
                .unwrap();
                let objective = profile_objective(&prob, &theta).unwrap();
                assert!(
                    (value + 0.25 * objective).abs() <= 1e-12 * (1.0 + objective.abs()),
                    "{name}: L = {value}, criterion = {objective}"
                );
            }
        }
    }

    #[test]
    fn gauss_newton_scalar_hand_value() {
        let prob = scalar_square_problem(4.0, 0.0);
        let next = gauss_newton_step(&prob, &DVector::from_element(1, 1.0)).unwrap();
        // J = 2θ = 2, normal = 4, rhs = 2·(4−1) = 6, step = 1.5.
        assert!((next[0] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn gauss_newton_rejects_flat_normal_matrix() {
        let prob = scalar_square_problem(4.0, 0.0);
        let err = gauss_newton_step(&prob, &DVector::from_element(1, 0.0)).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("smallest eigenvalue")),
            other => panic!("expected a numerical error, got {other:?}"),
        }
    }

    #[test]
    fn linear_profile_matches_closed_form() {
        let (prob, _, _) = fixture_problem("linear", 40, 0.8, 5, 0.3);
        let j = prob.model.jacobian(&DVector::zeros(4));
        let a = &j * prob.smoother.matrix.transpose();
        let normal = &a * a.transpose() + &prob.g_sq * 2.0;
        let closed = linalg::solve_spd(&normal, &(&a * &prob.z)).unwrap();
        let init = DVector::from_vec(vec![0.3, 0.1, -0.2, 0.4]);
        let (theta, trace) = fit_profile(&prob, &init, FIT_TOL, FIT_MAX_ITER).unwrap();
        assert!(trace.converged);
        assert!(trace.iterations <= 2, "took {} iterations", trace.iterations);
        assert!((theta - closed).norm() < 1e-10);
    }

    #[test]
    fn profile_fit_is_monotone_on_curved_models() {
        for name in ["exp-decay", "sine"] {
            let (prob, theta_star, _) = fixture_problem(name, 60, 0.02, 11, 0.15);
            let init = theta_star.map(|v| v + 0.15);
            let (theta, trace) = fit_profile(&prob, &init, FIT_TOL, FIT_MAX_ITER).unwrap();
            assert!(trace.converged, "{name} did not converge");
            for w in trace.objectives.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()),
                    "{name}: criterion increased from {} to {}",
                    w[0],
                    w[1]
                );
            }
            let final_obj = profile_objective(&prob, &theta).unwrap();
            let init_obj = profile_objective(&prob, &init).unwrap();
            assert!(final_obj <= init_obj);
        }
    }

    #[test]
    fn joint_fit_agrees_with_profile() {
        for (name, g) in [("linear", 0.5), ("exp-decay", 0.03), ("sine", 0.02)] {
            for seed in [0, 1, 2] {
                let (prob, theta_star, _) = fixture_problem(name, 36, g, seed, 0.1);
                let init = theta_star.map(|v| v + 0.1);
                let (theta_p, _) = fit_profile(&prob, &init, FIT_TOL, FIT_MAX_ITER).unwrap();
                let start = ExtendedPoint {
                    theta: init.clone(),
                    eta: prob.z.clone(),
                };
                let (joint, trace) = fit_joint(&prob, &start, FIT_TOL, FIT_MAX_ITER).unwrap();
                assert!(trace.converged, "{name}/{seed} joint fit did not converge");
                assert!(
                    (&joint.theta - &theta_p).norm() <= 1e-8,
                    "{name}/{seed}: joint and profile differ by {}",
                    (&joint.theta - &theta_p).norm()
                );
                let eta = eta_partial(&prob, &joint.theta).unwrap();
                assert!((&joint.eta - eta).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn population_target_recovers_truth_without_penalty() {
        let (prob, theta_star, m_star) = fixture_problem("exp-decay", 40, 0.0, 2, 0.2);
        let (theta_g, eta_g) = population_target(&prob, &m_star).unwrap();
        assert!((&theta_g - &theta_star).norm() < 1e-8);
        let target_image = &prob.smoother.matrix * &m_star;
        assert!((eta_g - target_image).norm() < 1e-8);
    }

    #[test]
    fn population_target_linear_closed_form() {
        let (prob, theta_star, m_star) = fixture_problem("linear", 32, 1.2, 8, 0.3);
        let (theta_g, eta_g) = population_target(&prob, &m_star).unwrap();
        let j = prob.model.jacobian(&theta_star);
        let a = &j * prob.smoother.matrix.transpose();
        let z_star = &prob.smoother.matrix * &m_star;
        let normal = &a * a.transpose() + &prob.g_sq * 2.0;
        let closed = linalg::solve_spd(&normal, &(&a * &z_star)).unwrap();
        assert!((&theta_g - closed).norm() < 1e-9);
        let m_bar_g = &prob.smoother.matrix * prob.model.value(&theta_g);
        assert!((eta_g - (z_star + m_bar_g) * 0.5).norm() < 1e-12);
    }

    #[test]
    fn info_pack_linear_blocks_are_exact() {
        let (prob, theta_star, _) = fixture_problem("linear", 28, 0.7, 4, 0.25);
        let pack = info_pack(&prob, &theta_star).unwrap();
        assert!(!pack.gn_approximated);
        let j = prob.model.jacobian(&theta_star);
        let a = &j * prob.smoother.matrix.transpose();
        let d_sq = &a * a.transpose();
        assert!((&pack.d_sq - &d_sq).norm() < 1e-10);
        assert!((&pack.d_gg_sq - (&d_sq + &prob.g_sq * 2.0)).norm() < 1e-10);
        // Linear models have no curvature correction: Dtt = 𝔻² + G².
        assert!((&pack.full_blocks.dtt - (&d_sq + &prob.g_sq)).norm() < 1e-10);
        assert!((&pack.full_blocks.a + &a).norm() < 1e-12);
        let two_i = DMatrix::identity(prob.q(), prob.q()) * 2.0;
        assert!((&pack.full_blocks.hnn - two_i).norm() == 0.0);
    }

    #[test]
    fn info_pack_matches_fd_hessian_on_sine() {
        let (prob, theta_star, _) = fixture_problem("sine", 16, 0.05, 6, 0.2);
        let theta_ref = theta_star.map(|v| v + 0.03);
        let pack = info_pack(&prob, &theta_ref).unwrap();
        let eta_ref = eta_partial(&prob, &theta_ref).unwrap();
        let p = prob.p();
        let q = prob.q();
        let dim = p + q;
        let f = |point: &DVector<f64>| -> f64 {
            let theta = point.rows(0, p).into_owned();
            let eta = point.rows(p, q).into_owned();
            -extended_loglik(
                &prob,
                &ExtendedPoint { theta, eta },
            )
            .unwrap()
        };
        let mut point = DVector::zeros(dim);
        point.rows_mut(0, p).copy_from(&theta_ref);
        point.rows_mut(p, q).copy_from(&eta_ref);
        let h = 1e-4 * (1.0 + point.norm());
        let mut fd = DMatrix::zeros(dim, dim);
        let f0 = f(&point);
        for a in 0..dim {
            let mut pp = point.clone();
            pp[a] += h;
            let mut pm = point.clone();
            pm[a] -= h;
            fd[(a, a)] = (f(&pp) - 2.0 * f0 + f(&pm)) / (h * h);
            for b in (a + 1)..dim {
                let mut xpp = point.clone();
                xpp[a] += h;
                xpp[b] += h;
                let mut xpm = point.clone();
                xpm[a] += h;
                xpm[b] -= h;
                let mut xmp = point.clone();
                xmp[a] -= h;
                xmp[b] += h;
                let mut xmm = point.clone();
                xmm[a] -= h;
                xmm[b] -= h;
                let v = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h);
                fd[(a, b)] = v;
                fd[(b, a)] = v;
            }
        }
        let assembled = pack.full_blocks.assemble();
        assert!(
            (&assembled - &fd).norm() <= 1e-4 * (1.0 + fd.norm()),
            "blocks differ from the FD Hessian by {}",
            (&assembled - &fd).norm()
        );
    }

    #[test]
    fn linear_fisher_expansion_is_exact() {
        let (prob, theta_star, m_star) = fixture_problem("linear", 48, 0.9, 12, 0.4);
        let (theta_g, _) = population_target(&prob, &m_star).unwrap();
        // The draw's noise is Z − Φm*.
        let eps_smoothed = &prob.z - &prob.smoother.matrix * &m_star;
        let xi = effective_score(&prob, &theta_g, &eps_smoothed).unwrap();
        let (theta_hat, trace) =
            fit_profile(&prob, &theta_g, FIT_TOL, FIT_MAX_ITER).unwrap();
        assert!(trace.converged);
        let pack = info_pack(&prob, &theta_g).unwrap();
        let root = linalg::psd_sqrt(&pack.d_gg_sq).unwrap();
        let lhs = &root * (&theta_hat - &theta_g);
        assert!(
            (&lhs - &xi).norm() < 1e-10,
            "Fisher identity violated by {}",
            (&lhs - &xi).norm()
        );
        let _ = theta_star;
    }

    #[test]
    fn effective_dimension_bounds_and_monotonicity() {
        let (prob, theta_star, _) = fixture_problem("linear", 36, 0.0, 14, 1.0);
        let sigma = 0.7;
        let v_sq = DMatrix::identity(prob.q(), prob.q()) * sigma * sigma;
        let mut previous = f64::INFINITY;
        for g in [0.0, 0.25, 1.0, 4.0] {
            let penalized = CalmedProblem::new(
                prob.model.clone(),
                prob.smoother.clone(),
                DMatrix::identity(4, 4) * g,
                prob.z.clone(),
                prob.local.clone(),
            )
            .unwrap();
            let report = effective_dimension(&penalized, &theta_star, &v_sq, 0.5).unwrap();
            assert!(report.p_gg <= sigma * sigma * 4.0 + 1e-10);
            assert!(
                report.p_gg <= previous + 1e-12,
                "effective dimension rose from {previous} to {}",
                report.p_gg
            );
            assert!(report.r_gg >= report.p_gg.sqrt());
            assert!(linalg::min_eig_sym(&report.b_gg) >= -1e-12);
            previous = report.p_gg;
        }
    }

    #[test]
    fn c3_constant_values_and_guards() {
        assert!((c3_constant(0.0, 0.0).unwrap() - 16.0).abs() < 1e-14);
        let stressed = c3_constant(0.4, 0.5).unwrap();
        let expected = 16.0 / (0.2_f64.powf(1.5) * 0.5_f64.powi(3));
        assert!((stressed - expected).abs() < 1e-10 * expected);
        assert!(matches!(
            c3_constant(0.5, 0.0),
            Err(Error::ConditionsUnmet(_))
        ));
        assert!(matches!(
            c3_constant(0.1, 1.0),
            Err(Error::ConditionsUnmet(_))
        ));
    }

    #[test]
    fn fisher_wilks_zero_residuals_on_linear() {
        let (prob, _, m_star) = fixture_problem("linear", 44, 0.6, 21, 0.35);
        let (theta_g, _) = population_target(&prob, &m_star).unwrap();
        let eps_smoothed = &prob.z - &prob.smoother.matrix * &m_star;
        let xi = effective_score(&prob, &theta_g, &eps_smoothed).unwrap();
        let v_sq = DMatrix::identity(prob.q(), prob.q()) * 0.35 * 0.35;
        let score = effective_dimension(&prob, &theta_g, &v_sq, 0.5)
            .unwrap()
            .with_score(xi);
        let (theta_hat, _) = fit_profile(&prob, &theta_g, FIT_TOL, FIT_MAX_ITER).unwrap();
        let consts = EstimationConsts {
            c3: 16.0,
            tau: 0.0,
            varrho: 0.0,
        };
        let report =
            fisher_wilks_report(&prob, &theta_hat, &theta_g, &score, &consts).unwrap();
        assert!(report.fisher_residual <= 1e-10);
        assert!(report.wilks_residual <= 1e-10);
        assert_eq!(report.omega_gg, 0.0);
        assert!(report.fisher_ok && report.wilks_ok);
        assert!(report.conditions_met);
        assert_eq!(report.fisher_bound, 0.0);
        assert_eq!(report.wilks_bound, 0.0);
    }

    #[test]
    fn fisher_wilks_guards_blow_up() {
        let (prob, theta_star, m_star) = fixture_problem("sine", 30, 0.05, 23, 0.2);
        let (theta_g, _) = population_target(&prob, &m_star).unwrap();
        let eps_smoothed = &prob.z - &prob.smoother.matrix * &m_star;
        let xi = effective_score(&prob, &theta_g, &eps_smoothed).unwrap();
        let v_sq = DMatrix::identity(prob.q(), prob.q()) * 0.04;
        let score = effective_dimension(&prob, &theta_g, &v_sq, 0.5)
            .unwrap()
            .with_score(xi);
        let (theta_hat, _) = fit_profile(&prob, &theta_g, FIT_TOL, FIT_MAX_ITER).unwrap();
        let consts = EstimationConsts {
            c3: 16.0,
            tau: 10.0,
            varrho: 0.0,
        };
        let report =
            fisher_wilks_report(&prob, &theta_hat, &theta_g, &score, &consts).unwrap();
        assert!(report.omega_gg >= 1.0);
        assert!(report.fisher_bound.is_infinite());
        assert!(report.wilks_bound.is_infinite());
        assert!(!report.conditions_met);
        assert!(report.fisher_residual.is_finite());
        assert!(report.wilks_residual.is_finite());
        let _ = theta_star;
    }

    #[test]
    fn bias_risk_linear_identities() {
        let (prob, theta_star, m_star) = fixture_problem("linear", 40, 1.5, 31, 0.5);
        let (theta_g, _) = population_target(&prob, &m_star).unwrap();
        let eps_smoothed = &prob.z - &prob.smoother.matrix * &m_star;
        let xi = effective_score(&prob, &theta_g, &eps_smoothed).unwrap();
        let v_sq = DMatrix::identity(prob.q(), prob.q()) * 0.25;
        let score = effective_dimension(&prob, &theta_g, &v_sq, 0.5)
            .unwrap()
            .with_score(xi.clone());
        let consts = EstimationConsts {
            c3: 16.0,
            tau: 0.0,
            varrho: 0.0,
        };
        let risk = bias_and_risk_bounds(&prob, &theta_star, &theta_g, &score, &consts).unwrap();
        assert_eq!(risk.delta_star, 0.0);
        assert!(risk.conditions_met);
        // For τ = 0 the deviation bound is exactly ‖ξ‖ + 𝚋_𝔾.
        assert!((risk.bias_norm_bound - (xi.norm() + risk.b_gg)).abs() < 1e-12);
        // The first-order bias is exact in the linear case: the population
        // target itself sits at θ* + bias.
        let shift = &theta_g - &theta_star;
        assert!(
            (&risk.bias_vec_approx - &shift).norm() < 1e-8,
            "bias approximation off by {}",
            (&risk.bias_vec_approx - &shift).norm()
        );
        assert!((risk.risk_prediction - (score.p_gg + risk.b_gg * risk.b_gg)).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_means_zero_bias() {
        let (prob, theta_star, m_star) = fixture_problem("exp-decay", 36, 0.0, 41, 0.2);
        let (theta_g, _) = population_target(&prob, &m_star).unwrap();
        let v_sq = DMatrix::identity(prob.q(), prob.q()) * 0.04;
        let score = effective_dimension(&prob, &theta_g, &v_sq, 0.5).unwrap();
        let consts = EstimationConsts {
            c3: 16.0,
            tau: 0.1,
            varrho: 0.01,
        };
        let risk = bias_and_risk_bounds(&prob, &theta_star, &theta_g, &score, &consts).unwrap();
        assert_eq!(risk.b_gg, 0.0);
        assert_eq!(risk.bias_vec_approx.norm(), 0.0);
        assert_eq!(risk.risk_prediction, score.p_gg);
    }
}
