//! Penalty-weight selection for the scaled penalty family 𝔾_w² = w·G₀².
//!
//! The effective dimension of the penalized linearized problem,
//!
//!   p_w = σ²·tr{AᵀA·(AᵀA + w·G₀²)⁻¹},
//!
//! is strictly decreasing in w, from σ²·rank(A) at w → 0⁺ toward 0. Under
//! the smoothness normalization ‖G₀θ*‖ ≤ 1 the squared penalty bias is at
//! most w, so the quadratic risk is bounded by p_w + w; [`select_w_risk`]
//! minimizes that proxy. [`select_w_balance`] instead equates the two
//! terms through the fixed point w = C₀·p_w, which exists and is unique by
//! monotonicity. Neither selector needs the unknown truth θ*.

use nalgebra::DMatrix;

use crate::linalg::{self, check_symmetric, SYM_TOL};
use crate::{Error, Result};

/// Relative width at which the golden-section search stops.
const RISK_REL_TOL: f64 = 1e-6;
/// Iteration cap for the golden-section search.
const RISK_MAX_ITER: usize = 200;
/// Points in the unimodality pre-scan of the risk objective.
const SCAN_POINTS: usize = 64;
/// Points in the dense-grid fallback when the pre-scan rejects unimodality.
const FALLBACK_POINTS: usize = 4096;
/// Relative tolerance of the balance-equation bisection.
const BALANCE_REL_TOL: f64 = 1e-8;

/// Inputs of the penalty-weight selectors together with an optional sampled
/// path of (w, p_w) pairs.
#[derive(Clone, Debug)]
pub struct PenaltyPath {
    /// Linearized q×p design ∇M̄ᵀ.
    pub a: DMatrix<f64>,
    /// Base smoothness operator G₀², p×p positive semi-definite.
    pub g0_sq: DMatrix<f64>,
    /// Noise variance σ².
    pub sigma_sq: f64,
    /// Sorted positive weights at which the path has been sampled.
    pub w_grid: Vec<f64>,
    /// Effective dimensions p_w matching `w_grid`.
    pub p_w: Vec<f64>,
}

impl PenaltyPath {
    /// Validates dimensions, σ² > 0, G₀² symmetric PSD, and A ≠ 0; the
    /// sampled path starts empty.
    pub fn new(a: DMatrix<f64>, g0_sq: DMatrix<f64>, sigma_sq: f64) -> Result<Self> {
        check_symmetric(&g0_sq, SYM_TOL)?;
        if g0_sq.nrows() != a.ncols() {
            return Err(Error::Validation(format!(
                "design has {} columns but the smoothness operator is {}x{}",
                a.ncols(),
                g0_sq.nrows(),
                g0_sq.ncols()
            )));
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::Validation(format!(
                "sigma_sq must be positive, got {sigma_sq}"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) || g0_sq.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("penalty path inputs must be finite".into()));
        }
        if a.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation(
                "design must be non-zero for the effective dimension to be defined".into(),
            ));
        }
        if linalg::min_eig_sym(&g0_sq) < -SYM_TOL {
            return Err(Error::Validation(
                "smoothness operator must be positive semi-definite".into(),
            ));
        }
        Ok(Self {
            a,
            g0_sq,
            sigma_sq,
            w_grid: Vec::new(),
            p_w: Vec::new(),
        })
    }

    /// Number of parameters p.
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Samples p_w on a geometric grid over `bracket` and stores the path.
    pub fn sample_geometric(&mut self, bracket: (f64, f64), len: usize) -> Result<()> {
        if len < 2 {
            return Err(Error::Validation("grid needs at least two points".into()));
        }
        check_bracket(bracket)?;
        let (lo, hi) = bracket;
        let ratio = (hi / lo).ln() / (len - 1) as f64;
        let mut w_grid = Vec::with_capacity(len);
        let mut p_w = Vec::with_capacity(len);
        for i in 0..len {
            let w = (lo.ln() + ratio * i as f64).exp();
            p_w.push(effective_dim_w(self, w)?);
            w_grid.push(w);
        }
        self.w_grid = w_grid;
        self.p_w = p_w;
        Ok(())
    }
}

fn check_bracket(bracket: (f64, f64)) -> Result<()> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Validation(format!(
            "bracket must satisfy 0 < lo < hi, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// Effective dimension p_w = σ²·tr{AᵀA·(AᵀA + w·G₀²)⁻¹} of the penalized
/// linearized problem at weight w.
///
/// Lies in (0, σ²·p] and decreases strictly in w; w = 0 is allowed and
/// returns σ²·rank(A) when the unregularized Gram is invertible.
pub fn effective_dim_w(path: &PenaltyPath, w: f64) -> Result<f64> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::Validation(format!(
            "weight must be non-negative, got {w}"
        )));
    }
    let gram = path.a.transpose() * &path.a;
    let reg = &gram + &path.g0_sq * w;
    let solved = linalg::solve_spd_mat(&reg, &gram).map_err(|_| {
        Error::Numerical(format!(
            "regularized Gram matrix is singular at w = {w}"
        ))
    })?;
    Ok(path.sigma_sq * solved.trace())
}

/// Result of the risk-proxy minimization over the penalty weight.
#[derive(Clone, Copy, Debug)]
pub struct RiskSelection {
    /// The minimizing weight w*.
    pub w_star: f64,
    /// The minimal risk proxy p_{w*} + w*.
    pub risk: f64,
    /// True when the unimodality pre-scan failed and the minimum was taken
    /// over a dense grid instead of by golden-section refinement.
    pub grid_fallback: bool,
}

/// Minimizes the risk proxy p_w + w over w in `bracket` by golden-section
/// search on the log scale.
///
/// A 64-point pre-scan checks that the sampled objective is three-point
/// unimodal; if not, the minimizer of a 4096-point dense grid is returned
/// with `grid_fallback` set.
pub fn select_w_risk(path: &PenaltyPath, bracket: (f64, f64)) -> Result<RiskSelection> {
    check_bracket(bracket)?;
    let objective = |s: f64| -> Result<f64> {
        let w = s.exp();
        Ok(effective_dim_w(path, w)? + w)
    };
    let (lo, hi) = (bracket.0.ln(), bracket.1.ln());

    let mut scan = Vec::with_capacity(SCAN_POINTS);
    for i in 0..SCAN_POINTS {
        let s = lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64;
        scan.push((s, objective(s)?));
    }
    let best = scan
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .1.total_cmp(&y.1 .1))
        .expect("scan is non-empty")
        .0;
    // Three-point unimodality: strictly falling before the sampled minimum
    // and rising after it, up to float slack near ties.
    let slack = 1e-12 * (1.0 + scan[best].1.abs());
    let unimodal = scan[..best].windows(2).all(|p| p[0].1 >= p[1].1 - slack)
        && scan[best..].windows(2).all(|p| p[1].1 >= p[0].1 - slack);
    if !unimodal {
        let mut best_w = bracket.0;
        let mut best_val = f64::INFINITY;
        for i in 0..FALLBACK_POINTS {
            let s = lo + (hi - lo) * i as f64 / (FALLBACK_POINTS - 1) as f64;
            let val = objective(s)?;
            if val < best_val {
                best_val = val;
                best_w = s.exp();
            }
        }
        return Ok(RiskSelection {
            w_star: best_w,
            risk: best_val,
            grid_fallback: true,
        });
    }

    // Golden section around the scan minimum; the log-scale gap equals the
    // relative gap in w.
    let mut a = scan[best.saturating_sub(1)].0;
    let mut b = scan[(best + 1).min(SCAN_POINTS - 1)].0;
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    for _ in 0..RISK_MAX_ITER {
        if b - a <= RISK_REL_TOL {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d)?;
        }
    }
    let w_star = (0.5 * (a + b)).exp();
    Ok(RiskSelection {
        w_star,
        risk: effective_dim_w(path, w_star)? + w_star,
        grid_fallback: false,
    })
}

/// Solves the balance relation w = C₀·p_w for its unique root
/// w* = max{w : w ≤ C₀·p_w} by bisection.
///
/// The root exists and is unique because w − C₀·p_w is strictly increasing,
/// negative at w → 0⁺, and positive for w > C₀·σ²·p.
pub fn select_w_balance(path: &PenaltyPath, c0: f64) -> Result<f64> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::Validation(format!(
            "balance constant must be positive, got {c0}"
        )));
    }
    let gap = |w: f64| -> Result<f64> { Ok(w - c0 * effective_dim_w(path, w)?) };
    let mut lo = 1e-12;
    if gap(lo)? > 0.0 {
        return Ok(lo);
    }
    let mut hi = c0 * path.sigma_sq * path.dim() as f64 + 1.0;
    debug_assert!(gap(hi).map_or(true, |g| g > 0.0));
    for _ in 0..200 {
        if hi - lo <= BALANCE_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
