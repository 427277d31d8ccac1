//! Deviation quantiles and exponential-moment bounds for quadratic forms
//! ‖Qξ‖² of a sub-gaussian or light-exponential-tail vector ξ.
//!
//! All formulas are driven by the spectrum summary of B = Q𝔙²Qᵀ: its trace
//! (`dim_a`), the trace of its square (`v2`), and its operator norm
//! (`b_norm`). The upper-tail quantile is
//!
//!   z_sq(x) = tr B + 2·√(x·tr B²) + 2·x·‖B‖,
//!
//! which guarantees P(‖Qξ‖² > z_sq(x)) ≤ e⁻ˣ in the sub-gaussian regime.
//! For noise whose exponential moments exist only up to a radius g, the
//! quantile switches at a crossover level x_c from the Gaussian-type branch
//! to a linear-in-x exponential branch; [`solve_xc`] computes that level and
//! [`zc_quantile`] evaluates the piecewise quantile.

use nalgebra::DMatrix;

use crate::linalg::{check_symmetric, sym_eigenvalues, SYM_TOL};
use crate::{Error, Result};

/// Residual tolerance for the x_c bisection.
pub const XC_RESIDUAL_TOL: f64 = 1e-8;
/// Search bracket for the x_c bisection.
pub const XC_BRACKET: (f64, f64) = (1e-6, 1e8);
/// Iteration cap for the x_c bisection.
pub const XC_MAX_ITER: usize = 200;

/// Trace, squared-trace, and operator-norm summary of a PSD matrix B.
///
/// These three numbers drive every quantile formula in this module:
/// dim_a = tr B, v2 = tr B², b_norm = ‖B‖.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumStats {
    pub dim_a: f64,
    pub v2: f64,
    pub b_norm: f64,
}

impl SpectrumStats {
    /// Validates the eigenvalue-consistency invariants:
    /// b_norm ≤ dim_a, b_norm² ≤ v2 ≤ b_norm·dim_a, all ≥ 0, and
    /// b_norm > 0 whenever dim_a > 0.
    pub fn new(dim_a: f64, v2: f64, b_norm: f64) -> Result<Self> {
        let s = Self { dim_a, v2, b_norm };
        s.validate()?;
        Ok(s)
    }

    /// Stats of the p-dimensional identity: (p, p, 1).
    pub fn identity(p: usize) -> Self {
        Self {
            dim_a: p as f64,
            v2: p as f64,
            b_norm: if p == 0 { 0.0 } else { 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { dim_a, v2, b_norm } = *self;
        if !(dim_a.is_finite() && v2.is_finite() && b_norm.is_finite()) {
            return Err(Error::Validation("spectrum stats must be finite".into()));
        }
        if dim_a < 0.0 || v2 < 0.0 || b_norm < 0.0 {
            return Err(Error::Validation(format!(
                "spectrum stats must be nonnegative: tr={dim_a}, tr2={v2}, norm={b_norm}"
            )));
        }
        let slack = 1e-9 * (1.0 + dim_a.max(v2).max(b_norm));
        if b_norm > dim_a + slack {
            return Err(Error::Validation(format!(
                "operator norm {b_norm} exceeds trace {dim_a}"
            )));
        }
        if b_norm * b_norm > v2 + slack {
            return Err(Error::Validation(format!(
                "norm² {} exceeds tr B² = {v2}",
                b_norm * b_norm
            )));
        }
        if v2 > b_norm * dim_a + slack {
            return Err(Error::Validation(format!(
                "tr B² = {v2} exceeds ‖B‖·tr B = {}",
                b_norm * dim_a
            )));
        }
        if dim_a > slack && b_norm <= 0.0 {
            return Err(Error::Validation(
                "positive trace requires positive operator norm".into(),
            ));
        }
        Ok(())
    }
}

/// Computes (tr B, tr B², ‖B‖) of a symmetric PSD matrix from its
/// eigendecomposition.
pub fn spectrum_stats(b: &DMatrix<f64>) -> Result<SpectrumStats> {
    check_symmetric(b, SYM_TOL)?;
    let vals = sym_eigenvalues(b);
    let scale = vals.abs().max().max(1.0);
    if vals.min() < -SYM_TOL * scale {
        return Err(Error::Validation(format!(
            "matrix not PSD: min eigenvalue {}",
            vals.min()
        )));
    }
    let clamped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
    SpectrumStats::new(
        clamped.iter().sum(),
        clamped.iter().map(|v| v * v).sum(),
        clamped.iter().cloned().fold(0.0, f64::max),
    )
}

/// Sub-gaussian deviation quantile at level x.
///
/// Returns (z_sq, z) with
///   z_sq = tr B + 2√(x·tr B²) + 2x‖B‖      (threshold for ‖Qξ‖²),
///   z    = √(tr B) + √(2x‖B‖)              (threshold for ‖Qξ‖).
pub fn z_quantile(stats: &SpectrumStats, x: f64) -> Result<(f64, f64)> {
    stats.validate()?;
    if x < 0.0 {
        return Err(Error::Domain(format!("deviation level x = {x} < 0")));
    }
    let z_sq = stats.dim_a + 2.0 * (x * stats.v2).sqrt() + 2.0 * x * stats.b_norm;
    let z = stats.dim_a.sqrt() + (2.0 * x * stats.b_norm).sqrt();
    Ok((z_sq, z))
}

/// Upper bound on E exp(μ‖Qξ‖²/2) for sub-gaussian ξ:
///
///   exp( μ²·tr B² / (4(1 − ‖B‖μ)) + μ·tr B / 2 ),   0 < μ < 1/‖B‖.
pub fn exp_moment_bound(stats: &SpectrumStats, mu: f64) -> Result<f64> {
    stats.validate()?;
    if mu <= 0.0 || mu * stats.b_norm >= 1.0 {
        return Err(Error::Domain(format!(
            "μ = {mu} outside (0, 1/‖B‖) = (0, {})",
            1.0 / stats.b_norm
        )));
    }
    Ok((mu * mu * stats.v2 / (4.0 * (1.0 - stats.b_norm * mu)) + mu * stats.dim_a / 2.0).exp())
}

/// Exact Gaussian exponential moment E exp(μ‖QX‖²/2) = det(I − μB)^(−1/2)
/// for X ~ N(0, 𝔙²) and B = Q𝔙²Qᵀ. Negative μ gives the lower-tail moment
/// det(I + |μ|B)^(−1/2).
pub fn gaussian_det_moment(b: &DMatrix<f64>, mu: f64) -> Result<f64> {
    check_symmetric(b, SYM_TOL)?;
    let vals = sym_eigenvalues(b);
    let mut log_det = 0.0;
    for &lam in vals.iter() {
        let factor = 1.0 - mu * lam;
        if factor <= 0.0 {
            return Err(Error::Domain(format!(
                "μ‖B‖ ≥ 1: factor 1 − μλ = {factor} for λ = {lam}"
            )));
        }
        log_det += factor.ln();
    }
    Ok((-0.5 * log_det).exp())
}

/// Tilt level μ(x) = (1 + v/(2√x))⁻¹ with v = √(tr B²): the optimal
/// exponential-moment tilt for the light-tail regime. Strictly increasing
/// from 0 to 1 as x runs over (0, ∞).
pub fn mu_of_x(stats: &SpectrumStats, x: f64) -> Result<f64> {
    stats.validate()?;
    if x <= 0.0 {
        return Err(Error::Domain(format!("x = {x} must be positive")));
    }
    Ok(1.0 / (1.0 + stats.v2.sqrt() / (2.0 * x.sqrt())))
}

/// Crossover solution for the light-exponential-tail regime.
#[derive(Clone, Copy, Debug)]
pub struct ExpTailSolution {
    /// Crossover level: Gaussian-type quantile below, exponential above.
    pub x_c: f64,
    /// μ(x_c).
    pub mu_c: f64,
    /// g_c = g − √(dim_a·μ_c).
    pub g_c: f64,
    /// The exponential-moment radius the solution was computed for.
    pub g: f64,
}

fn xc_lhs(stats: &SpectrumStats, g: f64, x: f64) -> f64 {
    let mu = 1.0 / (1.0 + stats.v2.sqrt() / (2.0 * x.sqrt()));
    (g - (stats.dim_a * mu).sqrt()) / mu
}

fn xc_rhs(stats: &SpectrumStats, x: f64) -> f64 {
    (stats.dim_a + 2.0 * stats.v2.sqrt() * x.sqrt() + 2.0 * x).sqrt() + 1.0
}

/// Solves for the crossover level x_c: the unique root of
///
///   (g − √(dim_a·μ(x))) / μ(x)  =  √(dim_a + 2v√x + 2x) + 1,
///
/// whose left side decreases and right side increases in x. Requires stats
/// normalized to ‖B‖ = 1 (rescale B and g beforehand) and g > √dim_a.
/// Bisection on [1e-6, 1e8] to residual ≤ 1e-8.
pub fn solve_xc(g: f64, stats: &SpectrumStats) -> Result<ExpTailSolution> {
    stats.validate()?;
    if (stats.b_norm - 1.0).abs() > 1e-8 {
        return Err(Error::Validation(format!(
            "solve_xc expects ‖B‖ = 1 (got {}); rescale B and g first",
            stats.b_norm
        )));
    }
    if g <= stats.dim_a.sqrt() {
        return Err(Error::Domain(format!(
            "radius g = {g} must exceed √dim_a = {}",
            stats.dim_a.sqrt()
        )));
    }
    let f = |x: f64| xc_lhs(stats, g, x) - xc_rhs(stats, x);
    let (mut lo, mut hi) = XC_BRACKET;
    if f(lo) <= 0.0 || f(hi) >= 0.0 {
        return Err(Error::Numerical(format!(
            "no crossover on [{lo}, {hi}]: g = {g} too small for dim_a = {}",
            stats.dim_a
        )));
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..XC_MAX_ITER {
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= XC_RESIDUAL_TOL {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    debug_assert!(f(lo.max(XC_BRACKET.0)) >= f(hi.min(XC_BRACKET.1)));
    let x_c = mid;
    if f(x_c).abs() > XC_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "x_c bisection stalled: residual {} at x = {x_c}",
            f(x_c)
        )));
    }
    let mu_c = mu_of_x(stats, x_c)?;
    Ok(ExpTailSolution {
        x_c,
        mu_c,
        g_c: g - (stats.dim_a * mu_c).sqrt(),
        g,
    })
}

/// Piecewise deviation quantile for ‖Qξ‖ in the light-tail regime:
///
///   z_c(x) = √(dim_a + 2v√x + 2x)            for x ≤ x_c,
///   z_c(x) = g_c/μ_c + 2(x − x_c)/g_c        for x > x_c,
///
/// guaranteeing P(‖Qξ‖ ≥ z_c(x)) ≤ 2e⁻ˣ + e^(−x_c)·1(x < x_c) ≤ 3e⁻ˣ.
/// The two branches differ by at most 1 at x_c.
pub fn zc_quantile(sol: &ExpTailSolution, stats: &SpectrumStats, x: f64) -> Result<f64> {
    stats.validate()?;
    if x <= 0.0 {
        return Err(Error::Domain(format!("x = {x} must be positive")));
    }
    if x <= sol.x_c {
        Ok((stats.dim_a + 2.0 * stats.v2.sqrt() * x.sqrt() + 2.0 * x).sqrt())
    } else {
        Ok(sol.g_c / sol.mu_c + 2.0 * (x - sol.x_c) / sol.g_c)
    }
}

/// Smallest radius g for which the pure Gaussian-type tail bound
/// P(‖Qξ‖ ≥ √dim_a + √(2x)) ≤ 3e⁻ˣ holds at level x:
/// g ≥ √x/2 + (dim_a·x/4)^(1/4).
pub fn min_g_for_gaussian_regime(stats: &SpectrumStats, x: f64) -> Result<f64> {
    stats.validate()?;
    if x <= 0.0 {
        return Err(Error::Domain(format!("x = {x} must be positive")));
    }
    Ok(x.sqrt() / 2.0 + (stats.dim_a * x / 4.0).powf(0.25))
}

/// Lower-tail threshold tr B − 2√(x·tr B²), with a vacuity flag when the
/// threshold is nonpositive (the bound P(‖Qξ‖² < threshold) ≤ e⁻ˣ says
/// nothing then).
#[derive(Clone, Copy, Debug)]
pub struct LowerTail {
    pub threshold: f64,
    pub vacuous: bool,
}

pub fn lower_tail_threshold(stats: &SpectrumStats, x: f64) -> Result<LowerTail> {
    stats.validate()?;
    if x <= 0.0 {
        return Err(Error::Domain(format!("x = {x} must be positive")));
    }
    let threshold = stats.dim_a - 2.0 * (x * stats.v2).sqrt();
    Ok(LowerTail {
        threshold,
        vacuous: threshold <= 0.0,
    })
}
