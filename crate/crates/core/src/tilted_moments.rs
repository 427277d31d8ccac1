//! Tilted cumulant derivatives and the non-Gaussianity constants τ₃, τ₄ for
//! scalar noise laws, plus the sharp-bound ingredients x_μ, ε_μ, ◊₄, ρ_μ,
//! Δ_μ.
//!
//! For a standardized scalar law with log-moment function φ(t) = log E e^{tX},
//! the tilted measure at level t has mean φ′(t) and central moments given by
//! higher derivatives; τ₃ and τ₄ are suprema of |φ‴| and |φ⁗| over a tilt
//! window (0, g] and quantify how far the law is from Gaussian (where both
//! vanish identically). The sharp-bound terms turn (τ₃, τ₄) into an explicit
//! multiplicative correction Δ_μ on the Gaussian deviation bound.

use crate::{Error, Result};

/// Largest |t·x| fed to exp when tilting a tabulated law; beyond this the
/// moment sums overflow or lose all precision even with max-shifting.
const TILT_RANGE_LIMIT: f64 = 700.0;
/// Mass, mean, and variance tolerances for tabulated laws.
const LAW_TOL: f64 = 1e-10;
/// Switch point for the Langevin-function Taylor series: below this |u| the
/// closed forms lose digits to the 6/u⁴-scale cancellation, above it they
/// are accurate; the series error at the boundary is ≲ 2e-11.
const LANGEVIN_SERIES_CUTOFF: f64 = 0.15;

/// A standardized (mean 0, variance ≤ 1) scalar noise law.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarLaw {
    /// Standard normal.
    Gaussian,
    /// Symmetric ±1.
    Rademacher,
    /// Uniform on [−√3, √3] (unit variance).
    CenteredUniform,
    /// Finite mass grid: P(X = points[i]) = weights[i].
    Tabulated {
        points: Vec<f64>,
        weights: Vec<f64>,
        variance: f64,
    },
}

impl ScalarLaw {
    /// Builds a tabulated law from mass points, validating that the weights
    /// are nonnegative and sum to 1, the mean is 0, and the variance is at
    /// most 1 (all to 1e-10).
    pub fn tabulated(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::Validation(format!(
                "tabulated law needs matching nonempty grids: {} points, {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().chain(weights.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("tabulated law entries must be finite".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Validation("tabulated weights must be nonnegative".into()));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > LAW_TOL {
            return Err(Error::Validation(format!("weights sum to {mass}, need 1")));
        }
        let mean: f64 = points.iter().zip(&weights).map(|(x, w)| x * w).sum();
        if mean.abs() > LAW_TOL {
            return Err(Error::Validation(format!("law mean {mean} is not 0")));
        }
        let variance: f64 = points.iter().zip(&weights).map(|(x, w)| x * x * w).sum();
        if variance > 1.0 + LAW_TOL {
            return Err(Error::Validation(format!(
                "variance {variance} exceeds 1; standardize the law first"
            )));
        }
        Ok(Self::Tabulated {
            points,
            weights,
            variance,
        })
    }

    /// Builds a tabulated law from density samples on a point grid using
    /// trapezoid weights, then normalizes the mass to 1 exactly.
    pub fn from_density(points: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if points.len() != density.len() || points.len() < 2 {
            return Err(Error::Validation(
                "density law needs matching grids with at least 2 points".into(),
            ));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("density points must be strictly increasing".into()));
        }
        let n = points.len();
        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let h = points[i + 1] - points[i];
            weights[i] += 0.5 * h * density[i];
            weights[i + 1] += 0.5 * h * density[i + 1];
        }
        let mass: f64 = weights.iter().sum();
        if mass <= 0.0 {
            return Err(Error::Validation("density has zero total mass".into()));
        }
        for w in &mut weights {
            *w /= mass;
        }
        Self::tabulated(points, weights)
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::Tabulated { variance, .. } => *variance,
            _ => 1.0,
        }
    }
}

/// τ₃/τ₄ summary over a tilt window (0, g].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedSummary {
    /// Tilt radius the suprema were taken over.
    pub g: f64,
    /// sup |φ‴| on (0, g].
    pub tau3: f64,
    /// sup |φ⁗| on (0, g], including the t→0⁺ limit |fourth cumulant|.
    pub tau4: f64,
    /// Smallest 𝙲 with φ(t) ≤ 𝙲·t²/2 on (0, g] (at least the variance).
    pub subg_const: f64,
}

/// Langevin function L(u) = coth u − 1/u and its first three derivatives.
/// The closed forms cancel catastrophically near 0, so small |u| uses the
/// Taylor series (coefficients from the Bernoulli expansion of coth).
fn langevin(u: f64) -> (f64, f64, f64, f64) {
    if u.abs() <= LANGEVIN_SERIES_CUTOFF {
        let u2 = u * u;
        let l = u * (1.0 / 3.0
            + u2 * (-1.0 / 45.0
                + u2 * (2.0 / 945.0 + u2 * (-1.0 / 4725.0 + u2 * (2.0 / 93555.0)))));
        let l1 = 1.0 / 3.0
            + u2 * (-1.0 / 15.0
                + u2 * (2.0 / 189.0 + u2 * (-1.0 / 675.0 + u2 * (2.0 / 10395.0))));
        let l2 = u * (-2.0 / 15.0
            + u2 * (8.0 / 189.0 + u2 * (-2.0 / 225.0 + u2 * (16.0 / 10395.0))));
        let l3 = -2.0 / 15.0
            + u2 * (8.0 / 63.0 + u2 * (-2.0 / 45.0 + u2 * (112.0 / 10395.0)));
        (l, l1, l2, l3)
    } else {
        let coth = 1.0 / u.tanh();
        let csch2 = coth * coth - 1.0;
        let inv = 1.0 / u;
        let l = coth - inv;
        let l1 = inv * inv - csch2;
        let l2 = -2.0 * inv.powi(3) + 2.0 * csch2 * coth;
        let l3 = 6.0 * inv.powi(4) - 4.0 * csch2 * coth * coth - 2.0 * csch2 * csch2;
        (l, l1, l2, l3)
    }
}

/// log(sinh u / u), series below the same cutoff as [`langevin`].
fn log_sinhc(u: f64) -> f64 {
    if u.abs() <= LANGEVIN_SERIES_CUTOFF {
        let u2 = u * u;
        u2 * (1.0 / 6.0
            + u2 * (-1.0 / 180.0 + u2 * (1.0 / 2835.0 + u2 * (-1.0 / 37800.0))))
    } else {
        (u.sinh() / u).ln()
    }
}

/// φ(t) = log E e^{tX} and its first four derivatives at t.
///
/// φ′ is the tilted mean, φ″ the tilted variance, φ‴ the third centered
/// tilted moment, and φ⁗ the fourth centered tilted moment minus three times
/// the squared tilted variance.
pub fn tilted_cumulants(law: &ScalarLaw, t: f64) -> Result<(f64, f64, f64, f64, f64)> {
    if !t.is_finite() {
        return Err(Error::Validation(format!("tilt t = {t} must be finite")));
    }
    match law {
        ScalarLaw::Gaussian => Ok((0.5 * t * t, t, 1.0, 0.0, 0.0)),
        ScalarLaw::Rademacher => {
            // φ = log cosh t; with u = tanh t:
            // φ′ = u, φ″ = 1 − u², φ‴ = −2u(1 − u²), φ⁗ = −2(1 − u²)(1 − 3u²).
            let a = t.abs();
            let phi = a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2;
            let u = t.tanh();
            let s2 = 1.0 - u * u;
            Ok((phi, u, s2, -2.0 * u * s2, -2.0 * s2 * (1.0 - 3.0 * u * u)))
        }
        ScalarLaw::CenteredUniform => {
            // φ(t) = log(sinh u / u) with u = √3·t; derivatives follow from
            // the Langevin function: φ′ = √3·L, φ″ = 3L′, φ‴ = 3√3·L″,
            // φ⁗ = 9·L‴.
            let r3 = 3.0_f64.sqrt();
            let u = r3 * t;
            if u == 0.0 {
                return Ok((0.0, 0.0, 1.0, 0.0, -6.0 / 5.0));
            }
            let (l, l1, l2, l3) = langevin(u);
            Ok((log_sinhc(u), r3 * l, 3.0 * l1, 3.0 * r3 * l2, 9.0 * l3))
        }
        ScalarLaw::Tabulated { points, weights, .. } => {
            let max_arg = points
                .iter()
                .map(|&x| (t * x).abs())
                .fold(0.0, f64::max);
            if max_arg > TILT_RANGE_LIMIT {
                return Err(Error::Numerical(format!(
                    "tilt overflow: |t·x| = {max_arg} exceeds {TILT_RANGE_LIMIT}"
                )));
            }
            // Shift by max(t·x) so the largest exponential is 1.
            let shift = points.iter().map(|&x| t * x).fold(f64::NEG_INFINITY, f64::max);
            let tilted: Vec<f64> = points
                .iter()
                .zip(weights)
                .map(|(&x, &w)| w * (t * x - shift).exp())
                .collect();
            let mass: f64 = tilted.iter().sum();
            if mass <= 0.0 || !mass.is_finite() {
                return Err(Error::Numerical(format!("tilted mass {mass} degenerate at t = {t}")));
            }
            let phi = shift + mass.ln();
            let mean: f64 = points.iter().zip(&tilted).map(|(&x, &w)| x * w).sum::<f64>() / mass;
            let central = |k: i32| -> f64 {
                points
                    .iter()
                    .zip(&tilted)
                    .map(|(&x, &w)| (x - mean).powi(k) * w)
                    .sum::<f64>()
                    / mass
            };
            let m2 = central(2);
            let m3 = central(3);
            let m4 = central(4);
            Ok((phi, mean, m2, m3, m4 - 3.0 * m2 * m2))
        }
    }
}

/// Suprema of |φ‴| and |φ⁗| over the uniform grid t_i = g·i/grid_size,
/// i = 1…grid_size, together with the t→0⁺ limit values, and the smallest
/// sub-gaussian constant sup 2φ(t)/t² ∨ variance on the same window.
pub fn tau34(law: &ScalarLaw, g: f64, grid_size: usize) -> Result<TiltedSummary> {
    if g <= 0.0 || !g.is_finite() {
        return Err(Error::Domain(format!("tilt radius g = {g} must be positive")));
    }
    if grid_size < 64 {
        return Err(Error::Validation(format!(
            "grid_size = {grid_size} too coarse, need at least 64"
        )));
    }
    if matches!(law, ScalarLaw::Gaussian) {
        return Ok(TiltedSummary {
            g,
            tau3: 0.0,
            tau4: 0.0,
            subg_const: 1.0,
        });
    }
    // t→0⁺ limits: φ‴ → third central moment, φ⁗ → fourth cumulant,
    // 2φ/t² → variance.
    let (_, _, _, d3_zero, d4_zero) = tilted_cumulants(law, 0.0)?;
    let mut tau3 = d3_zero.abs();
    let mut tau4 = d4_zero.abs();
    let mut subg = law.variance();
    for i in 1..=grid_size {
        let t = g * i as f64 / grid_size as f64;
        let (phi, _, _, d3, d4) = tilted_cumulants(law, t)?;
        tau3 = tau3.max(d3.abs());
        tau4 = tau4.max(d4.abs());
        subg = subg.max(2.0 * phi / (t * t));
    }
    Ok(TiltedSummary {
        g,
        tau3,
        tau4,
        subg_const: subg,
    })
}

/// Scales per-observation constants to the normalized sum of n i.i.d.
/// copies: τ₃ → τ₃/√n, τ₄ → τ₄/n.
pub fn iid_tau_scaling(tau3_one: f64, tau4_one: f64, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Validation("n must be at least 1".into()));
    }
    let nf = n as f64;
    Ok((tau3_one / nf.sqrt(), tau4_one / nf))
}

/// Ingredients of the sharp deviation bound with multiplicative correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpBoundTerms {
    /// Effective deviation level x_μ = ¼·(√(g²/(𝙲μ)) − √dim_Q)².
    pub x_mu: f64,
    /// ε_μ = 𝙲μ·(1 + √(dim_Q/x_μ)); at most 2/3 under the preconditions.
    pub eps_mu: f64,
    /// ω = g·τ₃/2.
    pub omega: f64,
    /// Fourth-order correction ◊₄.
    pub diamond4: f64,
    /// Gaussian-tail remainder ρ_μ = e^(−x*) (1 if the threshold is vacuous).
    pub rho_mu: f64,
    /// Total correction Δ_μ = ◊₄ + ρ_μ + (1−ε_μ)⁻¹·e^{𝙲μ·dim_Q/2 − (1−ε_μ)x_μ}.
    pub delta_mu: f64,
}

/// Evaluates the sharp-bound terms for density constant 𝙲 = `kdens`,
/// effective dimension dim_Q, tilt μ, radius g, and cumulant constants
/// τ₃, τ₄.
///
/// Preconditions (each failure reported by name):
///   𝙲μ ≤ 1/3,   μ⁻¹g² ≥ 9·𝙲·dim_Q,   ω = g·τ₃/2 ≤ 1/3.
///
/// ◊₄ = (16(1−ω)²)⁻¹·{ τ₃²·μ³(dim_Q+2)³/(1−μ)³ + 2τ₄·μ²(dim_Q+1)²/(1−μ)² },
/// and ρ_μ bounds the Gaussian tail beyond (1−μ)μ⁻¹g² using the
/// conservative spectrum (tr = tr² = dim_Q, norm 1): e^(−x*) with
/// √x* = (−√dim_Q + √(2T − dim_Q))/2, vacuous (ρ_μ = 1) if T ≤ dim_Q.
pub fn sharp_bound_terms(
    kdens: f64,
    dim_q: f64,
    mu: f64,
    g: f64,
    tau3: f64,
    tau4: f64,
) -> Result<SharpBoundTerms> {
    for (name, v) in [
        ("kdens", kdens),
        ("dim_q", dim_q),
        ("mu", mu),
        ("g", g),
        ("tau3", tau3),
        ("tau4", tau4),
    ] {
        if !v.is_finite() {
            return Err(Error::Validation(format!("{name} = {v} must be finite")));
        }
    }
    if kdens <= 0.0 || dim_q <= 0.0 || g <= 0.0 || tau3 < 0.0 || tau4 < 0.0 {
        return Err(Error::Validation(
            "kdens, dim_q, g must be positive; tau3, tau4 nonnegative".into(),
        ));
    }
    if mu <= 0.0 || mu >= 1.0 {
        return Err(Error::Domain(format!("tilt μ = {mu} must lie in (0, 1)")));
    }
    if kdens * mu > 1.0 / 3.0 {
        return Err(Error::ConditionsUnmet(format!(
            "𝙲μ = {} > 1/3",
            kdens * mu
        )));
    }
    if g * g / mu < 9.0 * kdens * dim_q {
        return Err(Error::ConditionsUnmet(format!(
            "μ⁻¹g² = {} < 9𝙲·dim_Q = {}",
            g * g / mu,
            9.0 * kdens * dim_q
        )));
    }
    let omega = g * tau3 / 2.0;
    if omega > 1.0 / 3.0 {
        return Err(Error::ConditionsUnmet(format!("ω = gτ₃/2 = {omega} > 1/3")));
    }

    let x_mu = 0.25 * ((g * g / (kdens * mu)).sqrt() - dim_q.sqrt()).powi(2);
    let eps_mu = kdens * mu + kdens * mu * (dim_q / x_mu).sqrt();
    let one_m_mu = 1.0 - mu;
    let diamond4 = (tau3 * tau3 * mu.powi(3) * (dim_q + 2.0).powi(3) / one_m_mu.powi(3)
        + 2.0 * tau4 * mu * mu * (dim_q + 1.0).powi(2) / (one_m_mu * one_m_mu))
        / (16.0 * (1.0 - omega) * (1.0 - omega));
    let threshold = one_m_mu * g * g / mu;
    let rho_mu = if threshold <= dim_q {
        1.0
    } else {
        let sx = 0.5 * (-dim_q.sqrt() + (2.0 * threshold - dim_q).sqrt());
        (-sx * sx).exp()
    };
    let delta_mu =
        diamond4 + rho_mu + (kdens * mu * dim_q / 2.0 - (1.0 - eps_mu) * x_mu).exp() / (1.0 - eps_mu);
    Ok(SharpBoundTerms {
        x_mu,
        eps_mu,
        omega,
        diamond4,
        rho_mu,
        delta_mu,
    })
}

/// Simplified correction scale for sums of n i.i.d. observations:
/// c_scale · x^{3/2} · dim_Q^{3/2} / n.
pub fn iid_delta_bound(x: f64, dim_q: f64, n: usize, c_scale: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Validation("n must be at least 1".into()));
    }
    if x < 0.0 || dim_q < 0.0 || c_scale < 0.0 {
        return Err(Error::Validation(
            "x, dim_q, c_scale must be nonnegative".into(),
        ));
    }
    Ok(c_scale * x.powf(1.5) * dim_q.powf(1.5) / n as f64)
}
