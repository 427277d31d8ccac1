//! Regression models m(θ): ℝᵖ → ℝⁿ with Jacobians and higher directional
//! derivatives, smoothing operators Φ, and sampling-based certificates for
//! the local regularity constants 𝙲_Φ, ω⁺, 𝖼₂, τ_k, ϱ.
//!
//! The smoothed map is M̄(θ) = Φ·m(θ) with gradient ∇M̄(θ) = ∇m(θ)·Φᵀ and
//! local information matrix 𝔻²(θ) = ∇M̄(θ)∇M̄(θ)ᵀ. Every condition checker
//! here is a seeded Monte Carlo certificate over the local ball
//! Θ∘ = {θ : ‖𝔻₀(θ−θ₀)‖ ≤ r₀}, not a proof: it reports the smallest
//! constant consistent with the sampled points.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{gen_eig_range, max_gen_eig, min_eig_sym, psd_inv_sqrt, psd_sqrt};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Smallest singular value for Φ to count as full row rank.
const PHI_RANK_TOL: f64 = 1e-10;
/// Relative slack when verifying certified inequalities, absorbing roundoff
/// in the linear (equality) cases.
const CHECK_SLACK: f64 = 1e-9;
/// Central-difference steps for directional derivatives of order 2, 3, 4.
/// Chosen so truncation and cancellation are both below the 1e-3 check
/// tolerance for the built-in fixtures on x ∈ [0, 3].
const FD_STEP: [f64; 3] = [1e-4, 5e-4, 6e-3];

/// A regression model m(θ): ℝᵖ → ℝⁿ.
///
/// `jacobian` returns ∇m(θ) as a p×n matrix whose i-th column is ∇mᵢ(θ).
/// `directional` returns the n-vector of ⟨∇ᵏmᵢ(θ), u⊗…⊗u⟩ for k ∈ {2,3,4}
/// when the model has analytic higher derivatives; checkers fall back to
/// nested central differences otherwise. `weighted_hessian` returns
/// Σᵢ wᵢ·∇²mᵢ(θ) (p×p) for models with analytic second derivatives.
pub trait RegressionModel: Send + Sync {
    fn p(&self) -> usize;
    fn n(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64>;
    fn directional(&self, _theta: &DVector<f64>, _u: &DVector<f64>, _k: usize) -> Option<DVector<f64>> {
        None
    }
    fn weighted_hessian(&self, _theta: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    fn name(&self) -> &'static str;
}

/// Linear model m(θ) = Ψᵀθ with a seeded random Ψ whose rows are
/// orthogonalized and scaled to ‖row‖² = n, so ∇m∇mᵀ = n·I_p.
pub struct LinearModel {
    psi: DMatrix<f64>,
}

impl LinearModel {
    pub fn seeded(p: usize, n: usize, seed: u64) -> Result<Self> {
        if p == 0 || n < p {
            return Err(Error::Validation(format!(
                "linear model needs 1 ≤ p ≤ n, got p = {p}, n = {n}"
            )));
        }
        let mut rng = CounterRng::new(seed, 7);
        // Gram-Schmidt on the rows, then scale each to squared norm n.
        let mut psi = DMatrix::from_fn(p, n, |_, _| rng.normal());
        for i in 0..p {
            for j in 0..i {
                let proj = psi.row(i).dot(&psi.row(j)) / psi.row(j).norm_squared();
                for col in 0..n {
                    psi[(i, col)] -= proj * psi[(j, col)];
                }
            }
            let norm = psi.row(i).norm();
            if norm < 1e-8 {
                return Err(Error::Numerical("degenerate random rows in Ψ".into()));
            }
            let scale = (n as f64).sqrt() / norm;
            psi.row_mut(i).scale_mut(scale);
        }
        Ok(Self { psi })
    }

    pub fn from_psi(psi: DMatrix<f64>) -> Self {
        Self { psi }
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }
}

impl RegressionModel for LinearModel {
    fn p(&self) -> usize {
        self.psi.nrows()
    }
    fn n(&self) -> usize {
        self.psi.ncols()
    }
    fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.psi.transpose() * theta
    }
    fn jacobian(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.psi.clone()
    }
    fn directional(&self, _theta: &DVector<f64>, _u: &DVector<f64>, k: usize) -> Option<DVector<f64>> {
        (2..=4).contains(&k).then(|| DVector::zeros(self.n()))
    }
    fn weighted_hessian(&self, _theta: &DVector<f64>, _w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.p(), self.p()))
    }
    fn name(&self) -> &'static str {
        "linear"
    }
}

/// Exponential decay curve m_i(θ) = θ₁·e^(−θ₂·xᵢ), p = 2.
pub struct ExpDecayModel {
    x: Vec<f64>,
}

impl ExpDecayModel {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("design points must be finite and nonempty".into()));
        }
        Ok(Self { x })
    }
}

impl RegressionModel for ExpDecayModel {
    fn p(&self) -> usize {
        2
    }
    fn n(&self) -> usize {
        self.x.len()
    }
    fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.x.iter().map(|&x| theta[0] * (-theta[1] * x).exp()))
    }
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2, self.n());
        for (i, &x) in self.x.iter().enumerate() {
            let e = (-theta[1] * x).exp();
            j[(0, i)] = e;
            j[(1, i)] = -theta[0] * x * e;
        }
        j
    }
    fn directional(&self, theta: &DVector<f64>, u: &DVector<f64>, k: usize) -> Option<DVector<f64>> {
        let (a, u1, u2) = (theta[0], u[0], u[1]);
        let per = |x: f64| -> Option<f64> {
            let e = (-theta[1] * x).exp();
            match k {
                2 => Some(e * (-2.0 * u1 * u2 * x + a * u2 * u2 * x * x)),
                3 => Some(e * (3.0 * u1 * u2 * u2 * x * x - a * u2.powi(3) * x.powi(3))),
                4 => Some(e * (-4.0 * u1 * u2.powi(3) * x.powi(3) + a * u2.powi(4) * x.powi(4))),
                _ => None,
            }
        };
        per(self.x[0])?;
        Some(DVector::from_iterator(
            self.n(),
            self.x.iter().map(|&x| per(x).unwrap()),
        ))
    }
    fn weighted_hessian(&self, theta: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(2, 2);
        for (i, &x) in self.x.iter().enumerate() {
            let e = (-theta[1] * x).exp();
            h[(0, 1)] += w[i] * (-x * e);
            h[(1, 1)] += w[i] * (theta[0] * x * x * e);
        }
        h[(1, 0)] = h[(0, 1)];
        Some(h)
    }
    fn name(&self) -> &'static str {
        "exp-decay"
    }
}

/// Sine curve m_i(θ) = θ₁·sin(θ₂·xᵢ), p = 2.
pub struct SineModel {
    x: Vec<f64>,
}

impl SineModel {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("design points must be finite and nonempty".into()));
        }
        Ok(Self { x })
    }
}

impl RegressionModel for SineModel {
    fn p(&self) -> usize {
        2
    }
    fn n(&self) -> usize {
        self.x.len()
    }
    fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.x.iter().map(|&x| theta[0] * (theta[1] * x).sin()))
    }
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2, self.n());
        for (i, &x) in self.x.iter().enumerate() {
            let (s, c) = (theta[1] * x).sin_cos();
            j[(0, i)] = s;
            j[(1, i)] = theta[0] * x * c;
        }
        j
    }
    fn directional(&self, theta: &DVector<f64>, u: &DVector<f64>, k: usize) -> Option<DVector<f64>> {
        let (a, u1, u2) = (theta[0], u[0], u[1]);
        let per = |x: f64| -> Option<f64> {
            let (s, c) = (theta[1] * x).sin_cos();
            match k {
                2 => Some(2.0 * u1 * u2 * x * c - a * u2 * u2 * x * x * s),
                3 => Some(-3.0 * u1 * u2 * u2 * x * x * s - a * u2.powi(3) * x.powi(3) * c),
                4 => Some(-4.0 * u1 * u2.powi(3) * x.powi(3) * c + a * u2.powi(4) * x.powi(4) * s),
                _ => None,
            }
        };
        per(self.x[0])?;
        Some(DVector::from_iterator(
            self.n(),
            self.x.iter().map(|&x| per(x).unwrap()),
        ))
    }
    fn weighted_hessian(&self, theta: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(2, 2);
        for (i, &x) in self.x.iter().enumerate() {
            let (s, c) = (theta[1] * x).sin_cos();
            h[(0, 1)] += w[i] * (x * c);
            h[(1, 1)] += w[i] * (-theta[0] * x * x * s);
        }
        h[(1, 0)] = h[(0, 1)];
        Some(h)
    }
    fn name(&self) -> &'static str {
        "sine"
    }
}

/// One-dimensional model m(θ) = θ², p = n = 1, used as a hand-checkable
/// fixture: ∇m = 2θ, ⟨∇²m, u⊗u⟩ = 2u², higher derivatives vanish.
pub struct ScalarSquareModel;

impl RegressionModel for ScalarSquareModel {
    fn p(&self) -> usize {
        1
    }
    fn n(&self) -> usize {
        1
    }
    fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, theta[0] * theta[0])
    }
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 * theta[0])
    }
    fn directional(&self, _theta: &DVector<f64>, u: &DVector<f64>, k: usize) -> Option<DVector<f64>> {
        match k {
            2 => Some(DVector::from_element(1, 2.0 * u[0] * u[0])),
            3 | 4 => Some(DVector::zeros(1)),
            _ => None,
        }
    }
    fn weighted_hessian(&self, _theta: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 2.0 * w[0]))
    }
    fn name(&self) -> &'static str {
        "scalar-square"
    }
}

/// A named built-in model together with its reference parameter, used by
/// the experiment harness and the CLI.
pub struct Fixture {
    pub model: Box<dyn RegressionModel>,
    pub theta_star: DVector<f64>,
}

/// Resolves a model fixture by name. Design points for the curve models are
/// n uniform points on [0, 3]; the linear model uses p = 4.
pub fn fixture_by_name(name: &str, n: usize, seed: u64) -> Result<Fixture> {
    let grid = |n: usize| -> Vec<f64> {
        (0..n).map(|i| 3.0 * (i as f64 + 1.0) / n as f64).collect()
    };
    match name {
        "linear" => Ok(Fixture {
            model: Box::new(LinearModel::seeded(4, n.max(4), seed)?),
            theta_star: DVector::from_vec(vec![1.0, -0.5, 0.25, 0.75]),
        }),
        "exp-decay" => Ok(Fixture {
            model: Box::new(ExpDecayModel::new(grid(n))?),
            theta_star: DVector::from_vec(vec![1.0, 1.0]),
        }),
        "sine" => Ok(Fixture {
            model: Box::new(SineModel::new(grid(n))?),
            theta_star: DVector::from_vec(vec![1.0, 2.0]),
        }),
        "scalar-square" => Ok(Fixture {
            model: Box::new(ScalarSquareModel),
            theta_star: DVector::from_element(1, 1.0),
        }),
        other => Err(Error::Validation(format!(
            "unknown model fixture '{other}'; available: linear, exp-decay, sine, scalar-square"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmootherKind {
    Identity,
    RandomProjection,
    Tangent,
}

/// A smoothing operator Φ: ℝⁿ → ℝ^q applied to the observations and the
/// model image before estimation.
#[derive(Clone, Debug)]
pub struct Smoother {
    pub kind: SmootherKind,
    /// q×n matrix.
    pub matrix: DMatrix<f64>,
    /// The expansion point for the tangent kind.
    pub theta0: Option<DVector<f64>>,
}

impl Smoother {
    pub fn identity(n: usize) -> Self {
        Self {
            kind: SmootherKind::Identity,
            matrix: DMatrix::identity(n, n),
            theta0: None,
        }
    }

    /// Random projection with i.i.d. N(0, 1/n) entries. Construction checks
    /// the empirical entry mean and variance against 5 standard errors.
    pub fn random_projection(q: usize, n: usize, seed: u64) -> Result<Self> {
        if q == 0 || q > n {
            return Err(Error::Validation(format!(
                "projection needs 1 ≤ q ≤ n, got q = {q}, n = {n}"
            )));
        }
        let mut rng = CounterRng::new(seed, 11);
        let scale = 1.0 / (n as f64).sqrt();
        let matrix = DMatrix::from_fn(q, n, |_, _| scale * rng.normal());
        let count = (q * n) as f64;
        let mean = matrix.iter().sum::<f64>() / count;
        let var = matrix.iter().map(|e| e * e).sum::<f64>() / count;
        let mean_se = scale / count.sqrt();
        let var_se = (2.0_f64 / count).sqrt() / n as f64;
        if mean.abs() > 5.0 * mean_se {
            return Err(Error::Numerical(format!(
                "projection entry mean {mean} exceeds 5 standard errors"
            )));
        }
        if (var - 1.0 / n as f64).abs() > 5.0 * var_se {
            return Err(Error::Numerical(format!(
                "projection entry variance {var} is off 1/n beyond 5 standard errors"
            )));
        }
        Ok(Self {
            kind: SmootherKind::RandomProjection,
            matrix,
            theta0: None,
        })
    }

    /// Tangent smoother Φ = ∇m(θ₀): projects observations onto the model's
    /// tangent directions at θ₀, giving q = p.
    pub fn tangent(model: &dyn RegressionModel, theta0: &DVector<f64>) -> Self {
        Self {
            kind: SmootherKind::Tangent,
            matrix: model.jacobian(theta0),
            theta0: Some(theta0.clone()),
        }
    }

    pub fn q(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    /// Soft spectral check for random projections: singular values inside
    /// the asymptotic bracket [1 − √(q/n), 1 + √(q/n)] with 25% slack.
    /// Advisory only; callers may warn but should not fail on it.
    pub fn spectrum_in_bracket(&self) -> bool {
        let svd = self.matrix.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let edge = (self.q() as f64 / self.n() as f64).sqrt();
        smin >= 0.75 * (1.0 - edge) - 0.05 && smax <= 1.25 * (1.0 + edge) + 0.05
    }

    fn require_full_rank(&self) -> Result<()> {
        let svd = self.matrix.clone().svd(false, false);
        if svd.singular_values.min() <= PHI_RANK_TOL {
            return Err(Error::Validation(format!(
                "Φ is rank deficient: smallest singular value {}",
                svd.singular_values.min()
            )));
        }
        Ok(())
    }
}

/// The local ball Θ∘ = {θ : ‖𝔻₀(θ−θ₀)‖ ≤ r₀} around the reference point,
/// with 𝔻₀² = ∇M̄(θ₀)∇M̄(θ₀)ᵀ and ring constant 𝙲∘.
#[derive(Clone, Debug)]
pub struct LocalSet {
    pub theta0: DVector<f64>,
    pub d0_sq: DMatrix<f64>,
    pub r0: f64,
    pub c_ring: f64,
}

impl LocalSet {
    pub fn new(theta0: DVector<f64>, d0_sq: DMatrix<f64>, r0: f64, c_ring: f64) -> Result<Self> {
        if r0 <= 0.0 || !r0.is_finite() {
            return Err(Error::Validation(format!("r0 = {r0} must be positive")));
        }
        if c_ring <= 0.0 {
            return Err(Error::Validation(format!("𝙲∘ = {c_ring} must be positive")));
        }
        if min_eig_sym(&d0_sq) < -1e-10 * (1.0 + d0_sq.amax()) {
            return Err(Error::Validation("𝔻₀² must be PSD".into()));
        }
        Ok(Self {
            theta0,
            d0_sq,
            r0,
            c_ring,
        })
    }

    /// Builds the local set at θ₀ from the model's own tangent information.
    pub fn from_model(
        model: &dyn RegressionModel,
        phi: &Smoother,
        theta0: &DVector<f64>,
        r0: f64,
    ) -> Result<Self> {
        let (_, grad) = smoothed_map(model, phi, theta0)?;
        let d0_sq = &grad * grad.transpose();
        Self::new(theta0.clone(), d0_sq, r0, 1.0)
    }

    pub fn contains(&self, theta: &DVector<f64>) -> Result<bool> {
        let d0 = psd_sqrt(&self.d0_sq)?;
        let dev = (&d0 * (theta - &self.theta0)).norm();
        Ok(dev <= self.r0 * (1.0 + CHECK_SLACK))
    }

    /// Effective sample size: λ_min(𝔻₀²).
    pub fn effective_n(&self) -> f64 {
        min_eig_sym(&self.d0_sq)
    }
}

/// Sample budget for the condition certificates: `n_theta` points of Θ∘,
/// `n_dirs` directions per point, all derived from `seed`.
#[derive(Clone, Copy, Debug)]
pub struct SampleSpec {
    pub n_theta: usize,
    pub n_dirs: usize,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n_theta: 200,
            n_dirs: 50,
            seed: 0,
        }
    }
}

fn unit_direction(rng: &mut CounterRng, p: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(p, |_, _| rng.normal());
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Draws θ = θ₀ + t·r₀·𝔻₀⁻¹·dir, which lies in Θ∘ for t ∈ [0, 1].
fn sample_theta(local: &LocalSet, d0_inv: &DMatrix<f64>, rng: &mut CounterRng) -> DVector<f64> {
    let p = local.theta0.len();
    let dir = unit_direction(rng, p);
    let t = rng.next_f64();
    &local.theta0 + d0_inv * dir * (t * local.r0)
}

/// M̄(θ) = Φ·m(θ) and ∇M̄(θ) = ∇m(θ)·Φᵀ.
pub fn smoothed_map(
    model: &dyn RegressionModel,
    phi: &Smoother,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if phi.n() != model.n() {
        return Err(Error::Validation(format!(
            "Φ has {} columns but the model has n = {}",
            phi.n(),
            model.n()
        )));
    }
    if theta.len() != model.p() {
        return Err(Error::Validation(format!(
            "θ has length {} but the model has p = {}",
            theta.len(),
            model.p()
        )));
    }
    let m = model.value(theta);
    let j = model.jacobian(theta);
    Ok((&phi.matrix * m, j * phi.matrix.transpose()))
}

/// Certifies the information-loss constant of Φ: the smallest 𝙲_Φ with
/// ∇m∇mᵀ ⪯ 𝙲_Φ·∇m Π_Φ ∇mᵀ over the sampled θ, where Π_Φ = Φᵀ(ΦΦᵀ)⁻¹Φ.
/// Always at least 1 because Π_Φ is an orthogonal projection.
pub fn check_phi_condition(
    model: &dyn RegressionModel,
    phi: &Smoother,
    theta_samples: &[DVector<f64>],
) -> Result<f64> {
    phi.require_full_rank()?;
    if theta_samples.is_empty() {
        return Err(Error::Validation("need at least one θ sample".into()));
    }
    let gram = &phi.matrix * phi.matrix.transpose();
    let mut worst: f64 = 1.0;
    for theta in theta_samples {
        let j = model.jacobian(theta);
        let full = &j * j.transpose();
        // JΠ_ΦJᵀ = (JΦᵀ)(ΦΦᵀ)⁻¹(JΦᵀ)ᵀ
        let jp = &j * phi.matrix.transpose();
        let projected = &jp * crate::linalg::solve_spd_mat(&gram, &jp.transpose())?;
        let c = max_gen_eig(&full, &projected).map_err(|_| {
            Error::Numerical("singular projected Gram ∇mΠ_Φ∇mᵀ".into())
        })?;
        worst = worst.max(c);
    }
    Ok(worst)
}

/// Certifies (ω⁺, 𝖼₂) over sampled θ ∈ Θ∘ and directions u:
/// the smallest ω⁺ with (1−ω⁺)𝔻₀² ⪯ 𝔻²(θ) ⪯ (1+ω⁺)𝔻₀², and the smallest
/// 𝖼₂ with Σⱼ|⟨∇²M̄ⱼ, u⊗u⟩| ≤ 𝖼₂·‖𝔻(θ)u‖².
pub fn check_grad_regularity(
    model: &dyn RegressionModel,
    phi: &Smoother,
    local: &LocalSet,
    samples: SampleSpec,
) -> Result<(f64, f64)> {
    let d0_inv = psd_inv_sqrt(&local.d0_sq)
        .map_err(|_| Error::Numerical("𝔻₀² is singular".into()))?;
    let mut omega_plus: f64 = 0.0;
    let mut c2: f64 = 0.0;
    let mut rng = CounterRng::new(samples.seed, 13);
    for _ in 0..samples.n_theta {
        let theta = sample_theta(local, &d0_inv, &mut rng);
        let (_, grad) = smoothed_map(model, phi, &theta)?;
        let d_sq = &grad * grad.transpose();
        let (lo, hi) = gen_eig_range(&d_sq, &local.d0_sq)?;
        omega_plus = omega_plus.max(1.0 - lo).max(hi - 1.0);
        for _ in 0..samples.n_dirs {
            let u = unit_direction(&mut rng, model.p());
            let d2 = directional_or_fd(model, &theta, &u, 2)?;
            let numer = (&phi.matrix * d2).abs().sum();
            let denom = (u.transpose() * &d_sq * &u)[(0, 0)];
            if denom <= 0.0 {
                return Err(Error::Numerical("direction with ‖𝔻u‖ = 0".into()));
            }
            c2 = c2.max(numer / denom);
        }
    }
    Ok((omega_plus, c2))
}

/// Certifies τ_k: the smallest τ with Σⱼ⟨∇ᵏM̄ⱼ, u^⊗k⟩² ≤ τ^(2k−2)·‖𝔻(θ)u‖^(2k)
/// over the sampled (θ, u); returns 0 for models with vanishing k-th
/// derivatives.
pub fn estimate_tau(
    model: &dyn RegressionModel,
    phi: &Smoother,
    local: &LocalSet,
    k: usize,
    samples: SampleSpec,
) -> Result<f64> {
    if !(2..=4).contains(&k) {
        return Err(Error::Validation(format!("derivative order k = {k} not in {{2, 3, 4}}")));
    }
    let d0_inv = psd_inv_sqrt(&local.d0_sq)
        .map_err(|_| Error::Numerical("𝔻₀² is singular".into()))?;
    let mut tau_pow: f64 = 0.0;
    let mut rng = CounterRng::new(samples.seed, 17 + k as u64);
    for _ in 0..samples.n_theta {
        let theta = sample_theta(local, &d0_inv, &mut rng);
        let (_, grad) = smoothed_map(model, phi, &theta)?;
        let d_sq = &grad * grad.transpose();
        for _ in 0..samples.n_dirs {
            let u = unit_direction(&mut rng, model.p());
            let dk = directional_or_fd(model, &theta, &u, k)?;
            let numer = (&phi.matrix * dk).norm_squared();
            let denom = (u.transpose() * &d_sq * &u)[(0, 0)];
            if denom <= 0.0 {
                return Err(Error::Numerical("direction with ‖𝔻u‖ = 0".into()));
            }
            tau_pow = tau_pow.max(numer / denom.powi(k as i32));
        }
    }
    Ok(tau_pow.powf(1.0 / (2.0 * k as f64 - 2.0)))
}

/// The largest of τ₂, τ₃, τ₄ on the same sample budget: the smoothness
/// constant entering ϱ = 2r₀τ.
pub fn estimate_tau_max(
    model: &dyn RegressionModel,
    phi: &Smoother,
    local: &LocalSet,
    samples: SampleSpec,
) -> Result<f64> {
    let mut tau: f64 = 0.0;
    for k in 2..=4 {
        tau = tau.max(estimate_tau(model, phi, local, k, samples)?);
    }
    Ok(tau)
}

/// ϱ = 2·r₀·τ and whether it clears the ϱ < 1/2 requirement.
pub fn check_r0(r0: f64, tau: f64) -> (f64, bool) {
    let varrho = 2.0 * r0 * tau;
    (varrho, varrho < 0.5)
}

/// Checks the image increment bound ‖M̄(θ)−M̄(θ₀)‖² ≤ (1+ω⁺)‖𝔻₀(θ−θ₀)‖²
/// at one θ ∈ Θ∘. Pass `omega_plus` from a prior certificate to avoid
/// recomputing it; `None` runs [`check_grad_regularity`] with defaults.
pub fn image_increment_check(
    model: &dyn RegressionModel,
    phi: &Smoother,
    local: &LocalSet,
    theta: &DVector<f64>,
    omega_plus: Option<f64>,
) -> Result<bool> {
    if !local.contains(theta)? {
        return Err(Error::Domain("θ is outside the local set Θ∘".into()));
    }
    let omega = match omega_plus {
        Some(w) => w,
        None => check_grad_regularity(model, phi, local, SampleSpec::default())?.0,
    };
    let (m_theta, _) = smoothed_map(model, phi, theta)?;
    let (m_zero, _) = smoothed_map(model, phi, &local.theta0)?;
    let lhs = (m_theta - m_zero).norm_squared();
    let d0 = psd_sqrt(&local.d0_sq)?;
    let rhs = (1.0 + omega) * (&d0 * (theta - &local.theta0)).norm_squared();
    Ok(lhs <= rhs + CHECK_SLACK * (1.0 + rhs))
}

/// ⟨∇ᵏmᵢ(θ), u^⊗k⟩ for all i: the model's analytic form when available,
/// otherwise central differences of t ↦ m(θ + t·u) of the matching order.
pub fn directional_or_fd(
    model: &dyn RegressionModel,
    theta: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    if let Some(d) = model.directional(theta, u, k) {
        return Ok(d);
    }
    if !(2..=4).contains(&k) {
        return Err(Error::Validation(format!("derivative order k = {k} not in {{2, 3, 4}}")));
    }
    let h = FD_STEP[k - 2] * (1.0 + theta.norm());
    let f = |t: f64| model.value(&(theta + u * t));
    Ok(match k {
        2 => (f(h) - f(0.0) * 2.0 + f(-h)) / (h * h),
        3 => (f(2.0 * h) - f(h) * 2.0 + f(-h) * 2.0 - f(-2.0 * h)) / (2.0 * h * h * h),
        _ => (f(2.0 * h) - f(h) * 4.0 + f(0.0) * 6.0 - f(-h) * 4.0 + f(-2.0 * h)) / h.powi(4),
    })
}

/// Verifies the model's Jacobian against central differences with step
/// 1e-6·(1+‖θ‖); returns the worst relative error over `n_probes` seeded
/// random probe parameters.
pub fn check_jacobian_fd(model: &dyn RegressionModel, theta: &DVector<f64>) -> Result<f64> {
    let h = 1e-6 * (1.0 + theta.norm());
    let j = model.jacobian(theta);
    let mut worst: f64 = 0.0;
    for a in 0..model.p() {
        let mut lo = theta.clone();
        let mut hi = theta.clone();
        lo[a] -= h;
        hi[a] += h;
        let fd = (model.value(&hi) - model.value(&lo)) / (2.0 * h);
        for i in 0..model.n() {
            let err = (j[(a, i)] - fd[i]).abs() / (1.0 + fd[i].abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn probe_thetas(p: usize, seed: u64, count: usize) -> Vec<DVector<f64>> {
        let mut rng = CounterRng::new(seed, 23);
        (0..count)
            .map(|_| DVector::from_fn(p, |_, _| 0.5 + 0.5 * rng.next_f64()))
            .collect()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let n = 40;
        let fixtures = ["linear", "exp-decay", "sine", "scalar-square"];
        for name in fixtures {
            let fx = fixture_by_name(name, n, 3).unwrap();
            for theta in probe_thetas(fx.model.p(), 5, 5) {
                let err = check_jacobian_fd(fx.model.as_ref(), &theta).unwrap();
                assert!(err < 1e-5, "{name}: jacobian FD error {err}");
            }
        }
    }

    #[test]
    fn analytic_directionals_match_fd() {
        for name in ["exp-decay", "sine", "scalar-square"] {
            let fx = fixture_by_name(name, 25, 9).unwrap();
            let mut rng = CounterRng::new(1, 29);
            let theta = DVector::from_fn(fx.model.p(), |_, _| 0.8 + 0.4 * rng.next_f64());
            let u = unit_direction(&mut rng, fx.model.p());
            for k in 2..=4 {
                let analytic = fx.model.directional(&theta, &u, k).unwrap();
                let h = FD_STEP[k - 2] * (1.0 + theta.norm());
                let f = |t: f64| fx.model.value(&(theta.clone() + &u * t));
                let fd = match k {
                    2 => (f(h) - f(0.0) * 2.0 + f(-h)) / (h * h),
                    3 => (f(2.0 * h) - f(h) * 2.0 + f(-h) * 2.0 - f(-2.0 * h))
                        / (2.0 * h * h * h),
                    _ => {
                        (f(2.0 * h) - f(h) * 4.0 + f(0.0) * 6.0 - f(-h) * 4.0 + f(-2.0 * h))
                            / h.powi(4)
                    }
                };
                let tol = if k == 2 { 1e-5 } else { 1e-3 };
                for i in 0..fx.model.n() {
                    let err = (analytic[i] - fd[i]).abs() / (1.0 + fd[i].abs());
                    assert!(err < tol, "{name} k={k} i={i}: err {err}");
                }
            }
        }
    }

    #[test]
    fn weighted_hessian_contracts_second_directional() {
        // uᵀ(Σᵢ wᵢ∇²mᵢ)u must equal Σᵢ wᵢ⟨∇²mᵢ, u⊗u⟩.
        for name in ["exp-decay", "sine", "scalar-square", "linear"] {
            let fx = fixture_by_name(name, 12, 2).unwrap();
            let mut rng = CounterRng::new(4, 31);
            let theta = DVector::from_fn(fx.model.p(), |_, _| 0.9 + 0.2 * rng.next_f64());
            let u = unit_direction(&mut rng, fx.model.p());
            let w = DVector::from_fn(fx.model.n(), |_, _| rng.normal());
            let h = fx.model.weighted_hessian(&theta, &w).unwrap();
            let quad = (u.transpose() * &h * &u)[(0, 0)];
            let d2 = fx.model.directional(&theta, &u, 2).unwrap();
            assert_relative_eq!(quad, w.dot(&d2), epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn smoothed_map_identity_and_linear() {
        let fx = fixture_by_name("sine", 30, 1).unwrap();
        let phi = Smoother::identity(30);
        let theta = DVector::from_vec(vec![1.0, 2.0]);
        let (mbar, _) = smoothed_map(fx.model.as_ref(), &phi, &theta).unwrap();
        assert_relative_eq!(
            (mbar - fx.model.value(&theta)).norm(),
            0.0,
            epsilon = 1e-14
        );

        let lin = LinearModel::seeded(3, 20, 8).unwrap();
        let proj = Smoother::random_projection(10, 20, 8).unwrap();
        let g1 = smoothed_map(&lin, &proj, &DVector::zeros(3)).unwrap().1;
        let g2 = smoothed_map(&lin, &proj, &DVector::from_element(3, 5.0))
            .unwrap()
            .1;
        assert_relative_eq!((g1.clone() - g2).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(
            (g1 - lin.psi() * proj.matrix.transpose()).norm(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn smoothed_map_gradient_matches_fd() {
        let fx = fixture_by_name("sine", 25, 6).unwrap();
        let phi = Smoother::random_projection(12, 25, 6).unwrap();
        let theta = DVector::from_vec(vec![1.1, 1.9]);
        let (_, grad) = smoothed_map(fx.model.as_ref(), &phi, &theta).unwrap();
        let h = 1e-6 * (1.0 + theta.norm());
        for a in 0..2 {
            let mut lo = theta.clone();
            let mut hi = theta.clone();
            lo[a] -= h;
            hi[a] += h;
            let fd = (&phi.matrix * fx.model.value(&hi) - &phi.matrix * fx.model.value(&lo))
                / (2.0 * h);
            for j in 0..phi.q() {
                assert_relative_eq!(grad[(a, j)], fd[j], epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn phi_condition_identity_and_tangent() {
        let fx = fixture_by_name("sine", 30, 2).unwrap();
        let theta0 = fx.theta_star.clone();
        let id = Smoother::identity(30);
        let c = check_phi_condition(fx.model.as_ref(), &id, &[theta0.clone()]).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-8);
        let tangent = Smoother::tangent(fx.model.as_ref(), &theta0);
        let c = check_phi_condition(fx.model.as_ref(), &tangent, &[theta0.clone()]).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-8);
        assert_eq!(tangent.theta0.as_ref().unwrap(), &theta0);
    }

    #[test]
    fn phi_condition_is_smallest_certified_constant() {
        // Independent certificate: ∇m∇mᵀ ⪯ c·∇mΠ∇mᵀ holds at the returned c
        // and fails at c·(1−1e-6).
        let lin = LinearModel::seeded(3, 24, 4).unwrap();
        let proj = Smoother::random_projection(12, 24, 4).unwrap();
        let theta = DVector::zeros(3);
        let c = check_phi_condition(&lin, &proj, &[theta.clone()]).unwrap();
        assert!(c >= 1.0);
        let j = lin.jacobian(&theta);
        let full = &j * j.transpose();
        let gram = &proj.matrix * proj.matrix.transpose();
        let jp = &j * proj.matrix.transpose();
        let projected = &jp * crate::linalg::solve_spd_mat(&gram, &jp.transpose()).unwrap();
        let at = |s: f64| min_eig_sym(&(&projected * s - &full));
        assert!(at(c * (1.0 + 1e-9)) >= -1e-9 * full.amax());
        assert!(at(c * (1.0 - 1e-6)) < 0.0);
    }

    #[test]
    fn grad_regularity_linear_is_exact() {
        let lin = LinearModel::seeded(3, 30, 5).unwrap();
        let phi = Smoother::identity(30);
        let theta0 = DVector::from_element(3, 0.5);
        let local = LocalSet::from_model(&lin, &phi, &theta0, 1.0).unwrap();
        let spec = SampleSpec {
            n_theta: 50,
            n_dirs: 20,
            seed: 0,
        };
        let (omega, c2) = check_grad_regularity(&lin, &phi, &local, spec).unwrap();
        assert!(omega.abs() < 1e-9, "ω⁺ = {omega}");
        assert!(c2.abs() < 1e-9, "𝖼₂ = {c2}");
    }

    #[test]
    fn grad_regularity_exp_decay_golden() {
        let fx = fixture_by_name("exp-decay", 50, 0).unwrap();
        let phi = Smoother::identity(50);
        let local = LocalSet::from_model(fx.model.as_ref(), &phi, &fx.theta_star, 0.05).unwrap();
        let spec = SampleSpec {
            n_theta: 100,
            n_dirs: 25,
            seed: 0,
        };
        let (omega, _) = check_grad_regularity(fx.model.as_ref(), &phi, &local, spec).unwrap();
        assert!(omega < 0.1, "ω⁺ = {omega} on the small-radius fixture");
        assert!(omega > 0.0);

        // Shrinking r0 with the same seed scales every sample toward θ₀,
        // so the certified ω⁺ cannot grow.
        let half = LocalSet::from_model(fx.model.as_ref(), &phi, &fx.theta_star, 0.025).unwrap();
        let (omega_half, _) = check_grad_regularity(fx.model.as_ref(), &phi, &half, spec).unwrap();
        assert!(omega_half <= omega);
    }

    #[test]
    fn tau_linear_vanishes_and_scalar_square_hand_value() {
        let lin = LinearModel::seeded(3, 20, 6).unwrap();
        let phi = Smoother::identity(20);
        let local = LocalSet::from_model(&lin, &phi, &DVector::zeros(3), 1.0).unwrap();
        let spec = SampleSpec {
            n_theta: 20,
            n_dirs: 10,
            seed: 0,
        };
        for k in 2..=4 {
            assert_eq!(estimate_tau(&lin, &phi, &local, k, spec).unwrap(), 0.0);
        }

        // m(θ) = θ² at θ₀ = 1: 𝔻² = 4θ², ⟨∇²m, u⊗u⟩ = 2u², so the k = 2
        // ratio is 1/(2θ²), maximized at the smallest sampled θ. With
        // r₀ = 0.5 the set is θ ∈ [0.75, 1.25].
        let sq = ScalarSquareModel;
        let phi1 = Smoother::identity(1);
        let local = LocalSet::from_model(&sq, &phi1, &DVector::from_element(1, 1.0), 0.5).unwrap();
        let tau2 = estimate_tau(&sq, &phi1, &local, 2, spec).unwrap();
        assert!(tau2 > 1.0 / (2.0 * 1.25 * 1.25) && tau2 <= 1.0 / (2.0 * 0.75 * 0.75));
        assert!(estimate_tau(&sq, &phi1, &local, 5, spec).is_err());
    }

    #[test]
    fn tau_scales_with_effective_sample_size() {
        // τ ~ λ_min(𝔻₀²)^(−1/2): quadrupling n should roughly halve τ.
        let spec = SampleSpec {
            n_theta: 40,
            n_dirs: 15,
            seed: 0,
        };
        let mut taus = Vec::new();
        for n in [100, 400] {
            let fx = fixture_by_name("sine", n, 0).unwrap();
            let phi = Smoother::identity(n);
            let local = LocalSet::from_model(fx.model.as_ref(), &phi, &fx.theta_star, 0.25).unwrap();
            taus.push(estimate_tau_max(fx.model.as_ref(), &phi, &local, spec).unwrap());
        }
        let ratio = taus[1] / taus[0];
        assert!(
            ratio > 0.25 && ratio < 1.0,
            "τ(n=400)/τ(n=100) = {ratio}, expected ≈ 0.5 within factor 2"
        );
    }

    #[test]
    fn r0_check_cases() {
        assert_eq!(check_r0(1.0, 0.1), (0.2, true));
        assert_eq!(check_r0(3.0, 0.1), (0.6000000000000001, false).clone());
        let (v, pass) = check_r0(5.0, 0.0);
        assert_eq!(v, 0.0);
        assert!(pass);
    }

    #[test]
    fn image_increment_trivial_linear_and_sine() {
        let lin = LinearModel::seeded(3, 20, 7).unwrap();
        let phi = Smoother::identity(20);
        let theta0 = DVector::from_element(3, 0.2);
        let local = LocalSet::from_model(&lin, &phi, &theta0, 1.0).unwrap();
        assert!(image_increment_check(&lin, &phi, &local, &theta0, Some(0.0)).unwrap());
        // Linear case is an exact equality at ω⁺ = 0.
        let mut rng = CounterRng::new(2, 37);
        let d0_inv = psd_inv_sqrt(&local.d0_sq).unwrap();
        for _ in 0..20 {
            let theta = sample_theta(&local, &d0_inv, &mut rng);
            assert!(image_increment_check(&lin, &phi, &local, &theta, Some(0.0)).unwrap());
        }

        let fx = fixture_by_name("sine", 60, 1).unwrap();
        let phi = Smoother::identity(60);
        let local = LocalSet::from_model(fx.model.as_ref(), &phi, &fx.theta_star, 0.25).unwrap();
        let spec = SampleSpec {
            n_theta: 100,
            n_dirs: 20,
            seed: 0,
        };
        let (omega, _) = check_grad_regularity(fx.model.as_ref(), &phi, &local, spec).unwrap();
        let d0_inv = psd_inv_sqrt(&local.d0_sq).unwrap();
        let mut rng = CounterRng::new(3, 41);
        for _ in 0..500 {
            let theta = sample_theta(&local, &d0_inv, &mut rng);
            assert!(
                image_increment_check(fx.model.as_ref(), &phi, &local, &theta, Some(omega))
                    .unwrap()
            );
        }
        // Far outside the set the check must refuse.
        let far = &fx.theta_star + DVector::from_element(2, 10.0);
        assert!(matches!(
            image_increment_check(fx.model.as_ref(), &phi, &local, &far, Some(omega)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn random_projection_stats_and_rank() {
        let phi = Smoother::random_projection(20, 40, 0).unwrap();
        assert_eq!((phi.q(), phi.n()), (20, 40));
        assert!(phi.spectrum_in_bracket());
        assert!(phi.require_full_rank().is_ok());
        assert!(Smoother::random_projection(0, 10, 0).is_err());
        assert!(Smoother::random_projection(11, 10, 0).is_err());
    }

    #[test]
    fn fixture_names_resolve() {
        for name in ["linear", "exp-decay", "sine", "scalar-square"] {
            let fx = fixture_by_name(name, 30, 0).unwrap();
            assert_eq!(fx.model.name(), name);
            assert_eq!(fx.theta_star.len(), fx.model.p());
        }
        assert!(fixture_by_name("cubic", 30, 0).is_err());
    }

    #[test]
    fn local_set_validation_and_membership() {
        let fx = fixture_by_name("sine", 40, 0).unwrap();
        let phi = Smoother::identity(40);
        let local = LocalSet::from_model(fx.model.as_ref(), &phi, &fx.theta_star, 0.5).unwrap();
        assert!(local.contains(&fx.theta_star).unwrap());
        assert!(!local
            .contains(&(&fx.theta_star + DVector::from_element(2, 1.0)))
            .unwrap());
        assert!(local.effective_n() > 0.0);
        assert!(LocalSet::new(DVector::zeros(2), DMatrix::identity(2, 2), -1.0, 1.0).is_err());
    }
}
