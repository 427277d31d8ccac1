//! Finite-sample machinery for penalized nonlinear regression via calming.
//!
//! The library has three layers:
//!
//! - **Deviation bounds** ([`qform_bounds`], [`tilted_moments`]): closed-form
//!   quantiles and exponential-moment bounds for quadratic forms ‖Qξ‖² of
//!   sub-gaussian and light-exponential-tail noise, including the crossover
//!   level x_c separating the Gaussian-type and exponential tail regimes, and
//!   the tilted-cumulant constants τ₃/τ₄ that quantify non-Gaussianity.
//! - **Estimation** ([`model`], [`calming`], [`semiparam`], [`quad_oracle`],
//!   [`penalty`]): regression models with local-regularity certificates, the
//!   calmed (extended-parameter) likelihood with its exact nuisance step and
//!   penalized Gauss-Newton profile solver, effective score/dimension,
//!   Fisher/Wilks/bias/risk bound evaluators, block-Hessian orthogonalization,
//!   exact quadratic oracles, and penalty-weight selection.
//! - **Verification** ([`mc_harness`], [`acceptance`]): seeded, reproducible
//!   Monte Carlo experiments that check every guarantee empirically and emit
//!   deterministic CSV reports.

pub mod acceptance;
pub mod calming;
pub mod linalg;
pub mod mc_harness;
pub mod model;
pub mod penalty;
pub mod tilted_moments;
pub mod qform_bounds;
pub mod quad_oracle;
pub mod rng;
pub mod semiparam;

pub use acceptance::{run_all, run_criterion, CriterionResult, SuiteOptions, CRITERIA};
pub use calming::{
    bias_and_risk_bounds, c3_constant, effective_dimension, effective_score, eta_partial,
    extended_loglik, fisher_wilks_report, fit_joint, fit_profile, gauss_newton_step, info_pack,
    population_target, profile_objective, BiasRisk, CalmedProblem, EstimationConsts,
    ExtendedPoint, FisherWilksReport, FitTrace, InfoPack, ScoreReport,
};
pub use mc_harness::{
    run_estimation_experiment, run_risk_experiment, run_tail_experiment, Experiment,
    ExperimentConfig, NoiseKind, Report, ReportRow,
};
pub use model::{LocalSet, RegressionModel, Smoother, SmootherKind};
pub use penalty::{effective_dim_w, select_w_balance, select_w_risk, PenaltyPath, RiskSelection};
pub use semiparam::{
    composite_rho, orthogonalize, partial_quad_shift, sandwich_check, semiorthogonality_argmax_check,
    semiparam_bias_bound, separability_rho, transformed_mixed_derivative, BlockHessian,
    OrthoTransform,
};
pub use qform_bounds::{
    exp_moment_bound, gaussian_det_moment, lower_tail_threshold, min_g_for_gaussian_regime,
    mu_of_x, solve_xc, spectrum_stats, z_quantile, zc_quantile, ExpTailSolution, LowerTail,
    SpectrumStats,
};
pub use quad_oracle::{
    concentration_check, fisher_wilks_brackets, linear_perturb_shift, measured_omega,
    quad_penalty_bias, FisherWilksBrackets, QuadObjective,
};

pub use tilted_moments::{
    iid_delta_bound, iid_tau_scaling, sharp_bound_terms, tau34, tilted_cumulants, ScalarLaw,
    SharpBoundTerms, TiltedSummary,
};

/// Errors produced by the library.
///
/// The CLI maps these onto its exit codes: validation and domain errors are
/// usage-class failures (exit 2), numerical and condition failures happen at
/// run time (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input: wrong dimensions, broken invariants, bad config.
    #[error("validation: {0}")]
    Validation(String),
    /// Input outside an operation's mathematical domain (e.g. μ ≥ 1/‖B‖).
    #[error("domain: {0}")]
    Domain(String),
    /// A numerical procedure failed: singular system, overflow, no bracket,
    /// non-convergence.
    #[error("numerical: {0}")]
    Numerical(String),
    /// A theorem's hypotheses do not hold for the supplied values; the
    /// message lists the violated inequality.
    #[error("theorem conditions unmet: {0}")]
    ConditionsUnmet(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
