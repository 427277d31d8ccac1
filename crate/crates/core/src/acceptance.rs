//! The library's pass/fail acceptance suite: thirteen self-contained
//! criteria spanning the quantile formulas, the solvers, the expansion
//! certificates, and the Monte Carlo harness.
//!
//! Each criterion has a stable one-based id, a short kebab-case name, and
//! a detail string with the decisive numbers. Details never contain
//! timings, so serialized results of one seed are byte-stable across
//! reruns; wall times travel separately for display and budget checks.
//! Criteria that fail report what was measured rather than being skipped.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::calming::{
    c3_constant, effective_dimension, effective_score, extended_loglik, fisher_wilks_report,
    fit_joint, fit_profile, population_target, CalmedProblem, EstimationConsts, ExtendedPoint,
    FIT_MAX_ITER, FIT_TOL,
};
use crate::linalg;
use crate::mc_harness::{
    run_estimation_experiment, run_risk_experiment, run_tail_experiment, Experiment,
    ExperimentConfig, Report,
};
use crate::model::{fixture_by_name, smoothed_map, LocalSet, RegressionModel, Smoother};
use crate::penalty::{effective_dim_w, select_w_balance, select_w_risk, PenaltyPath};
use crate::qform_bounds::{
    exp_moment_bound, gaussian_det_moment, lower_tail_threshold, solve_xc, spectrum_stats,
    SpectrumStats,
};
use crate::quad_oracle::{linear_perturb_shift, quad_penalty_bias, QuadObjective};
use crate::rng::CounterRng;
use crate::semiparam::{
    orthogonalize, partial_quad_shift, sandwich_check, semiorthogonality_argmax_check,
    separability_rho, transformed_mixed_derivative, BlockHessian,
};
use crate::tilted_moments::{iid_tau_scaling, tau34, ScalarLaw};
use crate::{Error, Result};

/// Number of criteria in the suite.
pub const CRITERIA: usize = 13;

/// Wall-time budget of the upper-tail coverage criterion.
pub const UPPER_TAIL_BUDGET_S: f64 = 30.0;

/// Wall-time budget of the Fisher/Wilks criterion.
pub const FISHER_WILKS_BUDGET_S: f64 = 120.0;

/// Wall-time budget of the whole suite.
pub const SUITE_BUDGET_S: f64 = 600.0;

/// Root of the crossover defining equation for dim_a = 4, v = 2, g = 20,
/// frozen from an independent dense-grid-plus-bisection search.
const XC_REFERENCE_4_2_20: f64 = 146.2810544980895;

/// Balance weight for the 4-dimensional identity instance at C₀ = 1:
/// the positive root of w² + w − 4 = 0.
const BALANCE_REFERENCE: f64 = 1.5615528128088303;

const NAMES: [&str; CRITERIA] = [
    "gaussian-upper-tail",
    "lower-tail",
    "exp-regime-tail",
    "exp-moment-domination",
    "crossover-solver",
    "joint-profile-equivalence",
    "quadratic-oracles",
    "fisher-wilks",
    "risk-decomposition",
    "penalty-selection",
    "orthogonalization",
    "tilted-moments",
    "determinism",
];

/// Options of one suite run.
#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    /// Base seed of every randomized criterion.
    pub seed: u64,
    /// Cuts replication and instance counts for a fast smoke run. Where a
    /// criterion compares Monte Carlo averages, its relative tolerance
    /// widens to keep the reduced run statistically resolvable.
    pub quick: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            quick: false,
        }
    }
}

/// Outcome of one criterion.
#[derive(Clone, Debug)]
pub struct CriterionResult {
    /// One-based stable id.
    pub id: usize,
    /// Short kebab-case name.
    pub name: &'static str,
    pub pass: bool,
    /// The decisive measurements. Never contains timings, so results of
    /// one seed serialize identically across reruns.
    pub detail: String,
    /// Wall time of this criterion alone.
    pub wall_time_s: f64,
}

/// Runs one criterion by id. Errors inside a criterion are reported as a
/// failing result rather than propagated, so a broken check never hides
/// the rest of the suite.
pub fn run_criterion(id: usize, opts: &SuiteOptions) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => gaussian_upper_tail(opts),
        2 => lower_tail(opts),
        3 => exp_regime_tail(opts),
        4 => exp_moment_domination(opts),
        5 => crossover_solver(opts),
        6 => joint_profile_equivalence(opts),
        7 => quadratic_oracles(opts),
        8 => fisher_wilks(opts),
        9 => risk_decomposition(opts),
        10 => penalty_selection(opts),
        11 => orthogonalization(opts),
        12 => tilted_moments_check(opts),
        13 => determinism(opts),
        _ => Err(Error::Validation(format!(
            "criterion id {id} outside 1..={CRITERIA}"
        ))),
    };
    let (pass, detail) = match outcome {
        Ok(checked) => checked,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id,
        name: NAMES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"),
        pass,
        detail,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Runs every criterion in id order.
pub fn run_all(opts: &SuiteOptions) -> Vec<CriterionResult> {
    (1..=CRITERIA).map(|id| run_criterion(id, opts)).collect()
}

/// Serializes results as CSV with columns id, name, pass, detail. Wall
/// times are omitted so two runs with one seed produce identical bytes.
pub fn results_to_csv(results: &[CriterionResult]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let render = |e: csv::Error| Error::Numerical(format!("csv rendering: {e}"));
    writer
        .write_record(["id", "name", "pass", "detail"])
        .map_err(render)?;
    for r in results {
        writer
            .write_record([
                r.id.to_string(),
                r.name.to_string(),
                r.pass.to_string(),
                r.detail.clone(),
            ])
            .map_err(render)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Numerical(format!("csv rendering: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numerical(format!("csv rendering: {e}")))
}

/// JSON summary of a suite run: options, per-criterion pass flags and wall
/// times, and the total. Pairs with the CSV, which stays free of timings.
pub fn suite_json(results: &[CriterionResult], opts: &SuiteOptions) -> serde_json::Value {
    serde_json::json!({
        "seed": opts.seed,
        "quick": opts.quick,
        "all_pass": results.iter().all(|r| r.pass),
        "total_wall_time_s": results.iter().map(|r| r.wall_time_s).sum::<f64>(),
        "criteria": results
            .iter()
            .map(|r| {
                serde_json::json!({
                    "id": r.id,
                    "name": r.name,
                    "pass": r.pass,
                    "wall_time_s": r.wall_time_s,
                })
            })
            .collect::<Vec<_>>(),
        "library_version": env!("CARGO_PKG_VERSION"),
    })
}

fn tail_replications(opts: &SuiteOptions) -> usize {
    if opts.quick {
        20_000
    } else {
        200_000
    }
}

fn row_value(report: &Report, statistic: &str) -> f64 {
    report
        .rows
        .iter()
        .find(|r| r.statistic == statistic)
        .map(|r| r.empirical)
        .unwrap_or(f64::NAN)
}

/// Largest empirical − (bound + 3·stderr) margin over the report rows;
/// nonpositive means every row passed with room to spare.
fn worst_tail_margin(report: &Report) -> f64 {
    report
        .rows
        .iter()
        .map(|r| r.empirical - r.bound - 3.0 * r.std_error)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Gaussian draws in dimension 20 against the sub-gaussian upper quantile
/// at levels 0.5 through 3, inside a 30-second budget.
fn gaussian_upper_tail(opts: &SuiteOptions) -> Result<(bool, String)> {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new(Experiment::TailUpper);
    cfg.seed = opts.seed;
    cfg.replications = tail_replications(opts);
    let report = run_tail_experiment(&cfg)?;
    let within_budget = start.elapsed().as_secs_f64() < UPPER_TAIL_BUDGET_S;
    let mut detail = format!(
        "{} draws, dimension 20, levels 0.5/1/2/3: worst exceedance margin {:.2e}",
        cfg.replications,
        worst_tail_margin(&report)
    );
    if !within_budget {
        detail.push_str("; runtime budget exceeded");
    }
    Ok((report.all_pass() && within_budget, detail))
}

/// Undershoot of the lower threshold tr B − 2√(x·tr B²) in dimension 16 at
/// x = 1, plus the exact threshold value 16 − 8 = 8.
fn lower_tail(opts: &SuiteOptions) -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::new(Experiment::TailLower);
    cfg.seed = opts.seed;
    cfg.replications = tail_replications(opts);
    let report = run_tail_experiment(&cfg)?;
    let lt = lower_tail_threshold(&SpectrumStats::identity(16), 1.0)?;
    let threshold_exact = lt.threshold == 8.0 && !lt.vacuous;
    let rate = row_value(&report, "lower_x_1");
    Ok((
        report.all_pass() && threshold_exact,
        format!(
            "{} draws, dimension 16, x = 1: threshold {} (exactly 8: {}), undershoot rate {:.5} \
             against bound 1.1e^-1 plus 3 stderr",
            cfg.replications, lt.threshold, threshold_exact, rate
        ),
    ))
}

/// Rademacher draws in dimension 20 against the piecewise quantile with
/// moment radius g = 5; the level grid crosses the crossover point.
fn exp_regime_tail(opts: &SuiteOptions) -> Result<(bool, String)> {
    let mut cfg = ExperimentConfig::new(Experiment::TailExpRegime);
    cfg.seed = opts.seed;
    cfg.replications = tail_replications(opts);
    let report = run_tail_experiment(&cfg)?;
    let sol = solve_xc(5.0, &SpectrumStats::identity(20))?;
    let crosses = cfg.x_grid.iter().any(|&x| x > sol.x_c) && cfg.x_grid.iter().any(|&x| x <= sol.x_c);
    Ok((
        report.all_pass() && crosses,
        format!(
            "{} Rademacher draws, dimension 20, g = 5: crossover x_c = {:.4}, grid 1/2/3 covers \
             both branches ({}), worst exceedance margin {:.2e}",
            cfg.replications,
            sol.x_c,
            crosses,
            worst_tail_margin(&report)
        ),
    ))
}

/// The closed-form exponential-moment bound dominates the exact Gaussian
/// determinant moment on random normalized PSD matrices across tilts.
fn exp_moment_domination(opts: &SuiteOptions) -> Result<(bool, String)> {
    let instances = if opts.quick { 25 } else { 100 };
    let mut rng = CounterRng::new(opts.seed, 1001);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut violations = 0usize;
    let mut checked = 0usize;
    for _ in 0..instances {
        let p = 1 + (rng.next_u64() % 20) as usize;
        let w = DMatrix::from_fn(p, p, |_, _| rng.normal());
        let mut b = &w * w.transpose();
        b /= linalg::op_norm_sym(&b);
        let stats = spectrum_stats(&b)?;
        for k in 1..=9 {
            let mu = k as f64 / 10.0;
            let bound = exp_moment_bound(&stats, mu)?;
            let exact = gaussian_det_moment(&b, mu)?;
            let gap = exact - bound;
            if gap > 1e-12 * (1.0 + exact.abs()) {
                violations += 1;
            }
            worst_gap = worst_gap.max(gap);
            checked += 1;
        }
    }
    Ok((
        violations == 0,
        format!(
            "{checked} matrix-tilt pairs ({instances} random PSD with unit norm, p <= 20, \
             mu = 0.1..0.9): {violations} violations, worst exact-minus-bound gap {:.2e}",
            worst_gap
        ),
    ))
}

/// Crossover solver on dim_a = 4, v = 2, g = 20: the residual and bracket
/// checks pass and an independent dense grid confirms the root, but the
/// root sits outside the expected window (135, 140), so the criterion as
/// stated fails and says why.
fn crossover_solver(_opts: &SuiteOptions) -> Result<(bool, String)> {
    let stats = SpectrumStats::new(4.0, 4.0, 1.0)?;
    let g = 20.0;
    let sol = solve_xc(g, &stats)?;
    let v = stats.v2.sqrt();
    let gap = |x: f64| {
        let mu = 1.0 / (1.0 + v / (2.0 * x.sqrt()));
        let lhs = (g - (stats.dim_a * mu).sqrt()) / mu;
        let rhs = (stats.dim_a + 2.0 * v * x.sqrt() + 2.0 * x).sqrt() + 1.0;
        lhs - rhs
    };
    let residual = gap(sol.x_c).abs();
    let residual_ok = residual <= 1e-8;
    let bracket_ok = gap(sol.x_c / 2.0) > 0.0 && gap(sol.x_c * 2.0) < 0.0;

    // Independent locator: scan [100, 200] in steps of 0.01 for the sign
    // change, then bisect the bracketing cell.
    let mut oracle = f64::NAN;
    let mut prev_x = 100.0;
    let mut prev_gap = gap(prev_x);
    for i in 1..=10_000 {
        let x = 100.0 + i as f64 * 0.01;
        let cur = gap(x);
        if prev_gap > 0.0 && cur <= 0.0 {
            let (mut lo, mut hi) = (prev_x, x);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if gap(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            oracle = 0.5 * (lo + hi);
            break;
        }
        prev_x = x;
        prev_gap = cur;
    }
    let oracle_ok = oracle.is_finite()
        && (oracle - sol.x_c).abs() <= 1e-6 * (1.0 + oracle.abs())
        && (oracle - XC_REFERENCE_4_2_20).abs() <= 1e-6;
    let window_ok = sol.x_c > 135.0 && sol.x_c < 140.0;
    Ok((
        residual_ok && bracket_ok && oracle_ok && window_ok,
        format!(
            "x_c = {:.6}: defining-equation residual {:.1e}, bracket signs correct ({bracket_ok}), \
             dense-grid root {:.6} agrees ({oracle_ok}); the expected window (135, 140) {}",
            sol.x_c,
            residual,
            oracle,
            if window_ok {
                "contains the root"
            } else {
                "does not contain the root"
            }
        ),
    ))
}

/// Profile fits and joint alternating fits land on the same parameter on
/// all three fixtures across many random designs and noise draws.
fn joint_profile_equivalence(opts: &SuiteOptions) -> Result<(bool, String)> {
    let seeds = if opts.quick { 10 } else { 50 };
    let n = 48;
    let sigma = 0.1;
    let mut worst = 0.0f64;
    let mut runs = 0u64;
    for (name, weight) in [("linear", 0.5), ("exp-decay", 0.03), ("sine", 0.02)] {
        for k in 0..seeds {
            let fx = fixture_by_name(name, n, k as u64)?;
            let model: Arc<dyn RegressionModel> = Arc::from(fx.model);
            let p = model.p();
            let smoother = Smoother::identity(n);
            let (_, j0) = smoothed_map(model.as_ref(), &smoother, &fx.theta_star)?;
            let local = LocalSet::new(
                fx.theta_star.clone(),
                symmetrized(&j0 * j0.transpose()),
                0.5,
                1.0,
            )?;
            let m_star = model.value(&fx.theta_star);
            let mut rng = CounterRng::new(opts.seed, 2000 + runs);
            let z = &smoother.matrix * &m_star
                + DVector::from_fn(n, |_, _| sigma * rng.normal());
            let prob = CalmedProblem::new(
                Arc::clone(&model),
                smoother,
                DMatrix::identity(p, p) * weight,
                z.clone(),
                local,
            )?;
            let init = fx.theta_star.map(|t| t + 0.1);
            let (theta_p, trace_p) = fit_profile(&prob, &init, FIT_TOL, FIT_MAX_ITER)?;
            let start = ExtendedPoint {
                theta: init,
                eta: z,
            };
            let (joint, trace_j) = fit_joint(&prob, &start, FIT_TOL, FIT_MAX_ITER)?;
            if !(trace_p.converged && trace_j.converged) {
                return Ok((
                    false,
                    format!("{name} fixture, design seed {k}: a fit did not converge"),
                ));
            }
            worst = worst.max((&joint.theta - &theta_p).norm());
            runs += 1;
        }
    }
    Ok((
        worst <= 1e-8,
        format!(
            "{runs} paired fits (3 fixtures x {seeds} designs, n = {n}, sigma = {sigma}): \
             worst joint-vs-profile parameter gap {:.2e}",
            worst
        ),
    ))
}

fn lu_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Numerical("LU solve failed on a PD matrix".into()))
}

/// The three closed-form shift/gain identities against one-step Newton
/// maximization (via LU, a different factorization) and direct objective
/// evaluation, on random PD instances.
fn quadratic_oracles(opts: &SuiteOptions) -> Result<(bool, String)> {
    let instances = if opts.quick { 25 } else { 100 };
    let mut rng = CounterRng::new(opts.seed, 1003);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let p = 2 + (rng.next_u64() % 19) as usize;
        let w = DMatrix::from_fn(p, p, |_, _| rng.normal());
        let f_mat = symmetrized(&w * w.transpose() / p as f64) + DMatrix::identity(p, p) * 0.5;
        let center = DVector::from_fn(p, |_, _| rng.normal());
        let quad = QuadObjective::new(f_mat.clone(), center.clone(), rng.normal())?;

        // Linear perturbation: maximize q(u) + <a, u>.
        let a = DVector::from_fn(p, |_, _| rng.normal());
        let (shift, gain) = linear_perturb_shift(&quad, &a)?;
        let start = &center + DVector::from_fn(p, |_, _| rng.normal());
        let grad = quad.gradient(&start) + &a;
        let direct = &start + lu_solve(&f_mat, &grad)? - &center;
        worst = worst.max((&direct - &shift).norm() / (1.0 + shift.norm()));
        let perturbed = |u: &DVector<f64>| quad.value(u) + a.dot(u);
        let gain_direct = perturbed(&(&center + &shift)) - perturbed(&center);
        worst = worst.max((gain_direct - gain).abs() / (1.0 + gain.abs()));

        // Quadratic penalty: maximize q(u) - 0.5 u' G^2 u.
        let v = DMatrix::from_fn(p, p, |_, _| rng.normal());
        let g_sq = symmetrized(&v * v.transpose() / p as f64);
        let (bias, pen_gain) = quad_penalty_bias(&quad, &g_sq)?;
        let pen_grad = quad.gradient(&start) - &g_sq * &start;
        let direct = &start + lu_solve(&(&f_mat + &g_sq), &pen_grad)? - &center;
        worst = worst.max((&direct - &bias).norm() / (1.0 + bias.norm()));
        let penalized = |u: &DVector<f64>| quad.value(u) - 0.5 * u.dot(&(&g_sq * u));
        let pen_gain_direct = penalized(&(&center + &bias)) - penalized(&center);
        worst = worst.max((pen_gain_direct - pen_gain).abs() / (1.0 + pen_gain.abs()));

        // Partial shift: maximize the first block with the second held at a
        // deviation from its optimum.
        let p1 = p / 2;
        let q1 = p - p1;
        let blocks = BlockHessian::new(
            f_mat.view((0, 0), (p1, p1)).into_owned(),
            f_mat.view((0, p1), (p1, q1)).into_owned(),
            f_mat.view((p1, p1), (q1, q1)).into_owned(),
        )?;
        let eta_dev = DVector::from_fn(q1, |_, _| rng.normal());
        let part = partial_quad_shift(&blocks, &eta_dev)?;
        let theta0 = DVector::from_fn(p1, |_, _| rng.normal());
        let part_grad = -(&blocks.dtt * &theta0 + &blocks.a * &eta_dev);
        let direct = &theta0 + lu_solve(&blocks.dtt, &part_grad)?;
        worst = worst.max((&direct - &part).norm() / (1.0 + part.norm()));
    }
    Ok((
        worst <= 1e-10,
        format!(
            "{instances} random PD instances, p <= 20: worst relative disagreement {:.2e} \
             across shift positions and value gains",
            worst
        ),
    ))
}

/// Expansion residuals: exactly zero on the linear fixture, and within the
/// certified bounds with the required margin on the sine fixture.
fn fisher_wilks(opts: &SuiteOptions) -> Result<(bool, String)> {
    let start = Instant::now();

    // Linear fixture: the profile criterion is exactly quadratic, so both
    // expansion residuals vanish up to float arithmetic.
    let n = 40;
    let sigma = 0.1;
    let mut worst_fisher = 0.0f64;
    let mut worst_wilks = 0.0f64;
    for k in 0..10u64 {
        let fx = fixture_by_name("linear", n, k)?;
        let model: Arc<dyn RegressionModel> = Arc::from(fx.model);
        let p = model.p();
        let smoother = Smoother::identity(n);
        let (_, j0) = smoothed_map(model.as_ref(), &smoother, &fx.theta_star)?;
        let local = LocalSet::new(
            fx.theta_star.clone(),
            symmetrized(&j0 * j0.transpose()),
            0.5,
            1.0,
        )?;
        let m_star = model.value(&fx.theta_star);
        let phi_m_star = &smoother.matrix * &m_star;
        let mut rng = CounterRng::new(opts.seed, 3000 + k);
        let eps = DVector::from_fn(n, |_, _| sigma * rng.normal());
        let prob = CalmedProblem::new(
            Arc::clone(&model),
            smoother.clone(),
            DMatrix::identity(p, p) * 0.5,
            &phi_m_star + &eps,
            local,
        )?;
        let noiseless = prob.with_observations(phi_m_star.clone())?;
        let (theta_g, _) = population_target(&noiseless, &m_star)?;
        let (theta_tilde, trace) = fit_profile(&prob, &theta_g, FIT_TOL, FIT_MAX_ITER)?;
        if !trace.converged {
            return Ok((false, format!("linear fit {k} did not converge")));
        }
        let v_sq = DMatrix::identity(n, n) * (sigma * sigma);
        let xi = effective_score(&prob, &theta_g, &eps)?;
        let score = effective_dimension(&prob, &theta_g, &v_sq, 1.0)?.with_score(xi);
        let consts = EstimationConsts {
            c3: c3_constant(0.0, 0.0)?,
            tau: 0.0,
            varrho: 0.0,
        };
        let fw = fisher_wilks_report(&prob, &theta_tilde, &theta_g, &score, &consts)?;
        worst_fisher = worst_fisher.max(fw.fisher_residual);
        worst_wilks = worst_wilks.max(fw.wilks_residual);
    }
    let linear_ok = worst_fisher <= 1e-10 && worst_wilks <= 1e-10;

    // Sine fixture: warm-started replications against the finite-sample
    // bounds, with the certified curvature defect kept below one so the
    // bounds are non-vacuous.
    let mut cfg = ExperimentConfig::new(Experiment::Estimation);
    cfg.seed = opts.seed;
    cfg.replications = if opts.quick { 100 } else { 300 };
    let report = run_estimation_experiment(&cfg)?;
    let within_budget = start.elapsed().as_secs_f64() < FISHER_WILKS_BUDGET_S;
    let mut detail = format!(
        "linear: worst residuals {:.2e} (position) and {:.2e} (objective) over 10 fits; \
         sine ({} replications): within-bound fractions {:.3}/{:.3}, median position ratio {:.4}, \
         curvature defect {:.3}",
        worst_fisher,
        worst_wilks,
        cfg.replications,
        row_value(&report, "fisher_within_fraction"),
        row_value(&report, "wilks_within_fraction"),
        row_value(&report, "fisher_ratio_median"),
        row_value(&report, "omega_gg"),
    );
    if !within_budget {
        detail.push_str("; runtime budget exceeded");
    }
    Ok((linear_ok && report.all_pass() && within_budget, detail))
}

/// Trimmed Monte Carlo risk against the predicted dimension-plus-bias
/// decomposition, exactly on the linear fixture and to the stated relative
/// tolerance on the sine fixture.
fn risk_decomposition(opts: &SuiteOptions) -> Result<(bool, String)> {
    let replications = if opts.quick { 250 } else { 1000 };

    let mut lin = ExperimentConfig::new(Experiment::Risk);
    lin.seed = opts.seed;
    lin.replications = replications;
    if opts.quick {
        lin.risk_rel_tol = 0.08;
    }
    let lin_report = run_risk_experiment(&lin)?;

    let mut sin = ExperimentConfig::new(Experiment::Risk);
    sin.seed = opts.seed;
    sin.replications = replications;
    sin.fixture = "sine".into();
    sin.sigma = 0.05;
    sin.penalty_w = 0.1;
    sin.risk_rel_tol = if opts.quick { 0.30 } else { 0.15 };
    let sin_report = run_risk_experiment(&sin)?;

    Ok((
        lin_report.all_pass() && sin_report.all_pass(),
        format!(
            "{replications} replications each: linear relative error {:.4} (tolerance {}), \
             sine relative error {:.4} (tolerance {})",
            row_value(&lin_report, "risk_relative_error"),
            lin.risk_rel_tol,
            row_value(&sin_report, "risk_relative_error"),
            sin.risk_rel_tol,
        ),
    ))
}

/// Weight selection on the identity instance against closed-form roots,
/// and strict monotonicity of the effective dimension in the weight.
fn penalty_selection(opts: &SuiteOptions) -> Result<(bool, String)> {
    let path = PenaltyPath::new(DMatrix::identity(4, 4), DMatrix::identity(4, 4), 1.0)?;
    let risk = select_w_risk(&path, (1e-4, 1e4))?;
    let risk_ok = (risk.w_star - 1.0).abs() <= 1e-4 && !risk.grid_fallback;
    let balance = select_w_balance(&path, 1.0)?;
    let balance_ok = (balance - BALANCE_REFERENCE).abs() <= 1e-6;

    let instances = if opts.quick { 15 } else { 50 };
    let mut rng = CounterRng::new(opts.seed, 1005);
    let mut monotone = true;
    for _ in 0..instances {
        let q = 3 + (rng.next_u64() % 6) as usize;
        let p = 2 + (rng.next_u64() % 5) as usize;
        let a = DMatrix::from_fn(q, p, |_, _| rng.normal());
        let l = DMatrix::from_fn(p, p, |_, _| rng.normal());
        let g0_sq = &l * l.transpose() + DMatrix::identity(p, p) * 0.1;
        let inst = PenaltyPath::new(a, g0_sq, 0.5 + rng.next_f64())?;
        let mut prev = f64::INFINITY;
        for i in 0..64 {
            let w = 1e-3 * 1e6f64.powf(i as f64 / 63.0);
            let cur = effective_dim_w(&inst, w)?;
            if cur >= prev {
                monotone = false;
            }
            prev = cur;
        }
    }
    Ok((
        risk_ok && balance_ok && monotone,
        format!(
            "identity instance: risk weight {:.6} (target 1), balance weight {:.8} \
             (target {:.8}); effective dimension strictly decreasing on {instances} random \
             instances: {monotone}",
            risk.w_star, balance, BALANCE_REFERENCE
        ),
    ))
}

/// One-point orthogonality of the reparameterized calmed objective, the
/// block-diagonal sandwich bounds, and stability of the inner argmax under
/// nuisance perturbations.
fn orthogonalization(opts: &SuiteOptions) -> Result<(bool, String)> {
    // Noiseless calmed sine problem at its population target.
    let n = 24;
    let fx = fixture_by_name("sine", n, opts.seed)?;
    let model: Arc<dyn RegressionModel> = Arc::from(fx.model);
    let p = model.p();
    let smoother = Smoother::identity(n);
    let (_, j0) = smoothed_map(model.as_ref(), &smoother, &fx.theta_star)?;
    let local = LocalSet::new(
        fx.theta_star.clone(),
        symmetrized(&j0 * j0.transpose()),
        0.25,
        1.0,
    )?;
    let m_star = model.value(&fx.theta_star);
    let prob = CalmedProblem::new(
        Arc::clone(&model),
        smoother.clone(),
        DMatrix::identity(p, p) * 0.1,
        &smoother.matrix * &m_star,
        local,
    )?;
    let (theta_g, eta_g) = population_target(&prob, &m_star)?;
    let pack = crate::calming::info_pack(&prob, &theta_g)?;
    let transform = orthogonalize(&pack.full_blocks)?;
    let objective = |theta: &DVector<f64>, eta: &DVector<f64>| -> f64 {
        let point = ExtendedPoint {
            theta: theta.clone(),
            eta: eta.clone(),
        };
        extended_loglik(&prob, &point).unwrap_or(f64::NAN)
    };
    let mixed = transformed_mixed_derivative(&objective, &transform, &theta_g, &eta_g)?;
    let mixed_max = mixed.amax();
    let mixed_ok = mixed_max <= 1e-6;

    let q = eta_g.len();
    let mut taus = vec![eta_g.clone()];
    for j in [0, q / 2, q - 1] {
        for delta in [1e-4, -1e-4] {
            let mut tau = eta_g.clone();
            tau[j] += delta;
            taus.push(tau);
        }
    }
    let argmax_dev = semiorthogonality_argmax_check(&objective, &transform, &theta_g, &taus)?;
    let argmax_ok = argmax_dev <= 1e-6;

    let instances = if opts.quick { 25 } else { 100 };
    let mut rng = CounterRng::new(opts.seed, 1007);
    let mut sandwich_all = true;
    let mut worst_rho = 0.0f64;
    for _ in 0..instances {
        let bp = 2 + (rng.next_u64() % 5) as usize;
        let bq = 2 + (rng.next_u64() % 8) as usize;
        let w = DMatrix::from_fn(bp, bp, |_, _| rng.normal());
        let v = DMatrix::from_fn(bq, bq, |_, _| rng.normal());
        let scale = 0.05 + 0.3 * rng.next_f64();
        let cross = DMatrix::from_fn(bp, bq, |_, _| scale * rng.normal());
        let blocks = BlockHessian::new(
            &w * w.transpose() / bp as f64 + DMatrix::identity(bp, bp) * 0.5,
            cross,
            &v * v.transpose() / bq as f64 + DMatrix::identity(bq, bq) * 0.5,
        )?;
        let rho = separability_rho(&blocks)?;
        worst_rho = worst_rho.max(rho);
        if !sandwich_check(&blocks.assemble(), &blocks, rho)? {
            sandwich_all = false;
        }
    }
    Ok((
        mixed_ok && argmax_ok && sandwich_all,
        format!(
            "transformed mixed derivative max {:.2e}; inner argmax deviation {:.2e} over {} \
             nuisance samples; sandwich bounds hold on {instances} random block matrices \
             (largest separability {:.3}): {sandwich_all}",
            mixed_max,
            argmax_dev,
            taus.len(),
            worst_rho
        ),
    ))
}

/// Tilted-moment summaries: Gaussian curvature corrections vanish exactly,
/// the Rademacher fourth summary hits its analytic endpoint, and the
/// independent-sum rescaling halves the third summary when n quadruples.
fn tilted_moments_check(_opts: &SuiteOptions) -> Result<(bool, String)> {
    let gauss = tau34(&ScalarLaw::Gaussian, 1.0, 2048)?;
    let gauss_ok = gauss.tau3 == 0.0 && gauss.tau4 == 0.0;
    let rad = tau34(&ScalarLaw::Rademacher, 1.0, 2048)?;
    let rad_ok = (rad.tau4 - 2.0).abs() <= 1e-6;
    let (t3_4, _) = iid_tau_scaling(rad.tau3, rad.tau4, 4)?;
    let (t3_16, _) = iid_tau_scaling(rad.tau3, rad.tau4, 16)?;
    let scaling_ok = t3_4 * 2.0 == rad.tau3 && t3_16 * 2.0 == t3_4;
    Ok((
        gauss_ok && rad_ok && scaling_ok,
        format!(
            "Gaussian tau3/tau4 exactly zero: {gauss_ok}; Rademacher tau4 = {:.8} vs analytic 2; \
             quadrupling n halves tau3 bit-exactly: {scaling_ok}",
            rad.tau4
        ),
    ))
}

/// Rerunning each experiment family at one seed reproduces the CSV bytes.
fn determinism(opts: &SuiteOptions) -> Result<(bool, String)> {
    let mut tail = ExperimentConfig::new(Experiment::TailUpper);
    tail.seed = 0;
    tail.replications = if opts.quick { 2000 } else { 5000 };
    let tail_a = run_tail_experiment(&tail)?.to_csv()?;
    let tail_b = run_tail_experiment(&tail)?.to_csv()?;

    let mut est = ExperimentConfig::new(Experiment::Estimation);
    est.seed = 0;
    est.replications = 100;
    let est_a = run_estimation_experiment(&est)?.to_csv()?;
    let est_b = run_estimation_experiment(&est)?.to_csv()?;

    let mut risk = ExperimentConfig::new(Experiment::Risk);
    risk.seed = 0;
    risk.replications = if opts.quick { 100 } else { 200 };
    let risk_a = run_risk_experiment(&risk)?.to_csv()?;
    let risk_b = run_risk_experiment(&risk)?.to_csv()?;

    let equal = tail_a == tail_b && est_a == est_b && risk_a == risk_b;
    Ok((
        equal,
        format!(
            "tail/estimation/risk reports rerun at seed 0: byte-identical CSV = {equal} \
             ({} + {} + {} bytes)",
            tail_a.len(),
            est_a.len(),
            risk_a.len()
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUICK: SuiteOptions = SuiteOptions {
        seed: 0,
        quick: true,
    };

    #[test]
    fn names_are_stable_and_ids_checked() {
        assert_eq!(NAMES.len(), CRITERIA);
        let bad = run_criterion(0, &QUICK);
        assert!(!bad.pass);
        assert!(bad.detail.contains("error:"));
        let r = run_criterion(12, &QUICK);
        assert_eq!(r.id, 12);
        assert_eq!(r.name, "tilted-moments");
    }

    #[test]
    fn exp_moment_domination_holds() {
        let r = run_criterion(4, &QUICK);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn crossover_criterion_reports_window_mismatch() {
        let r = run_criterion(5, &QUICK);
        assert!(!r.pass);
        assert!(r.detail.contains("does not contain the root"), "{}", r.detail);
        assert!(r.detail.contains("146.281054"), "{}", r.detail);
        assert!(r.detail.contains("bracket signs correct (true)"), "{}", r.detail);
    }

    #[test]
    fn quadratic_oracles_match_direct_optimization() {
        let r = run_criterion(7, &QUICK);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn penalty_selection_matches_roots() {
        let r = run_criterion(10, &QUICK);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn orthogonalization_criterion_passes() {
        let r = run_criterion(11, &QUICK);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn tilted_moment_criterion_passes() {
        let r = run_criterion(12, &QUICK);
        assert!(r.pass, "{}", r.detail);
    }

    #[test]
    fn csv_is_stable_and_free_of_timings() {
        let results = vec![
            CriterionResult {
                id: 1,
                name: "gaussian-upper-tail",
                pass: true,
                detail: "margin -1.2e-3, with a comma".into(),
                wall_time_s: 1.25,
            },
            CriterionResult {
                id: 5,
                name: "crossover-solver",
                pass: false,
                detail: "outside the window".into(),
                wall_time_s: 0.75,
            },
        ];
        let a = results_to_csv(&results).unwrap();
        let mut later = results.clone();
        later[0].wall_time_s = 9.0;
        let b = results_to_csv(&later).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("id,name,pass,detail\n"));
        assert!(a.contains("\"margin -1.2e-3, with a comma\""));
        assert!(!a.contains("1.25"));
        let json = suite_json(&results, &QUICK);
        assert_eq!(json["all_pass"], serde_json::json!(false));
        assert_eq!(json["criteria"][0]["wall_time_s"], serde_json::json!(1.25));
    }
}
