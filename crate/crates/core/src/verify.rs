//! Independent oracles and self-consistency checks of computed equilibria.
//!
//! Each check reports a measured value and the tolerance it was held to, so
//! the verdict can be re-derived from the record alone. Monte Carlo checks
//! measure the largest standard-error multiple (z-score) and pass at 3.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{check_assumptions, GameSpec};
use crate::linalg::{self, Vector};
use crate::riccati_ergodic::{solve_ergodic_system_with, ErgodicSolution};
use crate::riccati_finite::{hjb_residual, solve_finite_system_with, FiniteOptions, FiniteRiccatiSolution, TimeGrid};
use crate::simulate::{
    running_cost_average, simulate_ergodic, simulate_finite, simulate_policy, stationary_start, Estimate, InitialState,
    NoisePlan, PolicyTable, SimOptions, Source, TrajectoryEnsemble,
};
use crate::tolerances::{MC_SIGMAS, RESIDUAL_LOOSE, RESIDUAL_TIGHT};

/// `Λ(t)` solving `Λ' + 2aΛ − Λ²/r + 2q = 0`, `Λ(T) = 0` in one dimension:
/// `Λ = r[β tanh(β(T−t) − atanh(a/β)) + a]` with `β = √(a² + 2q/r)`.
pub fn scalar_lambda_oracle(a: f64, r: f64, q: f64, horizon: f64, t: f64) -> Result<f64> {
    if !(r > 0.0) || !(q > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("need r > 0, q > 0; got a={a}, r={r}, q={q}")));
    }
    if !(t <= horizon) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    let beta = (a * a + 2.0 * q / r).sqrt();
    let s = horizon - t;
    Ok(r * (beta * (beta * s - (a / beta).atanh()).tanh() + a))
}

/// Residual of the scalar Riccati equation at the oracle, with the time
/// derivative taken analytically.
pub fn scalar_oracle_residual(a: f64, r: f64, q: f64, horizon: f64, t: f64) -> Result<f64> {
    let lambda = scalar_lambda_oracle(a, r, q, horizon, t)?;
    let beta = (a * a + 2.0 * q / r).sqrt();
    let arg = beta * (horizon - t) - (a / beta).atanh();
    // d/dt = −d/ds.
    let dlambda = -r * beta * beta / arg.cosh().powi(2);
    Ok(dlambda + 2.0 * a * lambda - lambda * lambda / r + 2.0 * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
    /// Wall time; printed in the summary table but kept out of the JSON so
    /// reruns produce identical files.
    #[serde(skip)]
    pub runtime: f64,
}

impl CheckResult {
    /// Passing iff `measured ≤ tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            status: if measured <= tolerance { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            detail: String::new(),
            runtime: 0.0,
        }
    }

    pub fn skipped(name: &str, why: &str) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Skipped,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: why.to_string(),
            runtime: 0.0,
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }

    fn failed(name: &str, err: &Error) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Fail,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: err.to_string(),
            runtime: 0.0,
        }
    }
}

fn z_score(value: f64, target: f64, se: f64, scale: f64) -> f64 {
    let gap = (value - target).abs();
    if se > 0.0 {
        gap / se
    } else if gap <= 1e-9 * scale.max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Empirical moments of a finite-horizon ensemble at `0.25T, 0.5T, 0.75T`
/// against the Fokker–Planck moments `(μ_T(t), Σ_T(t)⁻¹)`.
pub fn fp_consistency(spec: &GameSpec, fin: &FiniteRiccatiSolution, ensemble: &TrajectoryEnsemble) -> CheckResult {
    let horizon = fin.grid.horizon;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut degenerate = false;
    for frac in [0.25, 0.5, 0.75] {
        let s = ensemble.sample_index(frac * horizon);
        let t = ensemble.times[s];
        for i in 0..spec.n_players {
            let Ok((mean, cov)) = fin.moments(i, t) else {
                return CheckResult::skipped("fp_consistency", "probe outside the solution grid");
            };
            let mo = ensemble.moments(i, s);
            let noiseless = mo.covariance_se.iter().all(|v| *v == 0.0);
            degenerate |= noiseless;
            for a in 0..spec.dim {
                let z = z_score(mo.mean[a], mean[a], mo.mean_se[a], mean.norm());
                if z > worst {
                    worst = z;
                    worst_at = format!("mean[{a}] of player {i} at t={t}");
                }
                if noiseless {
                    continue;
                }
                for b in 0..spec.dim {
                    let z = z_score(mo.covariance[(a, b)], cov[(a, b)], mo.covariance_se[(a, b)], cov.norm());
                    if z > worst {
                        worst = z;
                        worst_at = format!("cov[{a},{b}] of player {i} at t={t}");
                    }
                }
            }
        }
    }
    let mut detail = format!("largest z-score: {worst_at}");
    if degenerate {
        detail.push_str("; degenerate ensemble, covariance comparison skipped");
    }
    CheckResult::at_most("fp_consistency", worst, MC_SIGMAS).with_detail(detail)
}

/// A linear-feedback deviation of one player: gain `(1+δ)Λ_T`, offset
/// `ρ_T + δρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perturbation {
    pub gain_scale: f64,
    pub shift: f64,
}

/// `δ ∈ {±0.1, ±0.25}` crossed with `δρ ∈ {0, ±0.2}`.
pub fn default_perturbations() -> Vec<Perturbation> {
    let mut out = Vec::new();
    for gain_scale in [-0.25, -0.1, 0.1, 0.25] {
        for shift in [0.0, -0.2, 0.2] {
            out.push(Perturbation { gain_scale, shift });
        }
    }
    out
}

/// Outcome of the unilateral-deviation test.
#[derive(Debug, Clone, Serialize)]
pub struct NashOutcome {
    pub equilibrium_cost: Estimate,
    /// `(perturbation, E[J(perturbed) − J(equilibrium)])` with CRN errors.
    pub differences: Vec<(Perturbation, Estimate)>,
    /// Cost difference of the identity perturbation (exactly zero).
    pub identity_difference: f64,
    /// `J(+δ) + J(−δ) − 2J(0)` at `δ = 0.1`.
    pub curvature: Estimate,
    pub check: CheckResult,
}

fn path_costs(ensemble: &TrajectoryEnsemble) -> Vec<f64> {
    ensemble.path_costs.iter().map(|c| c[0]).collect()
}

/// Player `i`'s finite-horizon cost under linear-feedback deviations, with
/// every other player at equilibrium and common random numbers.
pub fn nash_perturbation(
    spec: &GameSpec,
    fin: &FiniteRiccatiSolution,
    i: usize,
    perturbations: &[Perturbation],
    plan: &NoisePlan,
) -> Result<NashOutcome> {
    let base = PolicyTable::finite(fin, spec, plan)?;
    let options = SimOptions {
        record_every: plan.steps,
        cost_players: vec![i],
    };
    let run = |p: &Perturbation| -> Result<Vec<f64>> {
        let policy = base.perturbed(spec, i, p.gain_scale, p.shift)?;
        let e = simulate_policy(spec, &policy, plan, &InitialState::SampleInitial, &options, Source::Perturbed)?;
        Ok(path_costs(&e))
    };
    let eq = path_costs(&simulate_policy(
        spec,
        &base,
        plan,
        &InitialState::SampleInitial,
        &options,
        Source::Finite,
    )?);
    let identity = run(&Perturbation {
        gain_scale: 0.0,
        shift: 0.0,
    })?;
    let identity_difference = identity
        .iter()
        .zip(&eq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut differences = Vec::new();
    let mut worst: f64 = f64::NEG_INFINITY;
    for p in perturbations {
        let costs = run(p)?;
        let diff: Vec<f64> = costs.iter().zip(&eq).map(|(a, b)| a - b).collect();
        let est = Estimate::from_samples(&diff);
        // A cost below equilibrium by k standard errors scores k.
        let z = if est.se > 0.0 { -est.value / est.se } else if est.value < 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(z);
        differences.push((*p, est));
    }
    let plus = run(&Perturbation {
        gain_scale: 0.1,
        shift: 0.0,
    })?;
    let minus = run(&Perturbation {
        gain_scale: -0.1,
        shift: 0.0,
    })?;
    let second: Vec<f64> = (0..eq.len()).map(|m| plus[m] + minus[m] - 2.0 * eq[m]).collect();
    let curvature = Estimate::from_samples(&second);

    let convex = curvature.value > MC_SIGMAS * curvature.se;
    let mut check = CheckResult::at_most("nash_perturbation", worst.max(0.0), MC_SIGMAS);
    if identity_difference != 0.0 || !convex {
        check.status = Status::Fail;
    }
    check.detail = format!(
        "player {i}; identity gap {identity_difference:e}; curvature {:.3e} ± {:.1e}",
        curvature.value, curvature.se
    );
    Ok(NashOutcome {
        equilibrium_cost: Estimate::from_samples(&eq),
        differences,
        identity_difference,
        curvature,
        check,
    })
}

/// Stationary start `N(μ, Σ⁻¹)` stays stationary: moments at four probe
/// times against `(μ, Σ⁻¹)`, plus the Lyapunov identity residual.
pub fn ergodic_stationarity(spec: &GameSpec, erg: &ErgodicSolution, plan: &NoisePlan) -> Result<Vec<CheckResult>> {
    if spec.players.iter().any(|p| p.noise().iter().all(|v| *v == 0.0)) {
        return Ok(vec![CheckResult::skipped(
            "ergodic_stationarity",
            "zero noise: no stationary density",
        )]);
    }
    let ensemble = simulate_ergodic(erg, spec, plan, &stationary_start(erg), &SimOptions::with_samples(plan, 4))?;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for s in 1..ensemble.times.len() {
        for (i, e) in erg.players.iter().enumerate() {
            let mo = ensemble.moments(i, s);
            for a in 0..spec.dim {
                let z = z_score(mo.mean[a], e.mean[a], mo.mean_se[a], e.mean.norm());
                if z > worst {
                    worst = z;
                    worst_at = format!("mean[{a}] of player {i} at t={}", ensemble.times[s]);
                }
                for b in 0..spec.dim {
                    let z = z_score(
                        mo.covariance[(a, b)],
                        e.covariance[(a, b)],
                        mo.covariance_se[(a, b)],
                        e.covariance.norm(),
                    );
                    if z > worst {
                        worst = z;
                        worst_at = format!("cov[{a},{b}] of player {i} at t={}", ensemble.times[s]);
                    }
                }
            }
        }
    }
    let lyapunov = erg
        .certificates
        .iter()
        .map(|c| c.lyapunov_residual)
        .fold(0.0, f64::max);
    Ok(vec![
        CheckResult::at_most("ergodic_stationarity", worst, MC_SIGMAS).with_detail(format!("largest z-score: {worst_at}")),
        CheckResult::at_most("lyapunov_identity", lyapunov, RESIDUAL_LOOSE),
    ])
}

/// Mean relaxation from `μ + offset`: `|mean(t) − μ|` stays below
/// `‖e^{(A − R⁻¹Λ)t}‖·|offset|` plus three standard errors.
pub fn mean_relaxation(spec: &GameSpec, erg: &ErgodicSolution, plan: &NoisePlan, offset: &Vector) -> Result<CheckResult> {
    let means: Vec<Vector> = erg.players.iter().map(|p| &p.mean + offset).collect();
    let init = InitialState::Gaussian {
        means,
        covariances: erg.covariances(),
    };
    let ensemble = simulate_ergodic(erg, spec, plan, &init, &SimOptions::with_samples(plan, 10))?;
    let mut worst: f64 = 0.0;
    for (i, (p, e)) in spec.players.iter().zip(&erg.players).enumerate() {
        let closed = e.closed_loop(p)?;
        for s in 0..ensemble.times.len() {
            let t = ensemble.times[s];
            let bound = linalg::spectral_norm(&linalg::matrix_exponential(&(&closed * t))?) * offset.norm();
            let mo = ensemble.moments(i, s);
            let gap = (&mo.mean - &e.mean).norm();
            let allowance = bound + MC_SIGMAS * mo.mean_se.norm();
            worst = worst.max(gap / allowance.max(1e-300));
        }
    }
    Ok(CheckResult::at_most("mean_relaxation", worst, 1.0))
}

/// Knobs of the full suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteConfig {
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub paths: usize,
    pub h: f64,
    /// Horizon of the stationary-start run.
    pub stationary_horizon: f64,
    /// Averaging window of the long-run cost check; `None` skips it.
    pub cost_window: Option<(f64, f64)>,
    pub nash_player: usize,
    #[serde(skip)]
    pub perturbations: Vec<Perturbation>,
    /// Shift of the initial mean applied to the simulation only (negative
    /// control for the Fokker–Planck check).
    pub simulation_mean_shift: Option<f64>,
    #[serde(skip)]
    pub finite_options: FiniteOptions,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            steps: 5000,
            seed: 2023,
            paths: 10_000,
            h: 1e-3,
            stationary_horizon: 2.0,
            cost_window: Some((10.0, 50.0)),
            nash_player: 0,
            perturbations: default_perturbations(),
            simulation_mean_shift: None,
            finite_options: FiniteOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationSuiteResult {
    pub checks: Vec<CheckResult>,
    pub failures: usize,
    pub passed: bool,
}

impl VerificationSuiteResult {
    fn from_checks(checks: Vec<CheckResult>) -> Self {
        let failures = checks.iter().filter(|c| c.status == Status::Fail).count();
        Self {
            checks,
            failures,
            passed: failures == 0,
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Aligned plain-text table, one line per check.
    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<24} {:<8} {:>12} {:>12} {:>9}\n", "check", "status", "measured", "tolerance", "time[s]");
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Skipped => "skipped",
            };
            s.push_str(&format!(
                "{:<24} {:<8} {:>12.4e} {:>12.4e} {:>9.2}\n",
                c.name, status, c.measured, c.tolerance, c.runtime
            ));
        }
        s.push_str(&format!("{} failure(s)\n", self.failures));
        s
    }
}

fn timed(f: impl FnOnce() -> Vec<CheckResult>) -> Vec<CheckResult> {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed().as_secs_f64();
    for c in &mut out {
        c.runtime = elapsed;
    }
    out
}

fn or_fail(name: &str, r: Result<Vec<CheckResult>>) -> Vec<CheckResult> {
    r.unwrap_or_else(|e| vec![CheckResult::failed(name, &e)])
}

/// Run every check applicable to `spec`. A failing gating assumption stops
/// the suite.
pub fn run_full_suite(spec: &GameSpec, config: &SuiteConfig) -> VerificationSuiteResult {
    let mut checks = Vec::new();
    let report = check_assumptions(spec, None, None);
    let gating: Vec<_> = report.records.iter().filter(|r| r.gating).collect();
    let gate_failures: Vec<String> = gating
        .iter()
        .filter(|r| r.status != crate::game::CheckStatus::Pass)
        .map(|r| r.name.clone())
        .collect();
    let mut gate = CheckResult::at_most("assumptions", gate_failures.len() as f64, 0.0);
    if !gate_failures.is_empty() {
        gate.detail = format!("failing: {}", gate_failures.join(", "));
        return VerificationSuiteResult::from_checks(vec![gate]);
    }
    checks.push(gate);

    let mode = config.finite_options.f0_mode;
    let erg = match solve_ergodic_system_with(spec, mode) {
        Ok(e) => e,
        Err(e) => {
            checks.push(CheckResult::failed("ergodic_solve", &e));
            return VerificationSuiteResult::from_checks(checks);
        }
    };
    let fin = match TimeGrid::new(config.horizon, config.steps)
        .and_then(|g| solve_finite_system_with(spec, &g, config.finite_options))
    {
        Ok(f) => f,
        Err(e) => {
            checks.push(CheckResult::failed("finite_solve", &e));
            return VerificationSuiteResult::from_checks(checks);
        }
    };

    checks.extend(timed(|| ergodic_certificates(&erg)));
    checks.extend(timed(|| vec![scalar_oracle_check(spec, &fin)]));
    checks.extend(timed(|| vec![hjb_check(spec, &fin)]));

    let plan = NoisePlan::new(config.seed, config.paths, config.h, config.horizon);
    let plan = match plan {
        Ok(p) => p,
        Err(e) => {
            checks.push(CheckResult::failed("noise_plan", &e));
            return VerificationSuiteResult::from_checks(checks);
        }
    };
    checks.extend(timed(|| {
        or_fail("fp_consistency", (|| {
            let init = match config.simulation_mean_shift {
                None => InitialState::SampleInitial,
                Some(shift) => InitialState::Gaussian {
                    means: spec
                        .players
                        .iter()
                        .map(|p| p.initial_mean.add_scalar(shift))
                        .collect(),
                    covariances: spec.players.iter().map(|p| p.initial_covariance()).collect::<Result<_>>()?,
                },
            };
            let ens = simulate_finite(&fin, spec, &plan, &init, &SimOptions::with_samples(&plan, 20))?;
            let mut c = fp_consistency(spec, &fin, &ens);
            if config.simulation_mean_shift.is_some() {
                c.detail.push_str("; simulation initial mean shifted");
            }
            Ok(vec![c])
        })())
    }));
    checks.extend(timed(|| {
        or_fail("ergodic_stationarity", (|| {
            let p = NoisePlan::new(config.seed.wrapping_add(1), config.paths, config.h, config.stationary_horizon)?;
            ergodic_stationarity(spec, &erg, &p)
        })())
    }));
    checks.extend(timed(|| {
        or_fail("nash_perturbation", (|| {
            let p = NoisePlan::new(config.seed.wrapping_add(2), config.paths, config.h, config.horizon)?;
            let out = nash_perturbation(spec, &fin, config.nash_player, &config.perturbations, &p)?;
            Ok(vec![out.check])
        })())
    }));
    if let Some(window) = config.cost_window {
        checks.extend(timed(|| {
            or_fail("long_run_cost", (|| Ok(vec![long_run_cost(spec, &erg, config, window)?]))())
        }));
    }
    VerificationSuiteResult::from_checks(checks)
}

fn ergodic_certificates(erg: &ErgodicSolution) -> Vec<CheckResult> {
    let max = |f: &dyn Fn(&crate::riccati_ergodic::ErgodicCertificates) -> f64| {
        erg.certificates.iter().map(f).fold(0.0, f64::max)
    };
    vec![
        CheckResult::at_most("are_residual", max(&|c| c.are_residual), RESIDUAL_TIGHT),
        CheckResult::at_most("precision_routes", max(&|c| c.precision_route_gap), crate::tolerances::SYLVESTER_TOL),
        CheckResult::at_most("mean_equation", erg.mean_residual, RESIDUAL_LOOSE),
        CheckResult::at_most(
            "closed_loop_stable",
            erg.certificates
                .iter()
                .map(|c| c.closed_loop_abscissa)
                .fold(f64::NEG_INFINITY, f64::max),
            0.0,
        )
        .with_detail("largest spectral abscissa of A − R⁻¹Λ".into()),
    ]
}

fn scalar_oracle_check(spec: &GameSpec, fin: &FiniteRiccatiSolution) -> CheckResult {
    if spec.dim != 1 {
        return CheckResult::skipped("scalar_lambda_oracle", "closed form only in one dimension");
    }
    let mut worst: f64 = 0.0;
    for (i, p) in spec.players.iter().enumerate() {
        let (a, r, q) = (p.drift[(0, 0)], p.control_cost[(0, 0)], spec.q(i, i, i)[(0, 0)]);
        for (k, t) in fin.grid.nodes().into_iter().enumerate() {
            match scalar_lambda_oracle(a, r, q, fin.grid.horizon, t) {
                Ok(exact) => worst = worst.max((fin.players[i].lambda[k][(0, 0)] - exact).abs()),
                Err(e) => return CheckResult::failed("scalar_lambda_oracle", &e),
            }
        }
    }
    CheckResult::at_most("scalar_lambda_oracle", worst, 1e-8)
}

fn hjb_check(spec: &GameSpec, fin: &FiniteRiccatiSolution) -> CheckResult {
    let horizon = fin.grid.horizon;
    let probes_x: Vec<Vector> = [0.0, 1.0, -1.0].iter().map(|&v| Vector::from_element(spec.dim, v)).collect();
    let mut interior: f64 = 0.0;
    let mut ends: f64 = 0.0;
    for i in 0..spec.n_players {
        for x in &probes_x {
            for frac in [0.1, 0.25, 0.5, 0.75, 0.9] {
                match hjb_residual(fin, spec, i, frac * horizon, x) {
                    Ok(r) => interior = interior.max(r.abs()),
                    Err(e) => return CheckResult::failed("hjb_residual", &e),
                }
            }
            for t in [0.0, horizon] {
                match hjb_residual(fin, spec, i, t, x) {
                    Ok(r) => ends = ends.max(r.abs()),
                    Err(e) => return CheckResult::failed("hjb_residual", &e),
                }
            }
        }
    }
    // Both bounds in one record: interior residual scaled to the endpoint
    // tolerance.
    let measured = (interior * 1e2).max(ends);
    CheckResult::at_most("hjb_residual", measured, 1e-4)
        .with_detail(format!("interior {interior:.3e} (tol 1e-6), endpoints {ends:.3e} (tol 1e-4)"))
}

fn long_run_cost(spec: &GameSpec, erg: &ErgodicSolution, config: &SuiteConfig, window: (f64, f64)) -> Result<CheckResult> {
    let plan = NoisePlan::new(config.seed.wrapping_add(3), config.paths, config.h, window.1)?;
    let samples = ((window.1 / 0.1).round() as usize).max(1);
    let ens = simulate_ergodic(erg, spec, &plan, &InitialState::SampleInitial, &SimOptions::with_samples(&plan, samples))?;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (i, e) in erg.players.iter().enumerate() {
        let est = running_cost_average(&ens, spec, i, window)?;
        worst = worst.max(z_score(est.value, e.value, est.se, e.value.abs()));
        detail.push(format!("player {i}: {:.6} ± {:.1e} vs c = {:.6}", est.value, est.se, e.value));
    }
    Ok(CheckResult::at_most("long_run_cost", worst, MC_SIGMAS).with_detail(detail.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fix_a;
    use crate::riccati_finite::solve_finite_system;
    use proptest::prelude::*;

    #[test]
    fn oracle_reference_values() {
        let l = scalar_lambda_oracle(-1.0, 1.0, 0.5, 1e3, 0.0).unwrap();
        assert!((l - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert_eq!(scalar_lambda_oracle(-1.0, 1.0, 0.5, 3.0, 3.0).unwrap(), 0.0);
        let l = scalar_lambda_oracle(0.0, 1.0, 0.5, 1.0, 0.0).unwrap();
        assert!((l - 1f64.tanh()).abs() < 1e-15);
        assert!(scalar_lambda_oracle(0.0, 0.0, 0.5, 1.0, 0.0).is_err());
        assert!(scalar_lambda_oracle(0.0, 1.0, -0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn oracle_matches_fix_a_closed_form() {
        let r2 = 2f64.sqrt();
        for s in [0.0, 0.3, 1.0, 4.0] {
            let closed = r2 * (r2 * s + (1.0 / r2).atanh()).tanh() - 1.0;
            assert!((scalar_lambda_oracle(-1.0, 1.0, 0.5, 10.0, 10.0 - s).unwrap() - closed).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn oracle_back_substitution(
            a in -3.0f64..3.0,
            r in 0.2f64..5.0,
            q in 0.05f64..3.0,
            s in 0.0f64..5.0,
        ) {
            let res = scalar_oracle_residual(a, r, q, 5.0, 5.0 - s).unwrap();
            let scale = 1.0 + a.abs() * r + q + (a * a * r + 2.0 * q) ;
            prop_assert!(res.abs() <= 1e-10 * scale, "residual {res:e}");
        }
    }

    #[test]
    fn fp_negative_control() {
        let spec = fix_a();
        let fin = solve_finite_system(&spec, &TimeGrid::new(2.0, 2000).unwrap()).unwrap();
        let plan = NoisePlan::new(8, 4000, 1e-3, 2.0).unwrap();
        let opts = SimOptions::with_samples(&plan, 8);
        let ok = simulate_finite(&fin, &spec, &plan, &InitialState::SampleInitial, &opts).unwrap();
        assert_eq!(fp_consistency(&spec, &fin, &ok).status, Status::Pass);
        let shifted = InitialState::Gaussian {
            means: vec![Vector::from_element(1, 0.5); 2],
            covariances: vec![spec.players[0].initial_covariance().unwrap(); 2],
        };
        let bad = simulate_finite(&fin, &spec, &plan, &shifted, &opts).unwrap();
        assert_eq!(fp_consistency(&spec, &fin, &bad).status, Status::Fail);
    }

    #[test]
    fn fp_degenerate_noiseless() {
        let mut spec = fix_a();
        let fin = solve_finite_system(&spec, &TimeGrid::new(1.0, 1000).unwrap()).unwrap();
        for p in spec.players.iter_mut() {
            p.set_noise(crate::linalg::Mat::zeros(1, 1));
        }
        let plan = NoisePlan::new(1, 10, 1e-3, 1.0).unwrap();
        let init = InitialState::Fixed(vec![Vector::zeros(1); 2]);
        let ens = simulate_finite(&fin, &spec, &plan, &init, &SimOptions::with_samples(&plan, 4)).unwrap();
        let c = fp_consistency(&spec, &fin, &ens);
        assert_eq!(c.status, Status::Pass);
        assert!(c.detail.contains("degenerate"));
    }

    #[test]
    fn nash_small_run() {
        let spec = fix_a();
        let fin = solve_finite_system(&spec, &TimeGrid::new(2.0, 2000).unwrap()).unwrap();
        let plan = NoisePlan::new(3, 2000, 1e-3, 2.0).unwrap();
        let out = nash_perturbation(&spec, &fin, 1, &default_perturbations(), &plan).unwrap();
        assert_eq!(out.identity_difference, 0.0);
        assert_eq!(out.check.status, Status::Pass, "{:?}", out.check);
        assert!(out.curvature.value > 0.0);
    }

    #[test]
    fn stationarity_and_relaxation() {
        let spec = fix_a();
        let erg = solve_ergodic_system_with(&spec, Default::default()).unwrap();
        let plan = NoisePlan::new(5, 4000, 1e-3, 1.0).unwrap();
        let checks = ergodic_stationarity(&spec, &erg, &plan).unwrap();
        assert!(checks.iter().all(|c| c.status == Status::Pass), "{checks:?}");
        let c = mean_relaxation(&spec, &erg, &plan, &Vector::from_element(1, 5.0)).unwrap();
        assert_eq!(c.status, Status::Pass, "{c:?}");
    }

    #[test]
    fn suite_gates_on_structure() {
        let mut spec = fix_a();
        spec.cost.blocks[0][0][0] = crate::linalg::Mat::from_element(1, 1, -1.0);
        let res = run_full_suite(&spec, &SuiteConfig::default());
        assert_eq!(res.checks.len(), 1);
        assert!(!res.passed);
    }
}
