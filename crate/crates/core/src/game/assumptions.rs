//! Structural and quantitative checks on a game, reported as data.
//!
//! Every record carries the numbers its verdict was computed from, so a
//! reader can re-derive pass/fail without rerunning anything. Records marked
//! `gating` decide whether a run may proceed; the rest are measured
//! certificates for constants whose existence is only known abstractly.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{assemble, GameSpec, PlayerSpec};
use crate::linalg::{self, Mat, SymEig};
use crate::riccati_ergodic::{sylvester_residual, symmetric_quadratic_root, ErgodicSolution};
use crate::riccati_finite::FiniteRiccatiSolution;
use crate::tolerances::{
    ENVELOPE_GRID_POINTS, ENVELOPE_T_MAX, ENVELOPE_T_MIN, M_SIGMA_MIN_TOL, SPD_RELATIVE, SYLVESTER_TOL,
    SYMMETRY_RELATIVE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionRecord {
    pub name: String,
    pub status: CheckStatus,
    pub gating: bool,
    /// Verdict rule in terms of the witness names.
    pub rule: String,
    pub witnesses: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl AssumptionRecord {
    fn new(name: &str, gating: bool, rule: &str) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::Indeterminate,
            gating,
            rule: rule.to_string(),
            witnesses: BTreeMap::new(),
            note: String::new(),
        }
    }

    fn witness(&mut self, key: &str, value: f64) -> &mut Self {
        self.witnesses.insert(key.to_string(), value);
        self
    }

    fn verdict(&mut self, pass: bool) {
        self.status = if pass { CheckStatus::Pass } else { CheckStatus::Fail };
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub records: Vec<AssumptionRecord>,
}

impl AssumptionReport {
    pub fn record(&self, name: &str) -> Option<&AssumptionRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// All gating records pass.
    pub fn gating_passed(&self) -> bool {
        self.records
            .iter()
            .filter(|r| r.gating)
            .all(|r| r.status == CheckStatus::Pass)
    }

    pub fn failures(&self) -> Vec<&AssumptionRecord> {
        self.records.iter().filter(|r| r.status == CheckStatus::Fail).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Measured exponential envelope constants of one game.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeConstants {
    /// Per player: decay rate of `e^{(A − R⁻¹Λ)t}` (minus spectral abscissa).
    pub rates: Vec<f64>,
    /// Per player: `sup_t ‖e^{(A − R⁻¹Λ)t}‖ e^{λ_i t}` over the log grid.
    pub amplitudes: Vec<f64>,
    /// Per player: fitted `(K_Λ, λ_Λ)` of `‖Λ_T(t) − Λ‖ ≤ K_Λ e^{−λ_Λ(T−t)}`.
    pub lambda_envelopes: Vec<(f64, f64)>,
    pub k_n: f64,
    pub lambda_n: f64,
}

fn log_grid() -> Vec<f64> {
    let (lo, hi) = (ENVELOPE_T_MIN.ln(), ENVELOPE_T_MAX.ln());
    let n = ENVELOPE_GRID_POINTS;
    std::iter::once(0.0)
        .chain((0..n).map(|k| (lo + (hi - lo) * k as f64 / (n - 1) as f64).exp()))
        .collect()
}

/// Least-squares slope and intercept of `y` on `x`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `(K_Λ, λ_Λ)` from the stored `Λ_T` path: rate by log-linear regression
/// against `T − t` on `[0.55T, 0.95T]`, amplitude as the supremum of
/// `‖Λ_T(t) − Λ‖ e^{λ_Λ(T−t)}` over nodes above the round-off floor.
fn lambda_envelope(path: &[Mat], lambda: &Mat, horizon: f64) -> Option<(f64, f64)> {
    let k_total = path.len() - 1;
    let floor = 1e-12 * lambda.norm().max(1.0);
    let samples: Vec<(f64, f64)> = path
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let s = horizon * (1.0 - k as f64 / k_total as f64);
            (s, linalg::spectral_norm(&(l - lambda)))
        })
        .filter(|&(_, dev)| dev > floor)
        .collect();
    let window: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(s, _)| s >= 0.05 * horizon && s <= 0.45 * horizon)
        .collect();
    if window.len() < 8 {
        return None;
    }
    let xs: Vec<f64> = window.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = window.iter().map(|p| p.1.ln()).collect();
    let (slope, _) = linear_fit(&xs, &ys);
    let rate = -slope;
    if !(rate > 0.0) {
        return None;
    }
    let amplitude = samples
        .iter()
        .map(|&(s, dev)| dev * (rate * s).exp())
        .fold(0.0, f64::max);
    Some((amplitude, rate))
}

/// Measure `K^(N)`, `λ^(N)` from the ergodic solution and the finite `Λ_T`
/// paths.
pub fn measure_envelope_constants(
    spec: &GameSpec,
    ergodic: &ErgodicSolution,
    finite: &FiniteRiccatiSolution,
) -> crate::error::Result<Option<EnvelopeConstants>> {
    let grid = log_grid();
    let mut rates = Vec::new();
    let mut amplitudes = Vec::new();
    let mut lambda_envelopes = Vec::new();
    let mut k_n: f64 = 0.0;
    for (i, (p, e)) in spec.players.iter().zip(&ergodic.players).enumerate() {
        let closed = e.closed_loop(p)?;
        let rate = -linalg::spectral_abscissa(&closed);
        let mut amp: f64 = 1.0;
        for &t in &grid {
            let norm = linalg::spectral_norm(&linalg::matrix_exponential(&(&closed * t))?);
            amp = amp.max(norm * (rate * t).exp());
        }
        let Some((k_l, l_l)) = lambda_envelope(&finite.players[i].lambda, &e.lambda, finite.grid.horizon) else {
            return Ok(None);
        };
        let r_inv_norm = linalg::spectral_norm(&p.control_cost_inv()?);
        k_n = k_n.max(amp * (k_l / l_l * r_inv_norm).exp());
        rates.push(rate);
        amplitudes.push(amp);
        lambda_envelopes.push((k_l, l_l));
    }
    let lambda_n = rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Some(EnvelopeConstants {
        rates,
        amplitudes,
        lambda_envelopes,
        k_n,
        lambda_n,
    }))
}

fn lower_margin(p: &PlayerSpec, r_inv: &Mat, qii: &Mat, c: f64) -> f64 {
    let sym = &p.drift + p.drift.transpose();
    linalg::min_eigenvalue(&(qii * 2.0 - r_inv * (c * c) + sym * c))
}

fn upper_margin(p: &PlayerSpec, r_inv: &Mat, qii: &Mat, c: f64) -> f64 {
    let sym = &p.drift + p.drift.transpose();
    linalg::min_eigenvalue(&(r_inv * (c * c) - sym * c - qii * 2.0))
}

/// Whether `c_lo² R⁻¹ − c_lo(A + Aᵀ) ≤ 2Q_ii ≤ c_hi² R⁻¹ − c_hi(A + Aᵀ)` hold,
/// as `(lower, upper)`.
pub fn lambda_bracket_holds(p: &PlayerSpec, qii: &Mat, c_lo: f64, c_hi: f64) -> crate::error::Result<(bool, bool)> {
    let r_inv = p.control_cost_inv()?;
    let tol = 1e-12 * qii.norm();
    Ok((
        lower_margin(p, &r_inv, qii, c_lo) >= -tol,
        upper_margin(p, &r_inv, qii, c_hi) >= -tol,
    ))
}

/// Largest valid lower constant and smallest valid upper constant.
///
/// The lower feasible set is an interval `[0, c_max]` (concave matrix
/// function of `c`), and the upper feasible set is a ray, so bisection finds
/// both ends.
fn best_bracket(p: &PlayerSpec, qii: &Mat) -> crate::error::Result<(f64, f64)> {
    let r_inv = p.control_cost_inv()?;
    let ok_lo = |c: f64| lower_margin(p, &r_inv, qii, c) >= 0.0;
    let ok_hi = |c: f64| upper_margin(p, &r_inv, qii, c) >= 0.0;

    let (mut a, mut b) = (0.0, 1.0);
    while ok_lo(b) && b < 1e150 {
        a = b;
        b *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if ok_lo(m) {
            a = m
        } else {
            b = m
        }
    }
    let c_lower = a;

    let (mut lo, mut hi) = (0.0, 1.0);
    while !ok_hi(hi) && hi < 1e150 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if ok_hi(m) {
            hi = m
        } else {
            lo = m
        }
    }
    Ok((c_lower, hi))
}

fn relative_min_eig(m: &Mat) -> f64 {
    let e = SymEig::new(m);
    e.min() / e.max().abs().max(1e-300)
}

/// Run every check. Checks needing the ergodic solution or the finite `Λ_T`
/// paths are indeterminate when those are absent.
pub fn check_assumptions(
    spec: &GameSpec,
    ergodic: Option<&ErgodicSolution>,
    finite: Option<&FiniteRiccatiSolution>,
) -> AssumptionReport {
    let mut records = Vec::new();
    let structural = super::validate_spec(spec);
    let dims_ok = !structural.violations.iter().any(|v| v.contains("dimension") || v.contains("N ="));

    // Structure of noise, control and own-cost weights.
    let mut rec = AssumptionRecord::new(
        "cost_and_noise_structure",
        true,
        "qii_relative_min_eig > 1e-12 and r_relative_min_eig > 1e-12 and sigma0_relative_min_eig > 1e-12 \
         and noise_relative_min_singular > 1e-12 and q_max_asymmetry <= 1e-12",
    );
    if !dims_ok {
        rec.status = CheckStatus::Fail;
        rec.note = structural.violations.join("; ");
        return AssumptionReport { records: vec![rec] };
    }
    let mut q_rel = f64::INFINITY;
    let mut q_min = f64::INFINITY;
    let mut r_rel = f64::INFINITY;
    let mut s0_rel = f64::INFINITY;
    let mut noise_rel = f64::INFINITY;
    let mut asym: f64 = 0.0;
    for (i, p) in spec.players.iter().enumerate() {
        let qii = spec.q(i, i, i);
        q_rel = q_rel.min(relative_min_eig(qii));
        q_min = q_min.min(linalg::min_eigenvalue(qii));
        r_rel = r_rel.min(relative_min_eig(&p.control_cost));
        s0_rel = s0_rel.min(relative_min_eig(&p.initial_precision));
        let sv = p.noise().clone().svd(false, false).singular_values;
        noise_rel = noise_rel.min(sv.min() / sv.max().max(1e-300));
        let full = spec.cost.full_weight(i);
        asym = asym.max((&full - full.transpose()).norm() / full.norm().max(1e-300));
        asym = asym.max(linalg::asymmetry(&p.control_cost)).max(linalg::asymmetry(qii));
    }
    rec.witness("qii_min_eig", q_min)
        .witness("qii_relative_min_eig", q_rel)
        .witness("r_relative_min_eig", r_rel)
        .witness("sigma0_relative_min_eig", s0_rel)
        .witness("noise_relative_min_singular", noise_rel)
        .witness("q_max_asymmetry", asym);
    rec.verdict(
        q_rel > SPD_RELATIVE
            && r_rel > SPD_RELATIVE
            && s0_rel > SPD_RELATIVE
            && noise_rel > 1e-12
            && asym <= SYMMETRY_RELATIVE,
    );
    let structure_ok = rec.status == CheckStatus::Pass;
    records.push(rec);
    if !structure_ok {
        return AssumptionReport { records };
    }

    let assembled = match assemble(spec) {
        Ok(a) => a,
        Err(e) => {
            let mut r = AssumptionRecord::new("assembly", true, "block matrices assemble");
            r.status = CheckStatus::Fail;
            r.note = e.to_string();
            records.push(r);
            return AssumptionReport { records };
        }
    };
    let q_sym = linalg::symmetrize(&assembled.interaction);
    let q_min_eig = linalg::min_eigenvalue(&q_sym);
    let q_norm = linalg::spectral_norm(&assembled.interaction);
    let r_eig = SymEig::new(&assembled.inv_control);

    let constants = match (ergodic, finite) {
        (Some(e), Some(f)) => measure_envelope_constants(spec, e, f).ok().flatten(),
        _ => None,
    };
    let window_rule = "q_min_eig > threshold, threshold = -gamma_endpoint/2, \
                       gamma_endpoint = lambda_n^2 * r_min_eig / (2 k_n^2 r_norm^2)";
    let mut window = AssumptionRecord::new("interaction_window", false, window_rule);
    window
        .witness("q_min_eig", q_min_eig)
        .witness("r_norm", r_eig.max())
        .witness("r_min_eig", r_eig.min());
    let mut gamma_endpoint = None;
    match &constants {
        Some(c) => {
            let endpoint = c.lambda_n.powi(2) * r_eig.min() / (2.0 * c.k_n.powi(2) * r_eig.max().powi(2));
            gamma_endpoint = Some(endpoint);
            window
                .witness("k_n", c.k_n)
                .witness("lambda_n", c.lambda_n)
                .witness("gamma_endpoint", endpoint)
                .witness("threshold", -endpoint / 2.0);
            window.verdict(q_min_eig > -endpoint / 2.0);
            window.note = "measured certificate: envelope constants fitted on a finite grid".into();
        }
        None => {
            window.note = "needs the ergodic solution and finite-horizon Λ paths".into();
        }
    }
    records.push(window.clone());

    // Sub/super-solution bracket for Λ.
    let mut bracket = AssumptionRecord::new(
        "lambda_bracket",
        false,
        "c_lower > 0 and c_upper finite; with an ergodic solution also \
         c_lower <= lambda_min_eig and lambda_max_eig <= c_upper",
    );
    let mut c_lower = f64::INFINITY;
    let mut c_upper: f64 = 0.0;
    for (i, p) in spec.players.iter().enumerate() {
        if let Ok((lo, hi)) = best_bracket(p, spec.q(i, i, i)) {
            c_lower = c_lower.min(lo);
            c_upper = c_upper.max(hi);
        }
    }
    bracket.witness("c_lower", c_lower).witness("c_upper", c_upper);
    let mut ok = c_lower > 0.0 && c_upper.is_finite() && c_upper < 1e150;
    if let Some(e) = ergodic {
        let lmin = e.players.iter().map(|p| linalg::min_eigenvalue(&p.lambda)).fold(f64::INFINITY, f64::min);
        let lmax = e
            .players
            .iter()
            .map(|p| SymEig::new(&p.lambda).max())
            .fold(f64::NEG_INFINITY, f64::max);
        bracket.witness("lambda_min_eig", lmin).witness("lambda_max_eig", lmax);
        ok &= c_lower <= lmin * (1.0 + 1e-9) && lmax <= c_upper * (1.0 + 1e-9);
    }
    bracket.verdict(ok);
    records.push(bracket);

    // Symmetric precision route and invertibility of the mean operator.
    let mut solv = AssumptionRecord::new(
        "ergodic_solvability",
        true,
        "sylvester_residual_max <= 1e-9 and m_sigma_min_relative > 1e-10",
    );
    let mut syl: f64 = 0.0;
    let mut syl_failed = false;
    for (i, p) in spec.players.iter().enumerate() {
        let s = p.diffusion();
        let b = linalg::symmetrize(&(s * &p.control_cost * s));
        let c = linalg::symmetrize(&(p.drift.transpose() * &p.control_cost * &p.drift + spec.q(i, i, i) * 2.0));
        match symmetric_quadratic_root(&b, &c) {
            Ok(sigma) => syl = syl.max(sylvester_residual(p, &sigma)),
            Err(_) => syl_failed = true,
        }
    }
    let m_smin = linalg::min_singular_value(&assembled.mean_operator);
    let m_rel = m_smin / linalg::spectral_norm(&assembled.mean_operator).max(1e-300);
    solv.witness("sylvester_residual_max", syl)
        .witness("m_sigma_min", m_smin)
        .witness("m_sigma_min_relative", m_rel);
    if syl_failed {
        solv.note = "quadratic precision equation has no SPD root".into();
        solv.status = CheckStatus::Fail;
    } else {
        solv.verdict(syl <= SYLVESTER_TOL && m_rel > M_SIGMA_MIN_TOL);
    }
    records.push(solv);

    // Constants that must stay bounded along a family of games.
    let mut uniform = AssumptionRecord::new(
        "uniform_constants",
        false,
        "(hurwitz_margin > 0 and c_upper finite) or (beta_1 > 0 and c_lower > 0), with r_lower > 0",
    );
    let hurwitz_margin = spec
        .players
        .iter()
        .map(|p| -linalg::spectral_abscissa(&p.drift))
        .fold(f64::INFINITY, f64::min);
    let r_lower = spec.players.iter().map(|p| linalg::min_eigenvalue(&p.control_cost)).fold(f64::INFINITY, f64::min);
    let r_upper = spec
        .players
        .iter()
        .map(|p| SymEig::new(&p.control_cost).max())
        .fold(f64::NEG_INFINITY, f64::max);
    let beta_1 = (0..spec.n_players)
        .map(|i| 2.0 * linalg::min_eigenvalue(spec.q(i, i, i)))
        .fold(f64::INFINITY, f64::min);
    uniform
        .witness("hurwitz_margin", hurwitz_margin)
        .witness("r_lower", r_lower)
        .witness("r_upper", r_upper)
        .witness("beta_1", beta_1)
        .witness("c_lower", c_lower)
        .witness("c_upper", c_upper);
    uniform.verdict(
        r_lower > 0.0
            && ((hurwitz_margin > 0.0 && c_upper.is_finite()) || (beta_1 > 0.0 && c_lower > 0.0)),
    );
    uniform.note = "values for this N; uniformity is judged across a family".into();
    records.push(uniform);

    let mut uwin = AssumptionRecord::new(
        "uniform_interaction_window",
        false,
        "q_min_eig > -gamma_endpoint/2 (this N's contribution to the liminf) and q_norm finite",
    );
    uwin.witness("q_min_eig", q_min_eig).witness("q_norm", q_norm);
    if let Some(endpoint) = gamma_endpoint {
        uwin.witness("gamma_endpoint", endpoint);
        uwin.verdict(q_min_eig > -endpoint / 2.0 && q_norm.is_finite());
    } else {
        uwin.note = window.note.clone();
    }
    records.push(uwin);

    records.push(uniform_bounds(spec, ergodic));
    AssumptionReport { records }
}

fn uniform_bounds(spec: &GameSpec, ergodic: Option<&ErgodicSolution>) -> AssumptionRecord {
    let n = spec.n_players;
    let norm = |m: &Mat| linalg::spectral_norm(m);
    let mut rec = AssumptionRecord::new(
        "uniform_bounds",
        false,
        "every witness finite; beta_3 is their maximum",
    );
    let max_target = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| spec.target(i, j).norm())
        .fold(0.0, f64::max);
    let max_diffusion = spec.players.iter().map(|p| norm(p.diffusion())).fold(0.0, f64::max);
    let max_init_cov = spec
        .players
        .iter()
        .map(|p| p.initial_covariance().map(|c| norm(&c)).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let max_init_mean = spec.players.iter().map(|p| p.initial_mean.norm()).fold(0.0, f64::max);

    let others = |i: usize| (0..n).filter(move |&j| j != i);
    let sum_sup_qij: f64 = (0..n)
        .map(|i| others(i).map(|j| norm(spec.q(i, i, j))).fold(0.0, f64::max))
        .sum();
    let sum_sum_sup_row: f64 = (0..n)
        .map(|i| {
            others(i)
                .map(|j| others(i).filter(|&k| k != j).map(|k| norm(spec.q(i, j, k))).fold(0.0, f64::max))
                .sum::<f64>()
        })
        .sum();
    let sum_sum_sup_col: f64 = (0..n)
        .map(|i| {
            others(i)
                .map(|k| others(i).filter(|&j| j != k).map(|j| norm(spec.q(i, j, k))).fold(0.0, f64::max))
                .sum::<f64>()
        })
        .sum();
    let max_sum_qjj = (0..n)
        .map(|i| others(i).map(|j| norm(spec.q(i, j, j))).sum::<f64>())
        .fold(0.0, f64::max);
    let sum_sup_qjj: f64 = (0..n)
        .map(|i| others(i).map(|j| norm(spec.q(i, j, j))).fold(0.0, f64::max))
        .sum();

    rec.witness("max_target_norm", max_target)
        .witness("max_diffusion_norm", max_diffusion)
        .witness("max_initial_covariance_norm", max_init_cov)
        .witness("max_initial_mean_norm", max_init_mean)
        .witness("sum_sup_q_ij", sum_sup_qij)
        .witness("sum_sum_sup_q_jk_rows", sum_sum_sup_row)
        .witness("sum_sum_sup_q_jk_cols", sum_sum_sup_col)
        .witness("max_sum_q_jj", max_sum_qjj)
        .witness("sum_sup_q_jj", sum_sup_qjj);
    match ergodic {
        Some(e) => {
            let cov = e.players.iter().map(|p| norm(&p.covariance)).fold(0.0, f64::max);
            let mu = e.players.iter().map(|p| p.mean.norm()).fold(0.0, f64::max);
            let rho = e.players.iter().map(|p| p.rho.norm()).fold(0.0, f64::max);
            rec.witness("max_stationary_covariance_norm", cov)
                .witness("max_stationary_mean_norm", mu)
                .witness("max_rho_norm", rho);
            let beta_3 = rec.witnesses.values().copied().fold(0.0, f64::max);
            rec.witness("beta_3", beta_3);
            rec.verdict(beta_3.is_finite());
            rec.note = "values for this N; uniformity is judged across a family".into();
        }
        None => rec.note = "stationary quantities need the ergodic solution".into(),
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{fix_a, Vector};
    use crate::riccati_ergodic::solve_ergodic_system;
    use crate::riccati_finite::{solve_finite_system, TimeGrid};

    #[test]
    fn fix_a_report() {
        let spec = fix_a();
        let erg = solve_ergodic_system(&spec).unwrap();
        let fin = solve_finite_system(&spec, &TimeGrid::new(10.0, 4000).unwrap()).unwrap();
        let report = check_assumptions(&spec, Some(&erg), Some(&fin));
        assert!(report.gating_passed());

        let solv = report.record("ergodic_solvability").unwrap();
        assert_eq!(solv.status, CheckStatus::Pass);
        assert_eq!(solv.witnesses["sylvester_residual_max"], 0.0);
        assert!((solv.witnesses["m_sigma_min"] - 0.5).abs() < 1e-12);

        let window = report.record("interaction_window").unwrap();
        assert!((window.witnesses["q_min_eig"] + 0.5).abs() < 1e-12);
        assert!((window.witnesses["lambda_n"] - 2f64.sqrt()).abs() < 1e-10);
        assert!(window.witnesses["k_n"] >= 1.0);
        let endpoint = window.witnesses["gamma_endpoint"];
        assert!((endpoint - 1.0 / window.witnesses["k_n"].powi(2)).abs() < 1e-9);
        let pass = window.witnesses["q_min_eig"] > window.witnesses["threshold"];
        assert_eq!(window.status == CheckStatus::Pass, pass);

        let bracket = report.record("lambda_bracket").unwrap();
        assert_eq!(bracket.status, CheckStatus::Pass);
        let l = 2f64.sqrt() - 1.0;
        assert!((bracket.witnesses["c_lower"] - l).abs() < 1e-9);
        assert!((bracket.witnesses["c_upper"] - l).abs() < 1e-9);
    }

    #[test]
    fn window_indeterminate_without_solutions() {
        let report = check_assumptions(&fix_a(), None, None);
        assert_eq!(report.record("interaction_window").unwrap().status, CheckStatus::Indeterminate);
        assert_eq!(report.record("uniform_bounds").unwrap().status, CheckStatus::Indeterminate);
        assert!(report.gating_passed());
    }

    #[test]
    fn negative_own_cost_fails() {
        let mut spec = fix_a();
        spec.cost.blocks[0][0][0] = Mat::from_element(1, 1, -1.0);
        let report = check_assumptions(&spec, None, None);
        assert_eq!(report.records[0].status, CheckStatus::Fail);
        assert!(!report.gating_passed());
    }

    #[test]
    fn bracket_helper() {
        let spec = fix_a();
        let l = 2f64.sqrt() - 1.0;
        let p = &spec.players[0];
        let q = spec.q(0, 0, 0);
        assert_eq!(lambda_bracket_holds(p, q, 0.9 * l, 1.1 * l).unwrap(), (true, true));
        assert_eq!(lambda_bracket_holds(p, q, 1.1 * l, 0.9 * l).unwrap(), (false, false));
    }

    #[test]
    fn non_commuting_precision_fails_sylvester() {
        let mut spec = fix_a();
        let d2 = |a: [f64; 4]| Mat::from_row_slice(2, 2, &a);
        spec.dim = 2;
        for p in spec.players.iter_mut() {
            *p = PlayerSpec::new(
                d2([-1.0, 0.8, 0.0, -2.0]),
                d2([1.0, 0.0, 0.3, 1.0]),
                d2([1.0, 0.0, 0.0, 2.0]),
                Vector::zeros(2),
                Mat::identity(2, 2),
            );
        }
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let s = spec.cost.blocks[i][j][k][(0, 0)];
                    spec.cost.blocks[i][j][k] = Mat::identity(2, 2) * s;
                }
                spec.cost.targets[i][j] = Vector::zeros(2);
            }
        }
        let report = check_assumptions(&spec, None, None);
        let solv = report.record("ergodic_solvability").unwrap();
        assert_eq!(solv.status, CheckStatus::Fail);
        assert!(solv.witnesses["sylvester_residual_max"] > 1e-6);
    }
}
