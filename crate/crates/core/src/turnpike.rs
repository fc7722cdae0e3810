//! Deviations between finite-horizon and ergodic equilibria, exponential
//! envelope fits, value ergodicity and scans over the number of players.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{build_example, ExampleKind, ExampleParams, GameSpec};
use crate::linalg::{self, Mat, Vector};
use crate::riccati_ergodic::{solve_ergodic_system_with, ErgodicSolution};
use crate::riccati_finite::{evaluate_value, solve_finite_system_with, FiniteOptions, FiniteRiccatiSolution, TimeGrid};
use crate::simulate::{
    paired_control_deviation, paired_squared_deviation, simulate_ergodic, simulate_finite, Estimate, InitialState,
    NoisePlan, SimOptions,
};
use crate::tolerances::{LOG_FLOOR, ZERO_SERIES_RELATIVE};

/// Deterministic deviations of one player on the finite grid.
#[derive(Debug, Clone, Serialize)]
pub struct PlayerDeviation {
    /// `‖Λ_T(t) − Λ‖` (spectral norm).
    pub lambda: Vec<f64>,
    /// `‖Σ_T(t)⁻¹ − Σ⁻¹‖`, i.e. the gap between state covariances.
    pub covariance: Vec<f64>,
    pub mean: Vec<f64>,
    pub rho: Vec<f64>,
}

/// How the expected squared state and control gaps are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathwiseMode {
    /// Exact second moments of the joint Gaussian process `(X_T − X, X)`
    /// driven by one Brownian motion.
    Moments,
    /// Paired Euler–Maruyama simulation with shared increments and initial
    /// draws, recording `samples + 1` times.
    MonteCarlo { plan: NoisePlan, samples: usize },
}

/// `E|𝐗_T − 𝐗|²` and `E|𝛂_T − 𝛂|²` summed over players.
#[derive(Debug, Clone, Serialize)]
pub struct PathwiseDeviation {
    pub method: &'static str,
    pub times: Vec<f64>,
    pub state: Vec<Estimate>,
    pub control: Vec<Estimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationProfile {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub players: Vec<PlayerDeviation>,
    /// `|𝛍̂(t)| = |𝛍_T(t) − 𝛍|`.
    pub stacked_mean: Vec<f64>,
    /// `|𝛒̂(t)|`.
    pub stacked_rho: Vec<f64>,
    pub pathwise: Option<PathwiseDeviation>,
}

fn check_pair(fin: &FiniteRiccatiSolution, erg: &ErgodicSolution, spec: &GameSpec) -> Result<()> {
    if fin.players.len() != spec.n_players || erg.players.len() != spec.n_players {
        return Err(Error::Dimension("solutions do not belong to this spec".into()));
    }
    if fin.players[0].mean[0].len() != spec.dim || erg.players[0].mean.len() != spec.dim {
        return Err(Error::Dimension("solutions do not belong to this spec".into()));
    }
    Ok(())
}

/// Deterministic deviation profile, plus the pathwise gap when `pathwise`
/// is given.
pub fn deviation_profile(
    fin: &FiniteRiccatiSolution,
    erg: &ErgodicSolution,
    spec: &GameSpec,
    pathwise: Option<PathwiseMode>,
) -> Result<DeviationProfile> {
    check_pair(fin, erg, spec)?;
    let nodes = fin.grid.steps + 1;
    let players: Vec<PlayerDeviation> = fin
        .players
        .iter()
        .zip(&erg.players)
        .map(|(f, e)| PlayerDeviation {
            lambda: f.lambda.iter().map(|l| linalg::spectral_norm(&(l - &e.lambda))).collect(),
            covariance: f.covariance.iter().map(|c| linalg::spectral_norm(&(c - &e.covariance))).collect(),
            mean: f.mean.iter().map(|m| (m - &e.mean).norm()).collect(),
            rho: f.rho.iter().map(|r| (r - &e.rho).norm()).collect(),
        })
        .collect();
    let stack = |f: &dyn Fn(&PlayerDeviation, usize) -> f64| -> Vec<f64> {
        (0..nodes)
            .map(|k| players.iter().map(|p| f(p, k).powi(2)).sum::<f64>().sqrt())
            .collect()
    };
    let stacked_mean = stack(&|p, k| p.mean[k]);
    let stacked_rho = stack(&|p, k| p.rho[k]);
    let pathwise = match pathwise {
        None => None,
        Some(PathwiseMode::Moments) => Some(pathwise_moments(fin, erg, spec)?),
        Some(PathwiseMode::MonteCarlo { plan, samples }) => Some(pathwise_monte_carlo(fin, erg, spec, &plan, samples)?),
    };
    Ok(DeviationProfile {
        horizon: fin.grid.horizon,
        times: fin.grid.nodes(),
        players,
        stacked_mean,
        stacked_rho,
        pathwise,
    })
}

fn pathwise_monte_carlo(
    fin: &FiniteRiccatiSolution,
    erg: &ErgodicSolution,
    spec: &GameSpec,
    plan: &NoisePlan,
    samples: usize,
) -> Result<PathwiseDeviation> {
    let opts = SimOptions::with_samples(plan, samples);
    let a = simulate_finite(fin, spec, plan, &InitialState::SampleInitial, &opts)?;
    let b = simulate_ergodic(erg, spec, plan, &InitialState::SampleInitial, &opts)?;
    Ok(PathwiseDeviation {
        method: "monte-carlo",
        times: a.times.clone(),
        state: paired_squared_deviation(&a, &b)?,
        control: paired_control_deviation(&a, &b)?,
    })
}

/// Per player, `Z = (X_T − X, X)` is Gaussian with
/// `dZ = (𝒜(t)Z + b(t))dt + [0; σ]dW`; integrate its mean and covariance
/// with RK4 on the finite grid and read off the expected squared gaps.
fn pathwise_moments(fin: &FiniteRiccatiSolution, erg: &ErgodicSolution, spec: &GameSpec) -> Result<PathwiseDeviation> {
    let grid = &fin.grid;
    let h = grid.step();
    let nodes = grid.steps + 1;
    let per_player: Vec<(Vec<f64>, Vec<f64>)> = spec
        .players
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<(Vec<f64>, Vec<f64>)> {
            let d = spec.dim;
            let f = &fin.players[i];
            let e = &erg.players[i];
            let r_inv = p.control_cost_inv()?;
            let a_bar = &p.drift - &r_inv * &e.lambda;
            let coeffs = |lambda: &Mat, rho: &Vector| -> (Mat, Vector) {
                let a_t = &p.drift - &r_inv * lambda;
                let mut big = Mat::zeros(2 * d, 2 * d);
                big.view_mut((0, 0), (d, d)).copy_from(&a_t);
                big.view_mut((0, d), (d, d)).copy_from(&(&a_t - &a_bar));
                big.view_mut((d, d), (d, d)).copy_from(&a_bar);
                let mut b = Vector::zeros(2 * d);
                b.rows_mut(0, d).copy_from(&(-(&r_inv * (rho - &e.rho))));
                b.rows_mut(d, d).copy_from(&(-(&r_inv * &e.rho)));
                (big, b)
            };
            let mut noise = Mat::zeros(2 * d, 2 * d);
            noise
                .view_mut((d, d), (d, d))
                .copy_from(&(p.noise() * p.noise().transpose()));
            let rhs = |a: &Mat, b: &Vector, m: &Vector, c: &Mat| -> (Vector, Mat) {
                (a * m + b, a * c + c * a.transpose() + &noise)
            };
            let observe = |k: usize, m: &Vector, c: &Mat| -> (f64, f64) {
                let md = m.rows(0, d);
                let state = md.norm_squared() + c.view((0, 0), (d, d)).trace();
                let mut l = Mat::zeros(d, 2 * d);
                l.view_mut((0, 0), (d, d)).copy_from(&(&r_inv * &f.lambda[k]));
                l.view_mut((0, d), (d, d)).copy_from(&(&r_inv * (&f.lambda[k] - &e.lambda)));
                let offset = &r_inv * (&f.rho[k] - &e.rho);
                let mean = &l * m + offset;
                let control = mean.norm_squared() + (&l * c * l.transpose()).trace();
                (state, control)
            };
            let mut m = Vector::zeros(2 * d);
            m.rows_mut(d, d).copy_from(&p.initial_mean);
            let mut c = Mat::zeros(2 * d, 2 * d);
            c.view_mut((d, d), (d, d)).copy_from(&p.initial_covariance()?);
            let mut state = Vec::with_capacity(nodes);
            let mut control = Vec::with_capacity(nodes);
            let (s0, c0) = observe(0, &m, &c);
            state.push(s0);
            control.push(c0);
            for k in 0..grid.steps {
                let (a0, b0) = coeffs(&f.lambda[k], &f.rho[k]);
                let (a1, b1) = coeffs(&f.lambda[k + 1], &f.rho[k + 1]);
                let am = (&a0 + &a1) * 0.5;
                let bm = (&b0 + &b1) * 0.5;
                let (k1m, k1c) = rhs(&a0, &b0, &m, &c);
                let (k2m, k2c) = rhs(&am, &bm, &(&m + &k1m * (0.5 * h)), &(&c + &k1c * (0.5 * h)));
                let (k3m, k3c) = rhs(&am, &bm, &(&m + &k2m * (0.5 * h)), &(&c + &k2c * (0.5 * h)));
                let (k4m, k4c) = rhs(&a1, &b1, &(&m + &k3m * h), &(&c + &k3c * h));
                m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
                c += (k1c + k2c * 2.0 + k3c * 2.0 + k4c) * (h / 6.0);
                c = linalg::symmetrize(&c);
                let (s, ctl) = observe(k + 1, &m, &c);
                state.push(s);
                control.push(ctl);
            }
            Ok((state, control))
        })
        .collect::<Result<_>>()?;
    let exact = |v: f64| Estimate { value: v, se: 0.0 };
    let state = (0..nodes).map(|k| exact(per_player.iter().map(|p| p.0[k]).sum())).collect();
    let control = (0..nodes).map(|k| exact(per_player.iter().map(|p| p.1[k]).sum())).collect();
    Ok(PathwiseDeviation {
        method: "moments",
        times: grid.nodes(),
        state,
        control,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `K e^{−λt}`, fitted on `[0.05T, 0.45T]`.
    Left,
    /// `K e^{−λ(T−t)}`, fitted on `[0.55T, 0.95T]`.
    Right,
    /// `K(e^{−λt} + e^{−λ(T−t)})` on `[0.05T, 0.95T]`.
    TwoSided,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub khat: f64,
    pub lambdahat: f64,
    pub branch: Branch,
    pub window: (f64, f64),
    /// RMS of the residual in log space.
    pub rms: f64,
    pub points: usize,
    /// `λ̂ > 0`.
    pub decaying: bool,
}

impl DecayFit {
    pub fn envelope(&self, t: f64, horizon: f64) -> f64 {
        self.khat * ((-self.lambdahat * t).exp() + (-self.lambdahat * (horizon - t)).exp())
    }
}

fn window_of(branch: Branch, horizon: f64) -> (f64, f64) {
    match branch {
        Branch::Left => (0.05 * horizon, 0.45 * horizon),
        Branch::Right => (0.55 * horizon, 0.95 * horizon),
        Branch::TwoSided => (0.05 * horizon, 0.95 * horizon),
    }
}

fn window_points(times: &[f64], values: &[f64], window: (f64, f64)) -> Vec<(f64, f64)> {
    let tol = 1e-12 * window.1.abs().max(1.0);
    times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= window.0 - tol && **t <= window.1 + tol && **v > LOG_FLOOR)
        .map(|(t, v)| (*t, *v))
        .collect()
}

fn regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

fn two_sided_rms(points: &[(f64, f64)], horizon: f64, log_k: f64, lambda: f64) -> f64 {
    let n = points.len() as f64;
    (points
        .iter()
        .map(|&(t, g)| {
            let model = log_k + ((-lambda * t).exp() + (-lambda * (horizon - t)).exp()).ln();
            (g.ln() - model).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

fn best_log_k(points: &[(f64, f64)], horizon: f64, lambda: f64) -> f64 {
    points
        .iter()
        .map(|&(t, g)| g.ln() - ((-lambda * t).exp() + (-lambda * (horizon - t)).exp()).ln())
        .sum::<f64>()
        / points.len() as f64
}

/// Fit an exponential envelope to a nonnegative series on `[0, horizon]`.
///
/// Points at or below the log floor are dropped. A non-decaying series is
/// returned with `decaying = false`.
pub fn fit_envelope(times: &[f64], values: &[f64], horizon: f64, branch: Branch) -> Result<DecayFit> {
    let single = |b: Branch| -> Result<DecayFit> {
        let window = window_of(b, horizon);
        let pts = window_points(times, values, window);
        if pts.len() < 8 {
            return Err(Error::Fit(format!("{} usable points in window {window:?}", pts.len())));
        }
        let xs: Vec<f64> = pts
            .iter()
            .map(|p| if b == Branch::Left { p.0 } else { horizon - p.0 })
            .collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let (slope, intercept, rms) = regression(&xs, &ys);
        Ok(DecayFit {
            khat: intercept.exp(),
            lambdahat: -slope,
            branch: b,
            window,
            rms,
            points: pts.len(),
            decaying: slope < 0.0,
        })
    };
    match branch {
        Branch::Left | Branch::Right => single(branch),
        Branch::TwoSided => {
            let window = window_of(branch, horizon);
            let pts = window_points(times, values, window);
            if pts.len() < 8 {
                return Err(Error::Fit(format!("{} usable points in window {window:?}", pts.len())));
            }
            let seeds: Vec<f64> = [Branch::Left, Branch::Right]
                .into_iter()
                .filter_map(|b| single(b).ok())
                .filter(|f| f.decaying)
                .map(|f| f.lambdahat)
                .collect();
            if seeds.is_empty() {
                return Ok(DecayFit {
                    khat: f64::NAN,
                    lambdahat: f64::NAN,
                    branch,
                    window,
                    rms: f64::NAN,
                    points: pts.len(),
                    decaying: false,
                });
            }
            let mut lambda = seeds.iter().sum::<f64>() / seeds.len() as f64;
            let mut log_k = best_log_k(&pts, horizon, lambda);
            for _ in 0..200 {
                // Golden-section search on λ with K fixed, then the exact
                // K update for the new λ.
                let (mut lo, mut hi) = (0.5 * lambda, 2.0 * lambda);
                let phi = 0.5 * (5f64.sqrt() - 1.0);
                let mut x1 = hi - phi * (hi - lo);
                let mut x2 = lo + phi * (hi - lo);
                let mut f1 = two_sided_rms(&pts, horizon, log_k, x1);
                let mut f2 = two_sided_rms(&pts, horizon, log_k, x2);
                for _ in 0..100 {
                    if f1 < f2 {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - phi * (hi - lo);
                        f1 = two_sided_rms(&pts, horizon, log_k, x1);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + phi * (hi - lo);
                        f2 = two_sided_rms(&pts, horizon, log_k, x2);
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                let new_lambda = 0.5 * (lo + hi);
                let new_log_k = best_log_k(&pts, horizon, new_lambda);
                let change = (new_lambda - lambda).abs() / lambda + (new_log_k - log_k).abs();
                lambda = new_lambda;
                log_k = new_log_k;
                if change < 1e-13 {
                    break;
                }
            }
            Ok(DecayFit {
                khat: log_k.exp(),
                lambdahat: lambda,
                branch,
                window,
                rms: two_sided_rms(&pts, horizon, log_k, lambda),
                points: pts.len(),
                decaying: lambda > 0.0,
            })
        }
    }
}

/// Whether `g(t) ≤ slack · K̂(e^{−λ̂t} + e^{−λ̂(T−t)})` on the fit window.
pub fn envelope_holds(fit: &DecayFit, times: &[f64], values: &[f64], horizon: f64, slack: f64) -> bool {
    window_points(times, values, fit.window)
        .iter()
        .all(|&(t, g)| g <= slack * fit.envelope(t, horizon))
}

/// Choose the branch from where the series is large: an end counts as
/// present when it exceeds the midpoint value a hundredfold.
pub fn detect_branch(times: &[f64], values: &[f64], horizon: f64) -> Branch {
    let at = |t: f64| -> f64 {
        let k = times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(k, _)| k);
        values[k]
    };
    let mid = at(0.5 * horizon).max(LOG_FLOOR);
    let left = at(0.05 * horizon) > 100.0 * mid;
    let right = at(0.95 * horizon) > 100.0 * mid;
    match (left, right) {
        (true, true) => Branch::TwoSided,
        (true, false) => Branch::Left,
        _ => Branch::Right,
    }
}

/// Result of fitting one deviation series.
#[derive(Debug, Clone, Serialize)]
pub struct FitRecord {
    pub quantity: String,
    pub player: Option<usize>,
    /// `fit`, `exact-zero` or `fit-fail`.
    pub status: &'static str,
    #[serde(flatten)]
    pub fit: Option<DecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Fit a series, reporting identically vanishing series as `exact-zero`.
/// `scale` sets the reference size for the zero test.
pub fn fit_series(
    quantity: &str,
    player: Option<usize>,
    times: &[f64],
    values: &[f64],
    horizon: f64,
    scale: f64,
) -> FitRecord {
    let peak = values.iter().copied().fold(0.0, f64::max);
    let mut rec = FitRecord {
        quantity: quantity.to_string(),
        player,
        status: "fit",
        fit: None,
        note: None,
    };
    if peak <= ZERO_SERIES_RELATIVE * scale.max(1.0) {
        rec.status = "exact-zero";
        return rec;
    }
    let branch = detect_branch(times, values, horizon);
    match fit_envelope(times, values, horizon, branch) {
        Ok(fit) => {
            if !fit.decaying {
                rec.status = "fit-fail";
                rec.note = Some("series does not decay".into());
            }
            rec.fit = Some(fit);
        }
        Err(e) => {
            rec.status = "fit-fail";
            rec.note = Some(e.to_string());
        }
    }
    rec
}

/// Fits of every series in a profile.
pub fn fit_profile(profile: &DeviationProfile, erg: &ErgodicSolution) -> Vec<FitRecord> {
    let (t, horizon) = (&profile.times, profile.horizon);
    let mut out = Vec::new();
    for (i, (p, e)) in profile.players.iter().zip(&erg.players).enumerate() {
        out.push(fit_series("lambda", Some(i), t, &p.lambda, horizon, linalg::spectral_norm(&e.lambda)));
        out.push(fit_series(
            "covariance",
            Some(i),
            t,
            &p.covariance,
            horizon,
            linalg::spectral_norm(&e.covariance),
        ));
        out.push(fit_series("mean", Some(i), t, &p.mean, horizon, e.mean.norm()));
        out.push(fit_series("rho", Some(i), t, &p.rho, horizon, e.rho.norm()));
    }
    let mu_scale = erg.stacked_mean().norm();
    out.push(fit_series("stacked_mean", None, t, &profile.stacked_mean, horizon, mu_scale));
    let rho_scale = erg.players.iter().map(|p| p.rho.norm_squared()).sum::<f64>().sqrt();
    out.push(fit_series("stacked_rho", None, t, &profile.stacked_rho, horizon, rho_scale));
    if let Some(pw) = &profile.pathwise {
        let scale: f64 = erg.players.iter().map(|p| p.covariance.trace()).sum();
        let state: Vec<f64> = pw.state.iter().map(|e| e.value).collect();
        let control: Vec<f64> = pw.control.iter().map(|e| e.value).collect();
        out.push(fit_series("state", None, &pw.times, &state, horizon, scale));
        out.push(fit_series("control", None, &pw.times, &control, horizon, scale));
    }
    out
}

impl DeviationProfile {
    /// `t`, then per player `dev_lambda_i, dev_cov_i, dev_mu_i, dev_rho_i`,
    /// then `mu_hat, rho_hat`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let mut header = vec!["t".to_string()];
        for i in 0..self.players.len() {
            header.extend(["dev_lambda", "dev_cov", "dev_mu", "dev_rho"].iter().map(|c| format!("{c}_{i}")));
        }
        header.push("mu_hat".into());
        header.push("rho_hat".into());
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.12e}")];
            for p in &self.players {
                for v in [p.lambda[k], p.covariance[k], p.mean[k], p.rho[k]] {
                    row.push(format!("{v:.12e}"));
                }
            }
            row.push(format!("{:.12e}", self.stacked_mean[k]));
            row.push(format!("{:.12e}", self.stacked_rho[k]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// `t,state,state_se,control,control_se` for the pathwise gap.
    pub fn write_pathwise_csv(&self, mut out: impl Write) -> Result<()> {
        let pw = self
            .pathwise
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("profile has no pathwise deviations".into()))?;
        writeln!(out, "t,state,state_se,control,control_se")?;
        for (k, t) in pw.times.iter().enumerate() {
            writeln!(
                out,
                "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                pw.state[k].value, pw.state[k].se, pw.control[k].value, pw.control[k].se
            )?;
        }
        Ok(())
    }
}

/// One horizon of the value-ergodicity series.
#[derive(Debug, Clone, Serialize)]
pub struct ValuePoint {
    pub horizon: f64,
    /// `(1/T)V_T^i(0, x)` per player.
    pub normalized_value: Vec<f64>,
    pub c: Vec<f64>,
    pub gap: Vec<f64>,
}

/// `(1/T)V_T^i(0, x)` against the ergodic constant `c^i` for each horizon.
pub fn value_ergodicity(
    spec: &GameSpec,
    erg: &ErgodicSolution,
    x: &Vector,
    horizons: &[f64],
    options: &FiniteOptions,
) -> Result<Vec<ValuePoint>> {
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("horizons must be strictly increasing".into()));
    }
    if x.len() != spec.dim {
        return Err(Error::Dimension(format!("x has length {}, expected {}", x.len(), spec.dim)));
    }
    horizons
        .iter()
        .map(|&horizon| {
            let grid = TimeGrid::with_default_steps(horizon)?;
            let fin = solve_finite_system_with(spec, &grid, *options)?;
            let mut normalized = Vec::new();
            let mut gap = Vec::new();
            for (i, e) in erg.players.iter().enumerate() {
                let v = evaluate_value(&fin, i, 0.0, x)? / horizon;
                normalized.push(v);
                gap.push((v - e.value).abs());
            }
            Ok(ValuePoint {
                horizon,
                normalized_value: normalized,
                c: erg.players.iter().map(|p| p.value).collect(),
                gap,
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties. Values within a
/// relative `1e-9` of each other count as tied; a constant input has no
/// trend and returns 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut start = 0;
        while start < idx.len() {
            let mut end = start + 1;
            while end < idx.len() && (v[idx[end]] - v[idx[start]]).abs() <= 1e-9 * v[idx[start]].abs().max(1e-300) {
                end += 1;
            }
            let avg = 0.5 * (start + end - 1) as f64;
            for &k in &idx[start..end] {
                r[k] = avg;
            }
            start = end;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Per-`N` results of a uniform scan.
#[derive(Debug, Clone, Serialize)]
pub struct ScanEntry {
    pub n: usize,
    /// Fits of the normalized series `(1/N)|𝛍̂|²`, `(1/N)|𝛒̂|²`,
    /// `(1/N)E|𝐗_T − 𝐗|²`, `(1/N)E|𝛂_T − 𝛂|²`.
    pub fits: Vec<FitRecord>,
    /// Peak of each normalized series on `[0.05T, 0.95T]`.
    pub peaks: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantitySpread {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `λ̂_max/λ̂_min`.
    pub lambda_ratio: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// Spearman correlation of the peak normalized deviation against `N`.
    pub peak_spearman: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformScan {
    pub family: ExampleKind,
    pub dim: usize,
    pub horizon: f64,
    pub method: &'static str,
    pub entries: Vec<ScanEntry>,
    pub spread: BTreeMap<String, QuantitySpread>,
}

impl UniformScan {
    /// Largest `λ̂` ratio over all fitted quantities.
    pub fn worst_lambda_ratio(&self) -> f64 {
        self.spread.values().map(|s| s.lambda_ratio).fold(1.0, f64::max)
    }

    pub fn worst_spearman(&self) -> f64 {
        self.spread.values().map(|s| s.peak_spearman).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scan a game family over `ns`, fitting envelopes to the `1/N`-normalized
/// aggregate deviations. Stochastic gaps use the exact moment route.
pub fn uniform_scan(
    kind: ExampleKind,
    params: &ExampleParams,
    ns: &[usize],
    dim: usize,
    grid_for: impl Fn(usize) -> Result<TimeGrid> + Sync,
    options: &FiniteOptions,
) -> Result<UniformScan> {
    let entries: Vec<ScanEntry> = ns
        .par_iter()
        .map(|&n| -> Result<ScanEntry> {
            let wrap = |e: Error| Error::InvalidParameter(format!("uniform scan failed at N = {n}: {e}"));
            let spec = build_example(kind, n, dim, params).map_err(wrap)?;
            let grid = grid_for(n).map_err(wrap)?;
            let erg = solve_ergodic_system_with(&spec, options.f0_mode).map_err(wrap)?;
            let fin = solve_finite_system_with(&spec, &grid, *options).map_err(wrap)?;
            let profile = deviation_profile(&fin, &erg, &spec, Some(PathwiseMode::Moments)).map_err(wrap)?;
            let nf = n as f64;
            let pw = profile.pathwise.as_ref().expect("requested");
            let series: Vec<(&str, Vec<f64>, f64)> = vec![
                (
                    "mean",
                    profile.stacked_mean.iter().map(|v| v * v / nf).collect(),
                    erg.stacked_mean().norm_squared() / nf,
                ),
                (
                    "rho",
                    profile.stacked_rho.iter().map(|v| v * v / nf).collect(),
                    erg.players.iter().map(|p| p.rho.norm_squared()).sum::<f64>() / nf,
                ),
                (
                    "state",
                    pw.state.iter().map(|e| e.value / nf).collect(),
                    erg.players.iter().map(|p| p.covariance.trace()).sum::<f64>() / nf,
                ),
                ("control", pw.control.iter().map(|e| e.value / nf).collect(), 1.0),
            ];
            let horizon = grid.horizon;
            let times = grid.nodes();
            let mut fits = Vec::new();
            let mut peaks = BTreeMap::new();
            for (name, values, scale) in series {
                let peak = times
                    .iter()
                    .zip(&values)
                    .filter(|(t, _)| **t >= 0.05 * horizon && **t <= 0.95 * horizon)
                    .map(|(_, v)| *v)
                    .fold(0.0, f64::max);
                peaks.insert(name.to_string(), peak);
                fits.push(fit_series(name, None, &times, &values, horizon, scale));
            }
            Ok(ScanEntry { n, fits, peaks })
        })
        .collect::<Result<_>>()?;

    let mut spread = BTreeMap::new();
    let names: Vec<String> = entries
        .first()
        .map(|e| e.fits.iter().map(|f| f.quantity.clone()).collect())
        .unwrap_or_default();
    for name in names {
        let fitted: Vec<(usize, &DecayFit)> = entries
            .iter()
            .filter_map(|e| {
                e.fits
                    .iter()
                    .find(|f| f.quantity == name && f.status == "fit")
                    .and_then(|f| f.fit.as_ref())
                    .map(|f| (e.n, f))
            })
            .collect();
        if fitted.len() < 2 {
            continue;
        }
        let lambdas: Vec<f64> = fitted.iter().map(|f| f.1.lambdahat).collect();
        let ks: Vec<f64> = fitted.iter().map(|f| f.1.khat).collect();
        let ns_f: Vec<f64> = entries.iter().map(|e| e.n as f64).collect();
        let peaks: Vec<f64> = entries.iter().map(|e| e.peaks[&name]).collect();
        let lambda_min = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let lambda_max = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        spread.insert(
            name,
            QuantitySpread {
                lambda_min,
                lambda_max,
                lambda_ratio: lambda_max / lambda_min,
                k_min: ks.iter().copied().fold(f64::INFINITY, f64::min),
                k_max: ks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                peak_spearman: spearman(&ns_f, &peaks),
            },
        );
    }
    Ok(UniformScan {
        family: kind,
        dim,
        horizon: entries.first().map_or(0.0, |_| grid_for(ns[0]).map(|g| g.horizon).unwrap_or(0.0)),
        method: "moments",
        entries,
        spread,
    })
}

/// Everything `turnpike` writes to `turnpike.json`.
#[derive(Debug, Clone, Serialize)]
pub struct TurnpikeReport {
    pub horizon: f64,
    pub profiles: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pathwise: Option<String>,
    pub fits: Vec<FitRecord>,
    pub value_series: Vec<ValuePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uniform_scan: Option<UniformScan>,
}

/// Gnuplot script drawing the deviation profiles on a log scale.
pub fn plot_script(n_players: usize, profiles_csv: &str, pathwise_csv: Option<&str>) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset logscale y\nset format y '%.0e'\nset xlabel 't'\n");
    s.push_str("set key outside right\nset terminal pngcairo size 1000,600\n\n");
    let columns = ["dev_lambda", "dev_cov", "dev_mu", "dev_rho"];
    for (c, name) in columns.iter().enumerate() {
        s.push_str(&format!("set output '{name}.png'\nset ylabel '{name}'\nplot "));
        let lines: Vec<String> = (0..n_players)
            .map(|i| {
                format!(
                    "'{profiles_csv}' using 1:(${col} > 0 ? ${col} : NaN) with lines title 'player {i}'",
                    col = 2 + 4 * i + c
                )
            })
            .collect();
        s.push_str(&lines.join(", \\\n     "));
        s.push_str("\n\n");
    }
    let base = 2 + 4 * n_players;
    s.push_str(&format!(
        "set output 'stacked.png'\nset ylabel 'stacked gap'\nplot '{profiles_csv}' using 1:(${base} > 0 ? ${base} : NaN) \
         with lines title '|mu_T - mu|', \\\n     '{profiles_csv}' using 1:(${} > 0 ? ${} : NaN) with lines title '|rho_T - rho|'\n\n",
        base + 1,
        base + 1
    ));
    if let Some(pw) = pathwise_csv {
        s.push_str(&format!(
            "set output 'pathwise.png'\nset ylabel 'E|X_T - X|^2'\nplot '{pw}' using 1:($2 > 0 ? $2 : NaN) with lines \
             title 'state', \\\n     '{pw}' using 1:($4 > 0 ? $4 : NaN) with lines title 'control'\n"
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fix_a;
    use crate::riccati_ergodic::solve_ergodic_system;
    use crate::riccati_finite::solve_finite_system;

    fn grid_series(horizon: f64, k: usize, g: impl Fn(f64) -> f64) -> (Vec<f64>, Vec<f64>) {
        let t: Vec<f64> = (0..=k).map(|j| horizon * j as f64 / k as f64).collect();
        let v = t.iter().map(|&s| g(s)).collect();
        (t, v)
    }

    #[test]
    fn exact_single_exponential() {
        let (t, v) = grid_series(10.0, 1000, |s| 3.0 * (-2.0 * s).exp());
        let fit = fit_envelope(&t, &v, 10.0, Branch::Left).unwrap();
        assert!((fit.khat - 3.0).abs() < 1e-6 && (fit.lambdahat - 2.0).abs() < 1e-6);
        assert!(envelope_holds(&fit, &t, &v, 10.0, 1.1));
    }

    #[test]
    fn exact_sum_model() {
        let horizon = 20.0;
        let (t, v) = grid_series(horizon, 2000, |s| (-s).exp() + (-(horizon - s)).exp());
        let fit = fit_envelope(&t, &v, horizon, Branch::TwoSided).unwrap();
        assert!((fit.khat - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.lambdahat - 1.0).abs() < 1e-3, "{fit:?}");
        assert_eq!(detect_branch(&t, &v, horizon), Branch::TwoSided);
    }

    #[test]
    fn degenerate_and_growing() {
        let (t, v) = grid_series(10.0, 10, |s| (-s).exp());
        assert!(fit_envelope(&t, &v, 10.0, Branch::Left).is_err());
        let (t, v) = grid_series(10.0, 1000, |s| s.exp());
        assert!(!fit_envelope(&t, &v, 10.0, Branch::Left).unwrap().decaying);
        let rec = fit_series("x", None, &t, &vec![0.0; t.len()], 10.0, 1.0);
        assert_eq!(rec.status, "exact-zero");
    }

    #[test]
    fn fix_a_profile() {
        let spec = fix_a();
        let horizon = 10.0;
        let fin = solve_finite_system(&spec, &TimeGrid::new(horizon, 10_000).unwrap()).unwrap();
        let erg = solve_ergodic_system(&spec).unwrap();
        let prof = deviation_profile(&fin, &erg, &spec, None).unwrap();
        let last = prof.times.len() - 1;
        assert_eq!(prof.players[0].lambda[last], linalg::spectral_norm(&erg.players[0].lambda));
        assert!(prof.stacked_mean.iter().all(|v| *v == 0.0));
        assert!(prof.stacked_rho.iter().all(|v| *v == 0.0));
        let r2 = 2f64.sqrt();
        for (k, &t) in prof.times.iter().enumerate().step_by(97) {
            let exact = (r2 * (r2 * (horizon - t) + (1.0 / r2).atanh()).tanh() - 1.0 - (r2 - 1.0)).abs();
            assert!((prof.players[0].lambda[k] - exact).abs() < 1e-8);
        }
        let fit = fit_envelope(&prof.times, &prof.players[0].lambda, horizon, Branch::Right).unwrap();
        let rate = 2.0 * r2;
        assert!(fit.lambdahat > 0.95 * rate && fit.lambdahat < 1.05 * rate, "{fit:?}");
        let fits = fit_profile(&prof, &erg);
        assert!(fits.iter().any(|f| f.quantity == "mean" && f.status == "exact-zero"));
    }

    #[test]
    fn moments_agree_with_monte_carlo() {
        let spec = fix_a();
        let horizon = 2.0;
        let fin = solve_finite_system(&spec, &TimeGrid::new(horizon, 2000).unwrap()).unwrap();
        let erg = solve_ergodic_system(&spec).unwrap();
        let exact = deviation_profile(&fin, &erg, &spec, Some(PathwiseMode::Moments)).unwrap();
        let plan = NoisePlan::new(4, 4000, 1e-3, horizon).unwrap();
        let mc = deviation_profile(&fin, &erg, &spec, Some(PathwiseMode::MonteCarlo { plan, samples: 20 })).unwrap();
        let (e, m) = (exact.pathwise.unwrap(), mc.pathwise.unwrap());
        for (s, &t) in m.times.iter().enumerate() {
            let k = fin.grid.nearest(t).unwrap();
            let (a, b) = (e.state[k].value, m.state[s]);
            assert!((a - b.value).abs() <= 4.0 * b.se + 1e-3 * a, "t={t}: {a} vs {b:?}");
        }
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), 0.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_gap_matches_definition() {
        let spec = fix_a();
        let erg = solve_ergodic_system(&spec).unwrap();
        let x = Vector::from_element(1, 0.7);
        let series = value_ergodicity(&spec, &erg, &x, &[4.0], &FiniteOptions::default()).unwrap();
        let fin = solve_finite_system(&spec, &TimeGrid::with_default_steps(4.0).unwrap()).unwrap();
        let p = &fin.players[1];
        let direct = ((0.5 * 0.49 * p.lambda[0][(0, 0)] + p.rho[0][0] * 0.7 + p.kappa[0]) / 4.0 - erg.players[1].value).abs();
        assert!((series[0].gap[1] - direct).abs() < 1e-14);
        assert!(value_ergodicity(&spec, &erg, &x, &[4.0, 2.0], &FiniteOptions::default()).is_err());
    }
}
