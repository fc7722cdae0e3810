//! Euler–Maruyama simulation of equilibrium state and control paths.
//!
//! Increments come from a counter-keyed stream per `(path, player)`, so the
//! finite-horizon and ergodic dynamics can be driven by the same Brownian
//! path and every run is reproducible bit for bit.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::linalg::{self, Mat, Vector};
use crate::riccati_ergodic::ErgodicSolution;
use crate::riccati_finite::FiniteRiccatiSolution;

/// Largest ensemble (states plus controls) held in memory.
pub const MAX_ENSEMBLE_BYTES: usize = 2 << 30;

const INITIAL_STREAM_BIT: u64 = 1 << 63;

/// Seed, path count and time stepping of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisePlan {
    pub seed: u64,
    pub paths: usize,
    pub step: f64,
    pub steps: usize,
}

impl NoisePlan {
    /// Plan covering `[0, horizon]` with step `h`; `h` must divide the
    /// horizon.
    pub fn new(seed: u64, paths: usize, h: f64, horizon: f64) -> Result<Self> {
        if paths == 0 {
            return Err(Error::InvalidParameter("need at least one path".into()));
        }
        if !(h > 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("need h > 0 and T > 0, got h={h}, T={horizon}")));
        }
        let steps = (horizon / h).round() as usize;
        if steps == 0 || (steps as f64 * h - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidParameter(format!("h = {h} does not divide T = {horizon}")));
        }
        Ok(Self {
            seed,
            paths,
            step: h,
            steps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.step
    }

    fn increment_rng(&self, path: usize, player: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((path as u64) << 20) | player as u64);
        rng
    }

    fn initial_rng(&self, path: usize, player: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(INITIAL_STREAM_BIT | ((path as u64) << 20) | player as u64);
        rng
    }

    /// Standard normal draws `z` with `ΔW = √h z` for step `k` of
    /// `(path, player)`, regenerated from scratch.
    pub fn increment(&self, path: usize, player: usize, k: usize, dim: usize) -> Vec<f64> {
        let mut rng = self.increment_rng(path, player);
        let mut z = vec![0.0; dim];
        for _ in 0..=k {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        z
    }
}

/// Initial condition of every path.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// The same deterministic state for all paths, one vector per player.
    Fixed(Vec<Vector>),
    /// Draw from the game's initial law `N(μ_0, Σ_0⁻¹)`.
    SampleInitial,
    /// Draw from `N(mean_i, cov_i)` per player.
    Gaussian { means: Vec<Vector>, covariances: Vec<Mat> },
}

/// Which equilibrium produced an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Finite,
    Ergodic,
    Perturbed,
}

/// Linear feedback `α_i = K_i(t)x + b_i(t)` of every player, tabulated per
/// simulation step (or constant).
#[derive(Debug, Clone)]
pub struct PolicyTable {
    n: usize,
    d: usize,
    constant: bool,
    drift: Vec<f64>,
    gain: Vec<f64>,
    offset: Vec<f64>,
}

fn push_mat(dst: &mut Vec<f64>, m: &Mat) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            dst.push(m[(r, c)]);
        }
    }
}

impl PolicyTable {
    /// Finite-horizon equilibrium feedback `R⁻¹Λ_T(t)`, `R⁻¹ρ_T(t)` at the
    /// plan's steps.
    pub fn finite(sol: &FiniteRiccatiSolution, spec: &GameSpec, plan: &NoisePlan) -> Result<Self> {
        let horizon = sol.grid.horizon;
        if (plan.horizon() - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidParameter(format!(
                "horizon mismatch: plan covers {}, solution covers {horizon}",
                plan.horizon()
            )));
        }
        let (n, d) = (spec.n_players, spec.dim);
        let r_inv: Vec<Mat> = spec.players.iter().map(|p| p.control_cost_inv()).collect::<Result<_>>()?;
        let mut gain = Vec::with_capacity((plan.steps + 1) * n * d * d);
        let mut offset = Vec::with_capacity((plan.steps + 1) * n * d);
        for k in 0..=plan.steps {
            let t = (k as f64 * plan.step).min(horizon);
            for (i, ri) in r_inv.iter().enumerate() {
                let (lambda, rho, _) = sol.coefficients(i, t)?;
                push_mat(&mut gain, &(ri * lambda));
                offset.extend((ri * rho).iter());
            }
        }
        Ok(Self::assemble(spec, false, gain, offset))
    }

    /// Stationary feedback `R⁻¹Λ`, `R⁻¹ρ`.
    pub fn ergodic(erg: &ErgodicSolution, spec: &GameSpec) -> Result<Self> {
        let mut gain = Vec::new();
        let mut offset = Vec::new();
        for (p, e) in spec.players.iter().zip(&erg.players) {
            let ri = p.control_cost_inv()?;
            push_mat(&mut gain, &(&ri * &e.lambda));
            offset.extend((&ri * &e.rho).iter());
        }
        Ok(Self::assemble(spec, true, gain, offset))
    }

    fn assemble(spec: &GameSpec, constant: bool, gain: Vec<f64>, offset: Vec<f64>) -> Self {
        let mut drift = Vec::new();
        for p in &spec.players {
            push_mat(&mut drift, &p.drift);
        }
        Self {
            n: spec.n_players,
            d: spec.dim,
            constant,
            drift,
            gain,
            offset,
        }
    }

    /// Replace player `i`'s feedback by `R⁻¹((1+δ)Λ x + ρ + δρ·1)`.
    pub fn perturbed(&self, spec: &GameSpec, i: usize, gain_scale: f64, shift: f64) -> Result<Self> {
        let mut out = self.clone();
        let d = self.d;
        let shift_term: Vec<f64> = (spec.players[i].control_cost_inv()? * Vector::from_element(d, shift))
            .iter()
            .copied()
            .collect();
        let rows = if self.constant { 1 } else { self.gain.len() / (self.n * d * d) };
        for k in 0..rows {
            let g = (k * self.n + i) * d * d;
            for v in &mut out.gain[g..g + d * d] {
                *v *= 1.0 + gain_scale;
            }
            let o = (k * self.n + i) * d;
            for (v, s) in out.offset[o..o + d].iter_mut().zip(&shift_term) {
                *v += s;
            }
        }
        Ok(out)
    }

    fn row(&self, k: usize) -> usize {
        if self.constant {
            0
        } else {
            k
        }
    }

    fn gain_at(&self, k: usize, i: usize) -> &[f64] {
        let dd = self.d * self.d;
        let g = (self.row(k) * self.n + i) * dd;
        &self.gain[g..g + dd]
    }

    fn offset_at(&self, k: usize, i: usize) -> &[f64] {
        let o = (self.row(k) * self.n + i) * self.d;
        &self.offset[o..o + self.d]
    }

    fn steps_available(&self) -> Option<usize> {
        (!self.constant).then(|| self.gain.len() / (self.n * self.d * self.d) - 1)
    }
}

/// Monte Carlo paths sampled every `record_every` steps.
///
/// States and controls are stored flat in `[path][player][sample][coord]`
/// order.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub n_players: usize,
    pub dim: usize,
    pub paths: usize,
    pub source: Source,
    pub plan: NoisePlan,
    pub record_every: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    /// Accumulated running cost `∫_0^T` per path for the players listed in
    /// `cost_players` (trapezoid rule on the simulation grid).
    pub path_costs: Vec<Vec<f64>>,
    pub cost_players: Vec<usize>,
}

impl TrajectoryEnsemble {
    fn offset(&self, m: usize, i: usize, s: usize) -> usize {
        ((m * self.n_players + i) * self.times.len() + s) * self.dim
    }

    pub fn state(&self, m: usize, i: usize, s: usize) -> &[f64] {
        let o = self.offset(m, i, s);
        &self.states[o..o + self.dim]
    }

    pub fn control(&self, m: usize, i: usize, s: usize) -> &[f64] {
        let o = self.offset(m, i, s);
        &self.controls[o..o + self.dim]
    }

    /// Index of the recorded sample nearest to `t`.
    pub fn sample_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (s, &ts) in self.times.iter().enumerate() {
            if (ts - t).abs() < (self.times[best] - t).abs() {
                best = s;
            }
        }
        best
    }

    /// Empirical mean and covariance of player `i` at sample `s`, with their
    /// standard errors.
    pub fn moments(&self, i: usize, s: usize) -> EmpiricalMoments {
        let (d, m_count) = (self.dim, self.paths as f64);
        let mut mean = Vector::zeros(d);
        for m in 0..self.paths {
            for (a, v) in self.state(m, i, s).iter().enumerate() {
                mean[a] += v;
            }
        }
        mean /= m_count;
        let mut cov = Mat::zeros(d, d);
        let mut cov_sq = Mat::zeros(d, d);
        for m in 0..self.paths {
            let x = self.state(m, i, s);
            for a in 0..d {
                for b in 0..d {
                    let p = (x[a] - mean[a]) * (x[b] - mean[b]);
                    cov[(a, b)] += p;
                    cov_sq[(a, b)] += p * p;
                }
            }
        }
        let denom = (m_count - 1.0).max(1.0);
        let cov_mean = &cov / m_count;
        let mut cov_se = Mat::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                let var_p = (cov_sq[(a, b)] / m_count - cov_mean[(a, b)].powi(2)).max(0.0) * m_count / denom;
                cov_se[(a, b)] = (var_p / m_count).sqrt();
            }
        }
        let cov = cov / denom;
        let mean_se = Vector::from_fn(d, |a, _| (cov[(a, a)].max(0.0) / m_count).sqrt());
        EmpiricalMoments {
            mean,
            mean_se,
            covariance: cov,
            covariance_se: cov_se,
        }
    }

    /// Per-CSV export: one row per recorded time with each player's
    /// empirical mean and covariance.
    pub fn write_summary_csv(&self, mut out: impl Write) -> Result<()> {
        let d = self.dim;
        let mut header = vec!["t".to_string()];
        for i in 0..self.n_players {
            header.extend((0..d).map(|a| format!("mean_{i}_{a}")));
            for a in 0..d {
                for b in 0..d {
                    header.push(format!("cov_{i}_{a}{b}"));
                }
            }
            header.extend((0..d).map(|a| format!("mean_se_{i}_{a}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for (s, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.12e}")];
            for i in 0..self.n_players {
                let mo = self.moments(i, s);
                row.extend(mo.mean.iter().map(|v| format!("{v:.12e}")));
                for a in 0..d {
                    for b in 0..d {
                        row.push(format!("{:.12e}", mo.covariance[(a, b)]));
                    }
                }
                row.extend(mo.mean_se.iter().map(|v| format!("{v:.12e}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Every recorded state as `path,player,t,x_0,...`; refuses more than
    /// `max_rows` rows.
    pub fn write_paths_csv(&self, mut out: impl Write, max_rows: usize) -> Result<()> {
        let rows = self.paths * self.n_players * self.times.len();
        if rows > max_rows {
            return Err(Error::InvalidParameter(format!(
                "path export would write {rows} rows (limit {max_rows})"
            )));
        }
        let mut header = vec!["path".to_string(), "player".into(), "t".into()];
        header.extend((0..self.dim).map(|a| format!("x_{a}")));
        header.extend((0..self.dim).map(|a| format!("alpha_{a}")));
        writeln!(out, "{}", header.join(","))?;
        for m in 0..self.paths {
            for i in 0..self.n_players {
                for (s, t) in self.times.iter().enumerate() {
                    let mut row = vec![m.to_string(), i.to_string(), format!("{t:.12e}")];
                    row.extend(self.state(m, i, s).iter().map(|v| format!("{v:.12e}")));
                    row.extend(self.control(m, i, s).iter().map(|v| format!("{v:.12e}")));
                    writeln!(out, "{}", row.join(","))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    pub mean: Vector,
    pub mean_se: Vector,
    pub covariance: Mat,
    pub covariance_se: Mat,
}

/// Options shared by all simulations.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub record_every: usize,
    /// Players whose running cost is integrated along every path.
    pub cost_players: Vec<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            cost_players: Vec::new(),
        }
    }
}

impl SimOptions {
    /// Stride giving at most `samples + 1` recorded times.
    pub fn with_samples(plan: &NoisePlan, samples: usize) -> Self {
        Self {
            record_every: plan.steps.div_ceil(samples.max(1)).max(1),
            cost_players: Vec::new(),
        }
    }
}

fn sqrt_factor(cov: &Mat) -> Result<Mat> {
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(cov.clone());
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = linalg::SymEig::new(cov);
    if eig.min() < -1e-12 * eig.max().abs() {
        return Err(Error::NotSpd("initial covariance is indefinite".into()));
    }
    Ok(eig.map(|v| v.max(0.0).sqrt()))
}

struct RunningCost {
    /// Row-major `Nd×Nd` weights `𝐐ⁱ`.
    weights: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    control_costs: Vec<Vec<f64>>,
}

impl RunningCost {
    fn new(spec: &GameSpec, players: &[usize]) -> Self {
        let flat = |m: &Mat| {
            let mut v = Vec::with_capacity(m.len());
            push_mat(&mut v, m);
            v
        };
        Self {
            weights: players.iter().map(|&i| flat(&spec.cost.full_weight(i))).collect(),
            targets: players.iter().map(|&i| spec.cost.stacked_target(i).iter().copied().collect()).collect(),
            control_costs: players.iter().map(|&i| flat(&spec.players[i].control_cost)).collect(),
        }
    }

    /// `½αᵢᵀRαᵢ + (𝐗 − x̄)ᵀ𝐐ⁱ(𝐗 − x̄)` for the `slot`-th tracked player.
    fn eval(&self, slot: usize, player: usize, x: &[f64], alpha: &[f64], d: usize) -> f64 {
        let nd = x.len();
        let (w, target) = (&self.weights[slot], &self.targets[slot]);
        let mut state = 0.0;
        for a in 0..nd {
            let ya = x[a] - target[a];
            if ya == 0.0 {
                continue;
            }
            let row = &w[a * nd..(a + 1) * nd];
            let mut acc = 0.0;
            for b in 0..nd {
                acc += row[b] * (x[b] - target[b]);
            }
            state += ya * acc;
        }
        let r = &self.control_costs[slot];
        let al = &alpha[player * d..(player + 1) * d];
        let mut control = 0.0;
        for a in 0..d {
            for b in 0..d {
                control += al[a] * r[a * d + b] * al[b];
            }
        }
        0.5 * control + state
    }
}

/// Core Euler–Maruyama loop for an arbitrary linear feedback table.
pub fn simulate_policy(
    spec: &GameSpec,
    policy: &PolicyTable,
    plan: &NoisePlan,
    init: &InitialState,
    options: &SimOptions,
    source: Source,
) -> Result<TrajectoryEnsemble> {
    let (n, d) = (spec.n_players, spec.dim);
    if let Some(avail) = policy.steps_available() {
        if avail != plan.steps {
            return Err(Error::InvalidParameter(format!(
                "policy tabulated for {avail} steps, plan has {}",
                plan.steps
            )));
        }
    }
    if options.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be positive".into()));
    }
    let mut record_steps: Vec<usize> = (0..=plan.steps).step_by(options.record_every).collect();
    if *record_steps.last().unwrap() != plan.steps {
        record_steps.push(plan.steps);
    }
    let samples = record_steps.len();
    let bytes = 2 * plan.paths * n * samples * d * std::mem::size_of::<f64>();
    if bytes > MAX_ENSEMBLE_BYTES {
        return Err(Error::InvalidParameter(format!(
            "ensemble needs {bytes} bytes; raise the record stride or lower the path count"
        )));
    }

    let (init_means, init_factors): (Vec<Vector>, Vec<Mat>) = match init {
        InitialState::Fixed(x) => {
            if x.len() != n || x.iter().any(|v| v.len() != d) {
                return Err(Error::Dimension("fixed initial state needs N vectors of length d".into()));
            }
            (x.clone(), vec![Mat::zeros(d, d); n])
        }
        InitialState::SampleInitial => {
            let means = spec.players.iter().map(|p| p.initial_mean.clone()).collect();
            let factors = spec
                .players
                .iter()
                .map(|p| sqrt_factor(&p.initial_covariance()?))
                .collect::<Result<_>>()?;
            (means, factors)
        }
        InitialState::Gaussian { means, covariances } => {
            if means.len() != n || covariances.len() != n {
                return Err(Error::Dimension("initial law needs one mean and covariance per player".into()));
            }
            (means.clone(), covariances.iter().map(sqrt_factor).collect::<Result<_>>()?)
        }
    };
    let random_init = !matches!(init, InitialState::Fixed(_));

    let diffusion: Vec<Mat> = spec.players.iter().map(|p| p.noise() * plan.step.sqrt()).collect();
    let diffusion_zero: Vec<bool> = diffusion.iter().map(|m| m.iter().all(|v| *v == 0.0)).collect();
    let cost = RunningCost::new(spec, &options.cost_players);
    let h = plan.step;

    let block = n * samples * d;
    let mut states = vec![0.0; plan.paths * block];
    let mut controls = vec![0.0; plan.paths * block];
    let mut path_costs = vec![vec![0.0; options.cost_players.len()]; plan.paths];

    states
        .par_chunks_mut(block)
        .zip(controls.par_chunks_mut(block))
        .zip(path_costs.par_iter_mut())
        .enumerate()
        .for_each(|(m, ((st, ct), pc))| {
            let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| plan.increment_rng(m, i)).collect();
            let mut x = vec![0.0; n * d];
            for i in 0..n {
                let mut z = vec![0.0; d];
                if random_init {
                    let mut rng = plan.initial_rng(m, i);
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                }
                for a in 0..d {
                    let mut v = init_means[i][a];
                    for b in 0..d {
                        v += init_factors[i][(a, b)] * z[b];
                    }
                    x[i * d + a] = v;
                }
            }
            let mut alpha = vec![0.0; n * d];
            let mut next = vec![0.0; n * d];
            let mut z = vec![0.0; d];
            let mut prev_cost: Vec<f64> = vec![0.0; options.cost_players.len()];
            let mut s_next = 0;
            for k in 0..=plan.steps {
                for i in 0..n {
                    let g = policy.gain_at(k, i);
                    let o = policy.offset_at(k, i);
                    for a in 0..d {
                        let mut v = o[a];
                        for b in 0..d {
                            v += g[a * d + b] * x[i * d + b];
                        }
                        alpha[i * d + a] = v;
                    }
                }
                for (slot, &pi) in options.cost_players.iter().enumerate() {
                    let c = cost.eval(slot, pi, &x, &alpha, d);
                    if k > 0 {
                        pc[slot] += 0.5 * h * (prev_cost[slot] + c);
                    }
                    prev_cost[slot] = c;
                }
                if s_next < samples && record_steps[s_next] == k {
                    for i in 0..n {
                        let o = (i * samples + s_next) * d;
                        st[o..o + d].copy_from_slice(&x[i * d..(i + 1) * d]);
                        ct[o..o + d].copy_from_slice(&alpha[i * d..(i + 1) * d]);
                    }
                    s_next += 1;
                }
                if k == plan.steps {
                    break;
                }
                for i in 0..n {
                    let a_mat = &policy.drift[i * d * d..(i + 1) * d * d];
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut rngs[i]);
                    }
                    for a in 0..d {
                        let mut drift = -alpha[i * d + a];
                        for b in 0..d {
                            drift += a_mat[a * d + b] * x[i * d + b];
                        }
                        let mut noise = 0.0;
                        if !diffusion_zero[i] {
                            for b in 0..d {
                                noise += diffusion[i][(a, b)] * z[b];
                            }
                        }
                        next[i * d + a] = x[i * d + a] + drift * h + noise;
                    }
                }
                std::mem::swap(&mut x, &mut next);
            }
        });

    Ok(TrajectoryEnsemble {
        times: record_steps.iter().map(|&k| k as f64 * h).collect(),
        n_players: n,
        dim: d,
        paths: plan.paths,
        source,
        plan: *plan,
        record_every: options.record_every,
        states,
        controls,
        path_costs,
        cost_players: options.cost_players.clone(),
    })
}

/// Paths of the finite-horizon equilibrium.
pub fn simulate_finite(
    sol: &FiniteRiccatiSolution,
    spec: &GameSpec,
    plan: &NoisePlan,
    init: &InitialState,
    options: &SimOptions,
) -> Result<TrajectoryEnsemble> {
    let policy = PolicyTable::finite(sol, spec, plan)?;
    simulate_policy(spec, &policy, plan, init, options, Source::Finite)
}

/// Paths of the ergodic equilibrium over the plan's horizon.
pub fn simulate_ergodic(
    erg: &ErgodicSolution,
    spec: &GameSpec,
    plan: &NoisePlan,
    init: &InitialState,
    options: &SimOptions,
) -> Result<TrajectoryEnsemble> {
    let policy = PolicyTable::ergodic(erg, spec)?;
    simulate_policy(spec, &policy, plan, init, options, Source::Ergodic)
}

/// Stationary initial law `N(μ, Σ⁻¹)` of the ergodic equilibrium.
pub fn stationary_start(erg: &ErgodicSolution) -> InitialState {
    InitialState::Gaussian {
        means: erg.means(),
        covariances: erg.covariances(),
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            se: (var / n).sqrt(),
        }
    }
}

/// Time average of player `i`'s running cost over `window`, from the
/// recorded samples (trapezoid rule), averaged over paths.
pub fn running_cost_average(
    ensemble: &TrajectoryEnsemble,
    spec: &GameSpec,
    i: usize,
    window: (f64, f64),
) -> Result<Estimate> {
    let (lo, hi) = window;
    let tol = 1e-9 * hi.abs().max(1.0);
    let idx: Vec<usize> = (0..ensemble.times.len())
        .filter(|&s| ensemble.times[s] >= lo - tol && ensemble.times[s] <= hi + tol)
        .collect();
    if idx.len() < 2 || hi <= lo {
        return Err(Error::InvalidParameter(format!("window [{lo}, {hi}] holds fewer than two samples")));
    }
    let cost = RunningCost::new(spec, &[i]);
    let (n, d) = (ensemble.n_players, ensemble.dim);
    let span = ensemble.times[*idx.last().unwrap()] - ensemble.times[idx[0]];
    let per_path: Vec<f64> = (0..ensemble.paths)
        .into_par_iter()
        .map(|m| {
            let mut x = vec![0.0; n * d];
            let mut alpha = vec![0.0; n * d];
            let mut values = Vec::with_capacity(idx.len());
            for &s in &idx {
                for j in 0..n {
                    x[j * d..(j + 1) * d].copy_from_slice(ensemble.state(m, j, s));
                    alpha[j * d..(j + 1) * d].copy_from_slice(ensemble.control(m, j, s));
                }
                values.push(cost.eval(0, i, &x, &alpha, d));
            }
            let integral: f64 = idx
                .windows(2)
                .zip(values.windows(2))
                .map(|(s, v)| 0.5 * (ensemble.times[s[1]] - ensemble.times[s[0]]) * (v[0] + v[1]))
                .sum();
            integral / span
        })
        .collect();
    Ok(Estimate::from_samples(&per_path))
}

/// Per sample time: `E Σ_i |X_i − Y_i|²` between two ensembles on the same
/// recording grid, with standard errors.
pub fn paired_squared_deviation(a: &TrajectoryEnsemble, b: &TrajectoryEnsemble) -> Result<Vec<Estimate>> {
    if a.times.len() != b.times.len() || a.paths != b.paths || a.n_players != b.n_players || a.dim != b.dim {
        return Err(Error::Dimension("ensembles are not on the same recording grid".into()));
    }
    Ok((0..a.times.len())
        .map(|s| {
            let xs: Vec<f64> = (0..a.paths)
                .map(|m| {
                    (0..a.n_players)
                        .map(|i| {
                            a.state(m, i, s)
                                .iter()
                                .zip(b.state(m, i, s))
                                .map(|(x, y)| (x - y).powi(2))
                                .sum::<f64>()
                        })
                        .sum()
                })
                .collect();
            Estimate::from_samples(&xs)
        })
        .collect())
}

/// Same as [`paired_squared_deviation`] for the controls.
pub fn paired_control_deviation(a: &TrajectoryEnsemble, b: &TrajectoryEnsemble) -> Result<Vec<Estimate>> {
    if a.times.len() != b.times.len() || a.paths != b.paths || a.n_players != b.n_players || a.dim != b.dim {
        return Err(Error::Dimension("ensembles are not on the same recording grid".into()));
    }
    Ok((0..a.times.len())
        .map(|s| {
            let xs: Vec<f64> = (0..a.paths)
                .map(|m| {
                    (0..a.n_players)
                        .map(|i| {
                            a.control(m, i, s)
                                .iter()
                                .zip(b.control(m, i, s))
                                .map(|(x, y)| (x - y).powi(2))
                                .sum::<f64>()
                        })
                        .sum()
                })
                .collect();
            Estimate::from_samples(&xs)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fix_a;
    use crate::riccati_ergodic::solve_ergodic_system;
    use crate::riccati_finite::{solve_finite_system, TimeGrid};

    fn within(x: f64, target: f64, se: f64, k: f64) -> bool {
        (x - target).abs() <= k * se
    }

    #[test]
    fn plan_validation() {
        assert!(NoisePlan::new(1, 10, 0.3, 1.0).is_err());
        assert!(NoisePlan::new(1, 0, 0.1, 1.0).is_err());
        let p = NoisePlan::new(1, 10, 0.1, 1.0).unwrap();
        assert_eq!(p.steps, 10);
    }

    #[test]
    fn increments_are_pure_functions_of_the_key() {
        let spec = fix_a();
        let plan = NoisePlan::new(42, 3, 0.1, 1.0).unwrap();
        let erg = solve_ergodic_system(&spec).unwrap();
        let e = simulate_ergodic(&erg, &spec, &plan, &InitialState::Fixed(vec![Vector::zeros(1); 2]), &SimOptions::default())
            .unwrap();
        // Recover z from the first step: x1 = x0 + drift·h + σ√h z with x0 = 0.
        let z = plan.increment(2, 1, 0, 1)[0];
        assert_eq!(e.state(2, 1, 1)[0], 0.1f64.sqrt() * z);
        assert_ne!(plan.increment(2, 1, 0, 1), plan.increment(2, 0, 0, 1));
        assert_ne!(plan.increment(2, 1, 0, 1), plan.increment(2, 1, 1, 1));
    }

    #[test]
    fn noiseless_finite_path_is_deterministic_and_ends_with_zero_control() {
        let mut spec = fix_a();
        for p in spec.players.iter_mut() {
            p.set_noise(Mat::zeros(1, 1));
        }
        let sol = solve_finite_system(&spec, &TimeGrid::new(2.0, 2000).unwrap()).unwrap();
        let plan = NoisePlan::new(7, 3, 1e-3, 2.0).unwrap();
        let init = InitialState::Fixed(vec![Vector::from_element(1, 1.0); 2]);
        let e = simulate_finite(&sol, &spec, &plan, &init, &SimOptions::with_samples(&plan, 100)).unwrap();
        let last = e.times.len() - 1;
        for m in 1..3 {
            assert_eq!(e.state(m, 0, last), e.state(0, 0, last));
        }
        assert_eq!(e.control(0, 0, last)[0], 0.0);
        assert!(e.state(0, 0, last)[0] < 1.0);
    }

    #[test]
    fn noiseless_stationary_point() {
        let mut spec = crate::game::build_example(
            crate::game::ExampleKind::Symmetric,
            2,
            1,
            &crate::game::ExampleParams {
                target: 1.0,
                secondary: 0.1,
                ..Default::default()
            },
        )
        .unwrap();
        // ρ = −R(R⁻¹Λ − A)μ does not involve the noise, so the noisy
        // solution carries the drift's fixed point.
        let erg = solve_ergodic_system(&spec).unwrap();
        for p in spec.players.iter_mut() {
            p.set_noise(Mat::zeros(1, 1));
        }
        let plan = NoisePlan::new(1, 1, 1e-2, 5.0).unwrap();
        let e = simulate_ergodic(&erg, &spec, &plan, &InitialState::Fixed(erg.means()), &SimOptions::default()).unwrap();
        for s in 0..e.times.len() {
            assert!((e.state(0, 0, s)[0] - erg.players[0].mean[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn same_plan_bit_identical() {
        let spec = fix_a();
        let sol = solve_finite_system(&spec, &TimeGrid::new(1.0, 1000).unwrap()).unwrap();
        let plan = NoisePlan::new(9, 50, 1e-3, 1.0).unwrap();
        let opts = SimOptions::with_samples(&plan, 10);
        let a = simulate_finite(&sol, &spec, &plan, &InitialState::SampleInitial, &opts).unwrap();
        let b = simulate_finite(&sol, &spec, &plan, &InitialState::SampleInitial, &opts).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.controls, b.controls);
    }

    #[test]
    fn finite_moments_match_fokker_planck() {
        let spec = fix_a();
        let sol = solve_finite_system(&spec, &TimeGrid::new(2.0, 2000).unwrap()).unwrap();
        let plan = NoisePlan::new(3, 10_000, 1e-3, 2.0).unwrap();
        let e = simulate_finite(&sol, &spec, &plan, &InitialState::SampleInitial, &SimOptions::with_samples(&plan, 20))
            .unwrap();
        let s = e.sample_index(1.0);
        assert_eq!(e.times[s], 1.0);
        let (mean, cov) = sol.moments(0, 1.0).unwrap();
        let mo = e.moments(0, s);
        assert!(within(mo.mean[0], mean[0], mo.mean_se[0], 3.0));
        assert!(within(mo.covariance[(0, 0)], cov[(0, 0)], mo.covariance_se[(0, 0)], 3.0));
    }

    #[test]
    fn controls_follow_feedback() {
        let spec = fix_a();
        let sol = solve_finite_system(&spec, &TimeGrid::new(1.0, 1000).unwrap()).unwrap();
        let plan = NoisePlan::new(5, 4, 1e-3, 1.0).unwrap();
        let e = simulate_finite(&sol, &spec, &plan, &InitialState::SampleInitial, &SimOptions::with_samples(&plan, 10))
            .unwrap();
        for s in 0..e.times.len() {
            let x = Vector::from_column_slice(e.state(1, 0, s));
            let a = crate::riccati_finite::evaluate_feedback(&sol, &spec, 0, e.times[s], &x).unwrap();
            assert!((a[0] - e.control(1, 0, s)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_start_keeps_variance() {
        let spec = fix_a();
        let erg = solve_ergodic_system(&spec).unwrap();
        let plan = NoisePlan::new(11, 10_000, 1e-3, 2.0).unwrap();
        let e = simulate_ergodic(&erg, &spec, &plan, &stationary_start(&erg), &SimOptions::with_samples(&plan, 4)).unwrap();
        for s in 0..e.times.len() {
            let mo = e.moments(1, s);
            assert!(within(mo.covariance[(0, 0)], 2f64.sqrt() / 4.0, mo.covariance_se[(0, 0)], 3.0));
        }
    }

    #[test]
    fn shared_noise_pathwise_gap_is_small() {
        let spec = fix_a();
        let t = 4.0;
        let sol = solve_finite_system(&spec, &TimeGrid::new(t, 4000).unwrap()).unwrap();
        let erg = solve_ergodic_system(&spec).unwrap();
        let plan = NoisePlan::new(2, 500, 1e-3, t).unwrap();
        let opts = SimOptions::with_samples(&plan, 40);
        let a = simulate_finite(&sol, &spec, &plan, &InitialState::SampleInitial, &opts).unwrap();
        let b = simulate_ergodic(&erg, &spec, &plan, &InitialState::SampleInitial, &opts).unwrap();
        let dev = paired_squared_deviation(&a, &b).unwrap();
        let mid = a.sample_index(t / 2.0);
        let var = a.moments(0, mid).covariance[(0, 0)];
        assert!(dev[mid].value < 1e-6 * var);
        assert_eq!(dev[0].value, 0.0);
    }

    #[test]
    fn running_cost_of_null_game_is_zero() {
        let mut spec = fix_a();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    spec.cost.blocks[i][j][k] = Mat::zeros(1, 1);
                }
            }
        }
        let erg = solve_ergodic_system(&fix_a()).unwrap();
        let plan = NoisePlan::new(1, 20, 1e-2, 1.0).unwrap();
        let policy = PolicyTable::ergodic(&erg, &spec).unwrap().perturbed(&spec, 0, -1.0, 0.0).unwrap();
        let e = simulate_policy(&spec, &policy, &plan, &InitialState::SampleInitial, &SimOptions::default(), Source::Perturbed)
            .unwrap();
        let est = running_cost_average(&e, &spec, 0, (0.0, 1.0)).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(running_cost_average(&e, &spec, 0, (2.0, 3.0)).is_err());
    }

    #[test]
    fn memory_guard() {
        let spec = fix_a();
        let erg = solve_ergodic_system(&spec).unwrap();
        let plan = NoisePlan::new(1, 1_000_000, 1e-3, 100.0).unwrap();
        assert!(simulate_ergodic(&erg, &spec, &plan, &InitialState::SampleInitial, &SimOptions::default()).is_err());
    }
}
