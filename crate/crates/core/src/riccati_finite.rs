//! Finite-horizon equilibrium: backward Riccati equations for the value
//! coefficients, forward covariance equations, and the coupled
//! forward-backward system for means and linear value coefficients.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{assemble, eval_f0, eval_f1, AveragedCost, F0Mode, GameSpec, PlayerSpec};
use crate::linalg::{self, BandedSystem, Mat, Vector};
use crate::tolerances::{PICARD_DAMPING, PICARD_MAX_ITER, PICARD_TOL, SPD_RELATIVE};

/// Uniform grid `t_k = kT/K`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub const MIN_STEPS: usize = 16;

    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
        }
        if steps < Self::MIN_STEPS {
            return Err(Error::InvalidParameter(format!(
                "K = {steps} below minimum {}",
                Self::MIN_STEPS
            )));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with `h ≤ min(10⁻³, T/10³)`.
    pub fn with_default_steps(horizon: f64) -> Result<Self> {
        let h = 1e-3_f64.min(horizon / 1e3);
        let steps = ((horizon / h) - 1e-9).ceil().max(Self::MIN_STEPS as f64) as usize;
        Self::new(horizon, steps)
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Interval index and weight for linear interpolation at `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let slack = 1e-12 * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        let pos = (t / self.step()).clamp(0.0, self.steps as f64);
        let k = (pos.floor() as usize).min(self.steps - 1);
        Ok((k, (pos - k as f64).clamp(0.0, 1.0)))
    }

    /// Index of the node nearest to `t`.
    pub fn nearest(&self, t: f64) -> Result<usize> {
        let (k, w) = self.locate(t)?;
        Ok(if w > 0.5 { k + 1 } else { k })
    }
}

/// Coefficient paths of one player, indexed by grid node.
#[derive(Debug, Clone)]
pub struct FinitePlayerPath {
    /// `Λ_T(t_k)`.
    pub lambda: Vec<Mat>,
    /// State covariance `(Σ_T(t_k))⁻¹`.
    pub covariance: Vec<Mat>,
    pub mean: Vec<Vector>,
    pub rho: Vec<Vector>,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FiniteRiccatiSolution {
    pub grid: TimeGrid,
    pub players: Vec<FinitePlayerPath>,
    pub f0_mode: F0Mode,
}

/// How the coupled mean / linear-coefficient system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum CoupledSolver {
    /// Block elimination of the global trapezoid system from the terminal node.
    #[default]
    Sweep,
    /// Generic banded LU on the same global system (memory `O(K (Nd)²)`).
    Banded,
    /// Damped fixed-point iteration alternating backward and forward solves.
    Picard,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FiniteOptions {
    pub f0_mode: F0Mode,
    pub coupled: CoupledSolver,
}

fn riccati_rhs(player: &PlayerSpec, r_inv: &Mat, qii: &Mat, lambda: &Mat) -> Mat {
    let a = &player.drift;
    lambda * a + a.transpose() * lambda - lambda * r_inv * lambda + qii * 2.0
}

fn check_psd(m: &Mat, node: usize) -> Result<()> {
    let eig = linalg::SymEig::new(m);
    let floor = -SPD_RELATIVE * eig.max().abs().max(1.0) * 1e3;
    if eig.min() < floor {
        return Err(Error::DefinitenessLost { node, min_eig: eig.min() });
    }
    Ok(())
}

/// `Λ_T` on the grid, integrated backward from `Λ_T(T) = 0` by classical RK4.
pub fn solve_lambda_backward(player: &PlayerSpec, qii: &Mat, grid: &TimeGrid) -> Result<Vec<Mat>> {
    let d = player.dim();
    let r_inv = player.control_cost_inv()?;
    let h = grid.step();
    let k_total = grid.steps;
    let f = |l: &Mat| riccati_rhs(player, &r_inv, qii, l);
    let mut out = vec![Mat::zeros(d, d); k_total + 1];
    let mut lambda = Mat::zeros(d, d);
    for k in (0..k_total).rev() {
        // Backward time s = T − t: dΛ/ds = riccati_rhs(Λ).
        let k1 = f(&lambda);
        let k2 = f(&(&lambda + &k1 * (0.5 * h)));
        let k3 = f(&(&lambda + &k2 * (0.5 * h)));
        let k4 = f(&(&lambda + &k3 * h));
        lambda += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        lambda = linalg::symmetrize(&lambda);
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::DefinitenessLost { node: k, min_eig: f64::NAN });
        }
        check_psd(&lambda, k)?;
        out[k] = lambda.clone();
    }
    Ok(out)
}

/// Covariance `V = Σ_T⁻¹` integrated forward by RK4 from `V(0) = Σ_0⁻¹`.
///
/// The closed-loop drift at half steps uses cubic Hermite interpolation of
/// `Λ_T` with slopes from the Riccati right-hand side, keeping fourth order.
pub fn solve_sigma_forward(player: &PlayerSpec, qii: &Mat, lambda: &[Mat], grid: &TimeGrid) -> Result<Vec<Mat>> {
    let r_inv = player.control_cost_inv()?;
    let h = grid.step();
    if lambda.len() != grid.steps + 1 {
        return Err(Error::Dimension("Λ path length does not match grid".into()));
    }
    let two_diff = player.diffusion() * 2.0;
    let closed = |l: &Mat| &player.drift - &r_inv * l;
    let rhs = |abar: &Mat, v: &Mat| abar * v + v * abar.transpose() + &two_diff;
    let slope = |l: &Mat| -riccati_rhs(player, &r_inv, qii, l);

    let mut v = player.initial_covariance()?;
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(v.clone());
    let mut slope_k = slope(&lambda[0]);
    for k in 0..grid.steps {
        let slope_next = slope(&lambda[k + 1]);
        let mid = (&lambda[k] + &lambda[k + 1]) * 0.5 + (&slope_k - &slope_next) * (h / 8.0);
        let (a0, am, a1) = (closed(&lambda[k]), closed(&mid), closed(&lambda[k + 1]));
        let k1 = rhs(&a0, &v);
        let k2 = rhs(&am, &(&v + &k1 * (0.5 * h)));
        let k3 = rhs(&am, &(&v + &k2 * (0.5 * h)));
        let k4 = rhs(&a1, &(&v + &k3 * h));
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        v = linalg::symmetrize(&v);
        if !linalg::is_spd(&v) {
            let min_eig = linalg::min_eigenvalue(&v);
            return Err(Error::DefinitenessLost { node: k + 1, min_eig });
        }
        out.push(v.clone());
        slope_k = slope_next;
    }
    Ok(out)
}

/// Per-node block-diagonal data of the coupled system.
struct CoupledData {
    n: usize,
    d: usize,
    /// `R⁻¹` stacked block-diagonally.
    inv_control: Mat,
    interaction: Mat,
    target_load: Vector,
    initial_mean: Vector,
    /// Per player, per node closed-loop drift `A − R⁻¹Λ_T`.
    closed: Vec<Vec<Mat>>,
}

impl CoupledData {
    fn new(spec: &GameSpec, lambdas: &[Vec<Mat>]) -> Result<Self> {
        let m = assemble(spec)?;
        let closed = spec
            .players
            .iter()
            .zip(lambdas)
            .map(|(p, path)| {
                let r_inv = p.control_cost_inv()?;
                Ok(path.iter().map(|l| &p.drift - &r_inv * l).collect())
            })
            .collect::<Result<Vec<Vec<Mat>>>>()?;
        let initial_mean =
            Vector::from_vec(spec.players.iter().flat_map(|p| p.initial_mean.iter().copied()).collect());
        Ok(Self {
            n: spec.n_players,
            d: spec.dim,
            inv_control: m.inv_control,
            interaction: m.interaction,
            target_load: m.target_load,
            initial_mean,
            closed,
        })
    }

    fn nd(&self) -> usize {
        self.n * self.d
    }

    fn stacked_closed(&self, k: usize) -> Mat {
        let d = self.d;
        let mut out = Mat::zeros(self.nd(), self.nd());
        for i in 0..self.n {
            out.view_mut((i * d, i * d), (d, d)).copy_from(&self.closed[i][k]);
        }
        out
    }
}

/// Stacked `(μ, ρ)` per node.
type CoupledPaths = (Vec<Vector>, Vec<Vector>);

/// Eliminate the terminal condition through the grid: `ρ_k = P_k μ_k + g_k`,
/// then sweep forward from `μ_0`.
fn coupled_sweep(data: &CoupledData, grid: &TimeGrid) -> Result<CoupledPaths> {
    let nd = data.nd();
    let kk = grid.steps;
    let h = grid.step();
    let a = 0.5 * h;
    let eye = Mat::identity(nd, nd);
    let rb = &data.inv_control;
    let qb = &data.interaction;
    let load = &data.target_load * (2.0 * h);

    let mut p_path = vec![Mat::zeros(nd, nd); kk + 1];
    let mut g_path = vec![Vector::zeros(nd); kk + 1];
    let mut abar_next = data.stacked_closed(kk);
    for k in (0..kk).rev() {
        let abar = data.stacked_closed(k);
        let p_next = &p_path[k + 1];
        let g_next = &g_path[k + 1];
        let g_mat = &eye - &abar_next * a + rb * p_next * a;
        let lu = g_mat.lu();
        let fwd = &eye + &abar * a;
        let y1 = lu.solve(&fwd).ok_or_else(|| Error::Singular(format!("sweep step {k}")))?;
        let y2 = lu.solve(rb).ok_or_else(|| Error::Singular(format!("sweep step {k}")))?;
        let y3 = &y2 * g_next;
        let back_next = &eye + abar_next.transpose() * a;
        let w = &back_next * p_next + qb * (2.0 * a);
        let s = &eye - abar.transpose() * a + &w * &y2 * a;
        let s_lu = s.lu();
        let p = s_lu
            .solve(&(&w * &y1 + qb * (2.0 * a)))
            .ok_or_else(|| Error::Singular(format!("sweep step {k}: discrete system not well posed")))?;
        let g = s_lu
            .solve(&(&back_next * g_next - &w * &y3 * a - &load))
            .ok_or_else(|| Error::Singular(format!("sweep step {k}")))?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!("sweep blow-up at step {k}")));
        }
        p_path[k] = p;
        g_path[k] = g;
        abar_next = abar;
    }

    let mut mu = Vec::with_capacity(kk + 1);
    let mut rho = Vec::with_capacity(kk + 1);
    mu.push(data.initial_mean.clone());
    rho.push(&p_path[0] * &data.initial_mean + &g_path[0]);
    let mut abar = data.stacked_closed(0);
    for k in 0..kk {
        let abar_next = data.stacked_closed(k + 1);
        let g_mat = &eye - &abar_next * a + rb * &p_path[k + 1] * a;
        let rhs = (&eye + &abar * a) * &mu[k] - rb * (&rho[k] + &g_path[k + 1]) * a;
        let next = g_mat
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("forward sweep step {k}")))?;
        rho.push(&p_path[k + 1] * &next + &g_path[k + 1]);
        mu.push(next);
        abar = abar_next;
    }
    Ok((mu, rho))
}

/// Assemble the global trapezoid system over all nodes and solve it with
/// banded LU. Unknown `z_k = (μ_k, ρ_k)` in node order.
fn coupled_banded(data: &CoupledData, grid: &TimeGrid) -> Result<CoupledPaths> {
    let nd = data.nd();
    let m = 2 * nd;
    let kk = grid.steps;
    let h = grid.step();
    let a = 0.5 * h;
    let band = 3 * nd - 1;
    let mut sys = BandedSystem::new(m * (kk + 1), band, band);
    let rb = &data.inv_control;
    let qb = &data.interaction;
    for r in 0..nd {
        sys.add(r, r, 1.0);
        sys.set_rhs(r, data.initial_mean[r]);
    }
    let mut abar = data.stacked_closed(0);
    for k in 0..kk {
        let abar_next = data.stacked_closed(k + 1);
        let row0 = nd + k * m;
        let (mu_k, rho_k, mu_n, rho_n) = (k * m, k * m + nd, (k + 1) * m, (k + 1) * m + nd);
        for r in 0..nd {
            // μ_{k+1} − μ_k − a(Ā_k μ_k − Rρ_k + Ā_{k+1} μ_{k+1} − Rρ_{k+1}) = 0
            let row = row0 + r;
            for c in 0..nd {
                let delta = if r == c { 1.0 } else { 0.0 };
                sys.add(row, mu_n + c, delta - a * abar_next[(r, c)]);
                sys.add(row, mu_k + c, -delta - a * abar[(r, c)]);
                sys.add(row, rho_k + c, a * rb[(r, c)]);
                sys.add(row, rho_n + c, a * rb[(r, c)]);
            }
            // ρ_{k+1} − ρ_k + a(Ā_kᵀρ_k + 2Qμ_k + Ā_{k+1}ᵀρ_{k+1} + 2Qμ_{k+1}) = 2h q
            let row = row0 + nd + r;
            for c in 0..nd {
                let delta = if r == c { 1.0 } else { 0.0 };
                sys.add(row, rho_n + c, delta + a * abar_next[(c, r)]);
                sys.add(row, rho_k + c, -delta + a * abar[(c, r)]);
                sys.add(row, mu_k + c, 2.0 * a * qb[(r, c)]);
                sys.add(row, mu_n + c, 2.0 * a * qb[(r, c)]);
            }
            sys.set_rhs(row, 2.0 * h * data.target_load[r]);
        }
        abar = abar_next;
    }
    for r in 0..nd {
        let row = nd + kk * m + r;
        sys.add(row, kk * m + nd + r, 1.0);
    }
    let z = sys.solve()?;
    let mu = (0..=kk).map(|k| Vector::from_column_slice(&z[k * m..k * m + nd])).collect();
    let rho = (0..=kk).map(|k| Vector::from_column_slice(&z[k * m + nd..(k + 1) * m])).collect();
    Ok((mu, rho))
}

/// Damped fixed point `μ ← (1−ω)μ + ωΨ(μ)`, where `Ψ` solves the backward
/// equation for `ρ` given `μ` and then the forward equation for `μ` given `ρ`,
/// both with the trapezoid rule on the grid.
fn coupled_picard(data: &CoupledData, grid: &TimeGrid) -> Result<CoupledPaths> {
    let nd = data.nd();
    let kk = grid.steps;
    let h = grid.step();
    let a = 0.5 * h;
    let eye = Mat::identity(nd, nd);
    let rb = &data.inv_control;
    let qb = &data.interaction;
    let abars: Vec<Mat> = (0..=kk).map(|k| data.stacked_closed(k)).collect();
    let back_lu: Vec<_> = (0..kk).map(|k| (&eye - abars[k].transpose() * a).lu()).collect();
    let fwd_lu: Vec<_> = (0..kk).map(|k| (&eye - &abars[k + 1] * a).lu()).collect();

    let mut mu = vec![data.initial_mean.clone(); kk + 1];
    let mut rho = vec![Vector::zeros(nd); kk + 1];
    let mut change = f64::INFINITY;
    for _ in 0..PICARD_MAX_ITER {
        rho[kk].fill(0.0);
        for k in (0..kk).rev() {
            let rhs = (&eye + abars[k + 1].transpose() * a) * &rho[k + 1]
                + qb * (&mu[k] + &mu[k + 1]) * (2.0 * a)
                - &data.target_load * (2.0 * h);
            rho[k] = back_lu[k]
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("Picard backward step".into()))?;
        }
        let mut next = Vec::with_capacity(kk + 1);
        next.push(data.initial_mean.clone());
        for k in 0..kk {
            let rhs = (&eye + &abars[k] * a) * &next[k] - rb * (&rho[k] + &rho[k + 1]) * a;
            next.push(
                fwd_lu[k]
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("Picard forward step".into()))?,
            );
        }
        change = 0.0;
        for (old, new) in mu.iter_mut().zip(&next) {
            let updated = &*old * (1.0 - PICARD_DAMPING) + new * PICARD_DAMPING;
            change = (&updated - &*old).amax().max(change);
            *old = updated;
        }
        if !change.is_finite() {
            break;
        }
        if change < PICARD_TOL {
            // Final backward pass so ρ matches the converged μ.
            rho[kk].fill(0.0);
            for k in (0..kk).rev() {
                let rhs = (&eye + abars[k + 1].transpose() * a) * &rho[k + 1]
                    + qb * (&mu[k] + &mu[k + 1]) * (2.0 * a)
                    - &data.target_load * (2.0 * h);
                rho[k] = back_lu[k]
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("Picard backward step".into()))?;
            }
            return Ok((mu, rho));
        }
    }
    Err(Error::NoConvergence {
        iterations: PICARD_MAX_ITER,
        last_change: change,
    })
}

/// Solve the coupled forward-backward system for all players' means and
/// linear value coefficients; returns per-player paths.
pub fn solve_mu_rho_fbtp(
    spec: &GameSpec,
    lambdas: &[Vec<Mat>],
    grid: &TimeGrid,
    method: CoupledSolver,
) -> Result<(Vec<Vec<Vector>>, Vec<Vec<Vector>>)> {
    let data = CoupledData::new(spec, lambdas)?;
    let (mu, rho) = match method {
        CoupledSolver::Sweep => coupled_sweep(&data, grid)?,
        CoupledSolver::Banded => coupled_banded(&data, grid)?,
        CoupledSolver::Picard => coupled_picard(&data, grid)?,
    };
    let d = spec.dim;
    let split = |paths: &[Vector]| -> Vec<Vec<Vector>> {
        (0..spec.n_players)
            .map(|i| paths.iter().map(|z| z.rows(i * d, d).into_owned()).collect())
            .collect()
    };
    Ok((split(&mu), split(&rho)))
}

/// `κ_T(t_k) = ∫_{t_k}^T [tr(ςΛ) − ½ρᵀR⁻¹ρ + F₀] ds` by the trapezoid rule.
pub fn compute_kappa(
    spec: &GameSpec,
    i: usize,
    paths: &[FinitePlayerPath],
    grid: &TimeGrid,
    mode: F0Mode,
    cost: &AveragedCost,
) -> Result<Vec<f64>> {
    let p = &spec.players[i];
    let r_inv = p.control_cost_inv()?;
    let d = spec.dim;
    let own = &paths[i];
    let mut stacked = Vector::zeros(spec.n_players * d);
    let mut integrand = Vec::with_capacity(grid.steps + 1);
    let mut covs = Vec::with_capacity(spec.n_players);
    for k in 0..=grid.steps {
        covs.clear();
        for (j, path) in paths.iter().enumerate() {
            stacked.rows_mut(j * d, d).copy_from(&path.mean[k]);
            covs.push(path.covariance[k].clone());
        }
        let rho = &own.rho[k];
        let value = (p.diffusion() * &own.lambda[k]).trace() - 0.5 * rho.dot(&(&r_inv * rho))
            + cost.f0(i, &stacked, &covs, mode);
        integrand.push(value);
    }
    let h = grid.step();
    let mut kappa = vec![0.0; grid.steps + 1];
    for k in (0..grid.steps).rev() {
        kappa[k] = kappa[k + 1] + 0.5 * h * (integrand[k] + integrand[k + 1]);
    }
    Ok(kappa)
}

pub fn solve_finite_system(spec: &GameSpec, grid: &TimeGrid) -> Result<FiniteRiccatiSolution> {
    solve_finite_system_with(spec, grid, FiniteOptions::default())
}

pub fn solve_finite_system_with(
    spec: &GameSpec,
    grid: &TimeGrid,
    options: FiniteOptions,
) -> Result<FiniteRiccatiSolution> {
    let lambda_cov = spec
        .players
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let qii = spec.q(i, i, i);
            let lambda = solve_lambda_backward(p, qii, grid)?;
            let cov = solve_sigma_forward(p, qii, &lambda, grid)?;
            Ok((lambda, cov))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lambdas, covs): (Vec<_>, Vec<_>) = lambda_cov.into_iter().unzip();
    let (means, rhos) = solve_mu_rho_fbtp(spec, &lambdas, grid, options.coupled)?;
    let mut players: Vec<FinitePlayerPath> = lambdas
        .into_iter()
        .zip(covs)
        .zip(means.into_iter().zip(rhos))
        .map(|((lambda, covariance), (mean, rho))| FinitePlayerPath {
            lambda,
            covariance,
            mean,
            rho,
            kappa: Vec::new(),
        })
        .collect();
    let cost = AveragedCost::new(spec);
    let kappas = (0..spec.n_players)
        .into_par_iter()
        .map(|i| compute_kappa(spec, i, &players, grid, options.f0_mode, &cost))
        .collect::<Result<Vec<_>>>()?;
    for (p, kappa) in players.iter_mut().zip(kappas) {
        p.kappa = kappa;
    }
    Ok(FiniteRiccatiSolution {
        grid: *grid,
        players,
        f0_mode: options.f0_mode,
    })
}

fn lerp_mat(a: &Mat, b: &Mat, w: f64) -> Mat {
    a * (1.0 - w) + b * w
}

fn lerp_vec(a: &Vector, b: &Vector, w: f64) -> Vector {
    a * (1.0 - w) + b * w
}

impl FiniteRiccatiSolution {
    /// `(Λ_T(t), ρ_T(t), κ_T(t))` by linear interpolation.
    pub fn coefficients(&self, i: usize, t: f64) -> Result<(Mat, Vector, f64)> {
        let (k, w) = self.grid.locate(t)?;
        let p = &self.players[i];
        Ok((
            lerp_mat(&p.lambda[k], &p.lambda[k + 1], w),
            lerp_vec(&p.rho[k], &p.rho[k + 1], w),
            p.kappa[k] * (1.0 - w) + p.kappa[k + 1] * w,
        ))
    }

    /// Mean and covariance of player `i`'s state at `t`.
    pub fn moments(&self, i: usize, t: f64) -> Result<(Vector, Mat)> {
        let (k, w) = self.grid.locate(t)?;
        let p = &self.players[i];
        Ok((
            lerp_vec(&p.mean[k], &p.mean[k + 1], w),
            lerp_mat(&p.covariance[k], &p.covariance[k + 1], w),
        ))
    }

    pub fn stacked_mean(&self, k: usize) -> Vector {
        Vector::from_vec(self.players.iter().flat_map(|p| p.mean[k].iter().copied()).collect())
    }

    pub fn stacked_rho(&self, k: usize) -> Vector {
        Vector::from_vec(self.players.iter().flat_map(|p| p.rho[k].iter().copied()).collect())
    }

    /// CSV with one row per node: `t`, then per player the row-major
    /// entries of `Λ`, the covariance, `μ`, `ρ`, and `κ`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let d = self.players.first().map_or(0, |p| p.mean[0].len());
        let mut header = vec!["t".to_string()];
        for i in 0..self.players.len() {
            for r in 0..d {
                for c in 0..d {
                    header.push(format!("Lambda_{i}_{r}{c}"));
                }
            }
            for r in 0..d {
                for c in 0..d {
                    header.push(format!("cov_{i}_{r}{c}"));
                }
            }
            header.extend((0..d).map(|r| format!("mu_{i}_{r}")));
            header.extend((0..d).map(|r| format!("rho_{i}_{r}")));
            header.push(format!("kappa_{i}"));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..=self.grid.steps {
            let mut row = vec![format!("{:.17e}", self.grid.node(k))];
            for p in &self.players {
                for m in [&p.lambda[k], &p.covariance[k]] {
                    for r in 0..d {
                        for c in 0..d {
                            row.push(format!("{:.17e}", m[(r, c)]));
                        }
                    }
                }
                row.extend(p.mean[k].iter().map(|v| format!("{v:.17e}")));
                row.extend(p.rho[k].iter().map(|v| format!("{v:.17e}")));
                row.push(format!("{:.17e}", p.kappa[k]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Grid metadata and boundary values.
    pub fn manifest(&self) -> serde_json::Value {
        use crate::game::mat_to_rows;
        let last = self.grid.steps;
        let players: Vec<_> = self
            .players
            .iter()
            .map(|p| {
                serde_json::json!({
                    "Lambda_0": mat_to_rows(&p.lambda[0]),
                    "Lambda_T": mat_to_rows(&p.lambda[last]),
                    "covariance_0": mat_to_rows(&p.covariance[0]),
                    "covariance_T": mat_to_rows(&p.covariance[last]),
                    "mu_0": p.mean[0].as_slice(),
                    "mu_T": p.mean[last].as_slice(),
                    "rho_0": p.rho[0].as_slice(),
                    "rho_T": p.rho[last].as_slice(),
                    "kappa_0": p.kappa[0],
                    "kappa_T": p.kappa[last],
                })
            })
            .collect();
        serde_json::json!({
            "T": self.grid.horizon,
            "K": self.grid.steps,
            "h": self.grid.step(),
            "interpolation": "linear",
            "f0_mode": self.f0_mode,
            "players": players,
        })
    }
}

/// `v(t, x) = ½xᵀΛ_T(t)x + ρ_T(t)ᵀx + κ_T(t)`.
pub fn evaluate_value(sol: &FiniteRiccatiSolution, i: usize, t: f64, x: &Vector) -> Result<f64> {
    let (lambda, rho, kappa) = sol.coefficients(i, t)?;
    Ok(0.5 * x.dot(&(&lambda * x)) + rho.dot(x) + kappa)
}

/// `α(t, x) = R⁻¹(Λ_T(t)x + ρ_T(t))`.
pub fn evaluate_feedback(
    sol: &FiniteRiccatiSolution,
    spec: &GameSpec,
    i: usize,
    t: f64,
    x: &Vector,
) -> Result<Vector> {
    let (lambda, rho, _) = sol.coefficients(i, t)?;
    Ok(spec.players[i].control_cost_inv()? * (lambda * x + rho))
}

fn node_derivative<T>(values: &[T], k: usize, h: f64) -> T
where
    T: Clone + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let last = values.len() - 1;
    if k == 0 {
        (values[0].clone() * -3.0 + values[1].clone() * 4.0 - values[2].clone()) * (1.0 / (2.0 * h))
    } else if k == last {
        (values[last].clone() * 3.0 - values[last - 1].clone() * 4.0 + values[last - 2].clone())
            * (1.0 / (2.0 * h))
    } else {
        (values[k + 1].clone() - values[k - 1].clone()) * (1.0 / (2.0 * h))
    }
}

/// Residual of the HJB equation for player `i` at the grid node nearest to
/// `t`: `∂ₜv + tr(ςD²v) + H(x, ∇v) + f^i(x; m^{-i}_T(t))`.
///
/// Time derivatives use central differences of the stored paths, and
/// second-order one-sided differences at the two end nodes.
pub fn hjb_residual(sol: &FiniteRiccatiSolution, spec: &GameSpec, i: usize, t: f64, x: &Vector) -> Result<f64> {
    let k = sol.grid.nearest(t)?;
    let h = sol.grid.step();
    let p = &spec.players[i];
    let path = &sol.players[i];
    let r_inv = p.control_cost_inv()?;

    let d_lambda = node_derivative(&path.lambda, k, h);
    let d_rho = node_derivative(&path.rho, k, h);
    let d_kappa = node_derivative(&path.kappa, k, h);
    let lambda = &path.lambda[k];
    let rho = &path.rho[k];

    let dt_v = 0.5 * x.dot(&(&d_lambda * x)) + d_rho.dot(x) + d_kappa;
    let trace = (p.diffusion() * lambda).trace();
    let grad = lambda * x + rho;
    let hamiltonian = grad.dot(&(&p.drift * x)) - 0.5 * grad.dot(&(&r_inv * &grad));

    let means: Vec<Vector> = sol.players.iter().map(|q| q.mean[k].clone()).collect();
    let covs: Vec<Mat> = sol.players.iter().map(|q| q.covariance[k].clone()).collect();
    let f1 = eval_f1(spec, i, &means);
    let f0 = eval_f0(spec, i, &means, &covs, sol.f0_mode)?;
    let running = x.dot(&(spec.q(i, i, i) * x)) + 2.0 * f1.dot(x) + f0;
    Ok(dt_v + trace + hamiltonian + running)
}
