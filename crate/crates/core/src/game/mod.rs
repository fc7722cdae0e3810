//! Game data model: players, interaction costs, assembled block matrices and
//! the constant/linear coefficients of the averaged running cost.

mod assumptions;
mod fixtures;

pub use assumptions::{
    check_assumptions, lambda_bracket_holds, measure_envelope_constants, AssumptionRecord,
    AssumptionReport, CheckStatus, EnvelopeConstants,
};
pub use fixtures::{build_example, fix_a, ExampleKind, ExampleParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::tolerances::SYMMETRY_RELATIVE;

/// Dynamics, control cost and initial law of one player.
///
/// `diffusion` caches `½ σ σᵀ` and is kept in sync by the constructor and
/// [`PlayerSpec::set_noise`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerSpec {
    /// Drift matrix `A` (per unit time).
    pub drift: Mat,
    noise: Mat,
    diffusion: Mat,
    /// Control cost weight `R` (SPD).
    pub control_cost: Mat,
    pub initial_mean: Vector,
    /// Initial precision; the initial covariance is its inverse.
    pub initial_precision: Mat,
}

impl PlayerSpec {
    pub fn new(
        drift: Mat,
        noise: Mat,
        control_cost: Mat,
        initial_mean: Vector,
        initial_precision: Mat,
    ) -> Self {
        let diffusion = &noise * noise.transpose() * 0.5;
        Self {
            drift,
            noise,
            diffusion,
            control_cost,
            initial_mean,
            initial_precision,
        }
    }

    /// Noise loading `σ`.
    pub fn noise(&self) -> &Mat {
        &self.noise
    }

    /// `ς = ½ σ σᵀ`.
    pub fn diffusion(&self) -> &Mat {
        &self.diffusion
    }

    pub fn set_noise(&mut self, noise: Mat) {
        self.diffusion = &noise * noise.transpose() * 0.5;
        self.noise = noise;
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn control_cost_inv(&self) -> Result<Mat> {
        linalg::spd_inverse(&self.control_cost)
    }

    pub fn initial_covariance(&self) -> Result<Mat> {
        linalg::spd_inverse(&self.initial_precision)
    }
}

/// Quadratic interaction costs. `blocks[i][j][k]` is the `d×d` block
/// `Q^i_{jk}` of player `i`'s `Nd×Nd` weight; `targets[i][j]` is player
/// `i`'s reference position for player `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub blocks: Vec<Vec<Vec<Mat>>>,
    pub targets: Vec<Vec<Vector>>,
}

impl CostSpec {
    /// Player `i`'s full `Nd × Nd` weight matrix.
    pub fn full_weight(&self, i: usize) -> Mat {
        let n = self.blocks.len();
        let d = self.blocks[i][0][0].nrows();
        let mut out = Mat::zeros(n * d, n * d);
        for j in 0..n {
            for k in 0..n {
                out.view_mut((j * d, k * d), (d, d)).copy_from(&self.blocks[i][j][k]);
            }
        }
        out
    }

    /// Player `i`'s stacked reference vector in `R^{Nd}`.
    pub fn stacked_target(&self, i: usize) -> Vector {
        let parts: Vec<f64> = self.targets[i].iter().flat_map(|v| v.iter().copied()).collect();
        Vector::from_vec(parts)
    }
}

/// Full data of one `N`-player game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGameSpec", into = "RawGameSpec")]
pub struct GameSpec {
    pub n_players: usize,
    pub dim: usize,
    pub players: Vec<PlayerSpec>,
    pub cost: CostSpec,
}

impl GameSpec {
    #[inline]
    pub fn q(&self, i: usize, j: usize, k: usize) -> &Mat {
        &self.cost.blocks[i][j][k]
    }

    #[inline]
    pub fn target(&self, i: usize, j: usize) -> &Vector {
        &self.cost.targets[i][j]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Running cost `F^i(x)` for the stacked state `x ∈ R^{Nd}`.
    pub fn state_cost(&self, i: usize, states: &[Vector]) -> f64 {
        let mut total = 0.0;
        for j in 0..self.n_players {
            let dj = &states[j] - self.target(i, j);
            for k in 0..self.n_players {
                let dk = &states[k] - self.target(i, k);
                total += dj.dot(&(self.q(i, j, k) * dk));
            }
        }
        total
    }
}

// ---------------------------------------------------------------------------
// JSON mirror: matrices as row-major nested arrays.

#[derive(Serialize, Deserialize)]
struct RawPlayer {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    mu0: Vec<f64>,
    #[serde(rename = "Sigma0")]
    sigma0: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawCost {
    #[serde(rename = "Qblocks")]
    q_blocks: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    xbar: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct RawGameSpec {
    #[serde(rename = "N")]
    n: usize,
    d: usize,
    players: Vec<RawPlayer>,
    cost: RawCost,
}

pub(crate) fn mat_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Mat> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension(format!("{what}: expected {d}x{d} matrix")));
    }
    Ok(Mat::from_fn(d, d, |r, c| rows[r][c]))
}

pub(crate) fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_from(v: &[f64], d: usize, what: &str) -> Result<Vector> {
    if v.len() != d {
        return Err(Error::Dimension(format!("{what}: expected length {d}, got {}", v.len())));
    }
    Ok(Vector::from_column_slice(v))
}

impl TryFrom<RawGameSpec> for GameSpec {
    type Error = Error;

    fn try_from(raw: RawGameSpec) -> Result<Self> {
        let (n, d) = (raw.n, raw.d);
        if raw.players.len() != n {
            return Err(Error::Dimension(format!(
                "N = {n} but {} players given",
                raw.players.len()
            )));
        }
        let players = raw
            .players
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(PlayerSpec::new(
                    mat_from_rows(&p.a, d, &format!("players[{i}].A"))?,
                    mat_from_rows(&p.sigma, d, &format!("players[{i}].sigma"))?,
                    mat_from_rows(&p.r, d, &format!("players[{i}].R"))?,
                    vec_from(&p.mu0, d, &format!("players[{i}].mu0"))?,
                    mat_from_rows(&p.sigma0, d, &format!("players[{i}].Sigma0"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        if raw.cost.q_blocks.len() != n || raw.cost.xbar.len() != n {
            return Err(Error::Dimension("cost arrays must have N entries".into()));
        }
        let mut blocks = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let qi = &raw.cost.q_blocks[i];
            let xi = &raw.cost.xbar[i];
            if qi.len() != n || qi.iter().any(|row| row.len() != n) || xi.len() != n {
                return Err(Error::Dimension(format!("cost of player {i} must be N x N")));
            }
            let mut rows = Vec::with_capacity(n);
            for (j, row) in qi.iter().enumerate() {
                rows.push(
                    row.iter()
                        .enumerate()
                        .map(|(k, m)| mat_from_rows(m, d, &format!("Qblocks[{i}][{j}][{k}]")))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            blocks.push(rows);
            targets.push(
                xi.iter()
                    .enumerate()
                    .map(|(j, v)| vec_from(v, d, &format!("xbar[{i}][{j}]")))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(GameSpec {
            n_players: n,
            dim: d,
            players,
            cost: CostSpec { blocks, targets },
        })
    }
}

impl From<GameSpec> for RawGameSpec {
    fn from(spec: GameSpec) -> Self {
        RawGameSpec {
            n: spec.n_players,
            d: spec.dim,
            players: spec
                .players
                .iter()
                .map(|p| RawPlayer {
                    a: mat_to_rows(&p.drift),
                    sigma: mat_to_rows(p.noise()),
                    r: mat_to_rows(&p.control_cost),
                    mu0: p.initial_mean.iter().copied().collect(),
                    sigma0: mat_to_rows(&p.initial_precision),
                })
                .collect(),
            cost: RawCost {
                q_blocks: spec
                    .cost
                    .blocks
                    .iter()
                    .map(|qi| {
                        qi.iter()
                            .map(|row| row.iter().map(mat_to_rows).collect())
                            .collect()
                    })
                    .collect(),
                xbar: spec
                    .cost
                    .targets
                    .iter()
                    .map(|xi| xi.iter().map(|v| v.iter().copied().collect()).collect())
                    .collect(),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Validation

/// Structural invariant violations; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationResult {
    pub violations: Vec<String>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Condition-number bounded invertibility test for the noise loading.
fn noise_invertible(sigma: &Mat) -> bool {
    let sv = sigma.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > 1e-12 * max
}

/// Check every structural invariant of a spec. Violations are returned as
/// data, one message per problem.
pub fn validate_spec(spec: &GameSpec) -> ValidationResult {
    let mut v = Vec::new();
    let (n, d) = (spec.n_players, spec.dim);
    if n < 2 {
        v.push(format!("N = {n}: at least two players required"));
    }
    if d < 1 {
        v.push("d must be at least 1".to_string());
    }
    if spec.players.len() != n {
        v.push(format!("{} player entries for N = {n}", spec.players.len()));
    }
    if !v.is_empty() {
        return ValidationResult { violations: v };
    }
    for (i, p) in spec.players.iter().enumerate() {
        let sq = |m: &Mat| m.shape() == (d, d);
        if !(sq(&p.drift) && sq(p.noise()) && sq(&p.control_cost) && sq(&p.initial_precision))
            || p.initial_mean.len() != d
        {
            v.push(format!("player {i}: dimension mismatch"));
            continue;
        }
        if !noise_invertible(p.noise()) {
            v.push(format!("player {i}: sigma not invertible"));
        }
        if !linalg::is_spd(&p.control_cost) {
            v.push(format!("player {i}: R not SPD"));
        }
        if !linalg::is_spd(&p.initial_precision) {
            v.push(format!("player {i}: Sigma0 not SPD"));
        }
    }
    let c = &spec.cost;
    if c.blocks.len() != n || c.targets.len() != n {
        v.push("cost: expected N entries".to_string());
        return ValidationResult { violations: v };
    }
    for i in 0..n {
        let ok_shape = c.blocks[i].len() == n
            && c.blocks[i]
                .iter()
                .all(|row| row.len() == n && row.iter().all(|m| m.shape() == (d, d)))
            && c.targets[i].len() == n
            && c.targets[i].iter().all(|x| x.len() == d);
        if !ok_shape {
            v.push(format!("cost of player {i}: dimension mismatch"));
            continue;
        }
        let full = c.full_weight(i);
        let scale = full.norm().max(1e-300);
        if (&full - full.transpose()).norm() > SYMMETRY_RELATIVE * scale {
            v.push(format!("Q^{i} not symmetric"));
        }
        if !linalg::is_spd(&c.blocks[i][i][i]) {
            v.push(format!("player {i}: Q_ii not SPD"));
        }
    }
    ValidationResult { violations: v }
}

// ---------------------------------------------------------------------------
// Assembled block matrices

/// Stacked matrices coupling all players.
#[derive(Debug, Clone)]
pub struct AssembledMatrices {
    /// Block-diagonal of `(R^i)^{-1}`.
    pub inv_control: Mat,
    /// Off-diagonal interaction blocks `Q^i_{ij}`, zero diagonal blocks.
    pub interaction: Mat,
    /// `M_ij = Q^i_{ij} + ½ δ_ij (A^i)ᵀ R^i A^i`.
    pub mean_operator: Mat,
    /// `i`-th block `Σ_j Q^i_{ij} x̄_i^j`.
    pub target_load: Vector,
}

pub fn assemble(spec: &GameSpec) -> Result<AssembledMatrices> {
    let (n, d) = (spec.n_players, spec.dim);
    if spec.players.len() != n || spec.cost.blocks.len() != n {
        return Err(Error::Dimension("assemble: player count".into()));
    }
    let nd = n * d;
    let mut inv_control = Mat::zeros(nd, nd);
    let mut interaction = Mat::zeros(nd, nd);
    let mut mean_operator = Mat::zeros(nd, nd);
    let mut target_load = Vector::zeros(nd);
    for i in 0..n {
        let p = &spec.players[i];
        if p.dim() != d {
            return Err(Error::Dimension(format!("player {i} has dimension {}", p.dim())));
        }
        inv_control
            .view_mut((i * d, i * d), (d, d))
            .copy_from(&p.control_cost_inv()?);
        let mut load = Vector::zeros(d);
        for j in 0..n {
            let q = spec.q(i, i, j);
            if q.shape() != (d, d) {
                return Err(Error::Dimension(format!("Q^{i}_{{{i}{j}}} shape")));
            }
            load += q * spec.target(i, j);
            let mut m = q.clone();
            if i == j {
                m += p.drift.transpose() * &p.control_cost * &p.drift * 0.5;
            } else {
                interaction.view_mut((i * d, j * d), (d, d)).copy_from(q);
            }
            mean_operator.view_mut((i * d, j * d), (d, d)).copy_from(&m);
        }
        target_load.rows_mut(i * d, d).copy_from(&load);
    }
    Ok(AssembledMatrices {
        inv_control,
        interaction,
        mean_operator,
        target_load,
    })
}

// ---------------------------------------------------------------------------
// Averaged running-cost coefficients

/// Which covariance enters the trace term of the constant coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum F0Mode {
    /// `tr(Q^i_{jj} cov_j)` with each player's own covariance.
    #[default]
    PerPlayer,
    /// Uses player `i`'s covariance for every `j`.
    OwnCovariance,
}

/// Linear coefficient: `−Q^i_{ii} x̄_i^i + Σ_{j≠i} Q^i_{ij}(y^j − x̄_i^j)`.
///
/// `means` holds one entry per player; entry `i` is ignored.
pub fn eval_f1(spec: &GameSpec, i: usize, means: &[Vector]) -> Vector {
    let mut out = -(spec.q(i, i, i) * spec.target(i, i));
    for j in 0..spec.n_players {
        if j != i {
            out += spec.q(i, i, j) * (&means[j] - spec.target(i, j));
        }
    }
    out
}

/// Constant coefficient of `f^i(x; m^{-i})` for Gaussian opponents with the
/// given means and covariances (one entry per player; entry `i` is used only
/// in [`F0Mode::OwnCovariance`]).
pub fn eval_f0(spec: &GameSpec, i: usize, means: &[Vector], covs: &[Mat], mode: F0Mode) -> Result<f64> {
    let n = spec.n_players;
    let own = spec.target(i, i);
    let qii = spec.q(i, i, i);
    let dev: Vec<Vector> = (0..n).map(|j| &means[j] - spec.target(i, j)).collect();
    let mut total = own.dot(&(qii * own));
    for j in (0..n).filter(|&j| j != i) {
        total -= own.dot(&(spec.q(i, i, j) * &dev[j]));
        total -= dev[j].dot(&(spec.q(i, j, i) * own));
        let cov = match mode {
            F0Mode::PerPlayer => &covs[j],
            F0Mode::OwnCovariance => &covs[i],
        };
        if !linalg::is_spd(cov) {
            return Err(Error::NotSpd(format!("covariance passed for player {j}")));
        }
        let qjj = spec.q(i, j, j);
        total += (qjj * cov).trace() + dev[j].dot(&(qjj * &dev[j]));
        for k in (0..n).filter(|&k| k != i && k != j) {
            total += dev[j].dot(&(spec.q(i, j, k) * &dev[k]));
        }
    }
    Ok(total)
}

/// Precomputed full weights for evaluating the constant coefficient along
/// solution paths, where [`eval_f0`] would redo block bookkeeping per call.
///
/// Uses the Gaussian-expectation form `δᵀ 𝐐^i δ + Σ_{j≠i} tr(Q^i_{jj} cov_j)`
/// with `δ_j = y^j − x̄_i^j` for `j ≠ i` and `δ_i = −x̄_i^i`.
#[derive(Debug, Clone)]
pub struct AveragedCost {
    n: usize,
    d: usize,
    weights: Vec<Mat>,
    targets: Vec<Vector>,
    diagonal_blocks: Vec<Vec<Mat>>,
}

impl AveragedCost {
    pub fn new(spec: &GameSpec) -> Self {
        let n = spec.n_players;
        Self {
            n,
            d: spec.dim,
            weights: (0..n).map(|i| spec.cost.full_weight(i)).collect(),
            targets: (0..n).map(|i| spec.cost.stacked_target(i)).collect(),
            diagonal_blocks: (0..n)
                .map(|i| (0..n).map(|j| spec.q(i, j, j).clone()).collect())
                .collect(),
        }
    }

    /// `stacked_means` has length `Nd`; block `i` is ignored.
    pub fn f0(&self, i: usize, stacked_means: &Vector, covs: &[Mat], mode: F0Mode) -> f64 {
        let d = self.d;
        let mut delta = stacked_means - &self.targets[i];
        for r in 0..d {
            delta[i * d + r] = -self.targets[i][i * d + r];
        }
        let w = &self.weights[i];
        let mut total = delta.dot(&(w * &delta));
        for j in (0..self.n).filter(|&j| j != i) {
            let cov = match mode {
                F0Mode::PerPlayer => &covs[j],
                F0Mode::OwnCovariance => &covs[i],
            };
            // tr(Q C) = Σ Q_rc C_cr, C symmetric.
            total += self.diagonal_blocks[i][j].dot(cov);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn averaged_cost_matches_explicit_formula() {
        let params = ExampleParams {
            secondary: 0.2,
            others: 0.15,
            cross: 0.07,
            spread: 0.5,
            target: 0.8,
            ..ExampleParams::default()
        };
        let mut spec = build_example(ExampleKind::Symmetric, 4, 2, &params).unwrap();
        spec.cost.targets[2][1] = Vector::from_vec(vec![-0.3, 0.9]);
        let fast = AveragedCost::new(&spec);
        let means: Vec<Vector> = (0..4)
            .map(|j| Vector::from_vec(vec![0.1 * j as f64, 1.0 - 0.4 * j as f64]))
            .collect();
        let stacked = Vector::from_vec(means.iter().flat_map(|m| m.iter().copied()).collect());
        let covs: Vec<Mat> = (0..4)
            .map(|j| Mat::from_row_slice(2, 2, &[0.5 + 0.1 * j as f64, 0.1, 0.1, 0.3]))
            .collect();
        for mode in [F0Mode::PerPlayer, F0Mode::OwnCovariance] {
            for i in 0..4 {
                let a = eval_f0(&spec, i, &means, &covs, mode).unwrap();
                let b = fast.f0(i, &stacked, &covs, mode);
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    fn scalar(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn fix_a_validates() {
        assert!(validate_spec(&fix_a()).is_ok());
    }

    #[test]
    fn negative_control_cost_flagged() {
        let mut spec = fix_a();
        spec.players[0].control_cost = scalar(-1.0);
        let v = validate_spec(&spec);
        assert!(v.violations.iter().any(|m| m.contains("R not SPD")), "{v:?}");
    }

    #[test]
    fn asymmetric_cost_flagged() {
        let mut spec = fix_a();
        spec.cost.blocks[0][0][1] = scalar(-0.3);
        let v = validate_spec(&spec);
        assert!(v.violations.iter().any(|m| m.contains("Q^0 not symmetric")), "{v:?}");
    }

    #[test]
    fn singular_noise_and_single_player_flagged() {
        let mut spec = fix_a();
        spec.players[1].set_noise(scalar(0.0));
        assert!(validate_spec(&spec)
            .violations
            .iter()
            .any(|m| m.contains("sigma not invertible")));

        let mut one = fix_a();
        one.n_players = 1;
        one.players.truncate(1);
        assert!(!validate_spec(&one).is_ok());
    }

    #[test]
    fn assemble_fix_a() {
        let m = assemble(&fix_a()).unwrap();
        assert_eq!(m.inv_control, Mat::identity(2, 2));
        assert_eq!(m.mean_operator, Mat::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]));
        assert_eq!(m.target_load, Vector::zeros(2));
        assert_eq!(m.interaction, Mat::from_row_slice(2, 2, &[0.0, -0.5, -0.5, 0.0]));
    }

    #[test]
    fn f1_examples() {
        let spec = fix_a();
        let zero = vec![Vector::zeros(1), Vector::zeros(1)];
        assert_eq!(eval_f1(&spec, 0, &zero)[0], 0.0);

        let mut shifted = fix_a();
        shifted.cost.targets[0][0] = Vector::from_element(1, 1.0);
        assert_relative_eq!(eval_f1(&shifted, 0, &zero)[0], -0.5);

        let y = vec![Vector::zeros(1), Vector::from_element(1, 2.0)];
        assert_relative_eq!(eval_f1(&spec, 0, &y)[0], -1.0);
    }

    #[test]
    fn f0_examples() {
        let spec = fix_a();
        let covs = vec![scalar(0.5), scalar(0.5)];
        let zero = vec![Vector::zeros(1), Vector::zeros(1)];
        assert_relative_eq!(eval_f0(&spec, 0, &zero, &covs, F0Mode::PerPlayer).unwrap(), 0.25);
        let y = vec![Vector::zeros(1), Vector::from_element(1, 1.0)];
        assert_relative_eq!(eval_f0(&spec, 0, &y, &covs, F0Mode::PerPlayer).unwrap(), 0.75);

        let bad = vec![scalar(0.5), scalar(-1.0)];
        assert!(eval_f0(&spec, 0, &zero, &bad, F0Mode::PerPlayer).is_err());
    }

    #[test]
    fn f0_vanishing_covariance_limit() {
        let spec = build_example(
            ExampleKind::Symmetric,
            3,
            2,
            &ExampleParams {
                coupling: 0.2,
                secondary: 0.1,
                cross: 0.05,
                target: 1.5,
                ..ExampleParams::default()
            },
        )
        .unwrap();
        let i = 1;
        let means: Vec<Vector> = (0..3).map(|j| spec.target(i, j).clone()).collect();
        let covs: Vec<Mat> = (0..3).map(|_| Mat::identity(2, 2) * 1e-9).collect();
        let got = eval_f0(&spec, i, &means, &covs, F0Mode::PerPlayer).unwrap();
        let own = spec.target(i, i);
        let expect = own.dot(&(spec.q(i, i, i) * own));
        assert!((got - expect).abs() < 1e-7);
    }

    #[test]
    fn f0_modes_agree_on_exchangeable_players() {
        let spec = fix_a();
        let covs = vec![scalar(0.3), scalar(0.3)];
        let y = vec![Vector::zeros(1), Vector::from_element(1, 0.7)];
        let a = eval_f0(&spec, 0, &y, &covs, F0Mode::PerPlayer).unwrap();
        let b = eval_f0(&spec, 0, &y, &covs, F0Mode::OwnCovariance).unwrap();
        assert_eq!(a, b);
    }

    /// Gauss–Hermite (probabilists') nodes/weights, 10 points.
    fn gauss_hermite() -> Vec<(f64, f64)> {
        // Nodes of He_10 via Golub–Welsch on the Jacobi matrix.
        let n = 10;
        let mut j = Mat::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            j[(k, k - 1)] = b;
            j[(k - 1, k)] = b;
        }
        let eig = j.symmetric_eigen();
        (0..n)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect()
    }

    /// Integrate F^i over the opponent's Gaussian law by quadrature and
    /// recover the constant / linear coefficients from the x-polynomial.
    #[test]
    fn f0_f1_match_quadrature_oracle() {
        let mut spec = fix_a();
        spec.cost.targets[0][0] = Vector::from_element(1, 0.4);
        spec.cost.targets[0][1] = Vector::from_element(1, -0.8);
        spec.cost.blocks[0][0][0] = scalar(0.9);
        spec.cost.blocks[0][1][1] = scalar(0.35);
        let (mean, var) = (1.3, 0.27_f64);
        let gh = gauss_hermite();
        let f = |x: f64| -> f64 {
            gh.iter()
                .map(|&(z, w)| {
                    let xi = mean + var.sqrt() * z;
                    let states = [Vector::from_element(1, x), Vector::from_element(1, xi)];
                    w * spec.state_cost(0, &states)
                })
                .sum()
        };
        let (f0_q, fp, fm) = (f(0.0), f(1.0), f(-1.0));
        let lin_q = (fp - fm) / 4.0; // f = a x² + 2 F1 x + F0
        let means = vec![Vector::zeros(1), Vector::from_element(1, mean)];
        let covs = vec![scalar(1.0), scalar(var)];
        let f0 = eval_f0(&spec, 0, &means, &covs, F0Mode::PerPlayer).unwrap();
        let f1 = eval_f1(&spec, 0, &means)[0];
        assert!(((f0 - f0_q) / f0_q).abs() < 1e-4, "{f0} vs {f0_q}");
        assert!(((f1 - lin_q) / lin_q).abs() < 1e-4, "{f1} vs {lin_q}");
    }

    #[test]
    fn json_roundtrip_and_malformed() {
        let spec = fix_a();
        let text = spec.to_json().unwrap();
        assert!(text.contains("\"Qblocks\"") && text.contains("\"Sigma0\""));
        let back = GameSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        assert!(GameSpec::from_json("{\"N\": 2").is_err());
        let wrong = text.replacen("\"d\": 1", "\"d\": 2", 1);
        assert!(matches!(GameSpec::from_json(&wrong), Err(Error::Json(_))));
    }
}
