//! Ergodic (long-run average) equilibrium: algebraic Riccati equations,
//! stationary precisions, stationary means and the ergodic values.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{assemble, eval_f0, eval_f1, AssembledMatrices, F0Mode, GameSpec, PlayerSpec};
use crate::linalg::{self, Mat, Vector};
use crate::tolerances::{M_SIGMA_MIN_TOL, RESIDUAL_LOOSE, RESIDUAL_TIGHT};

/// Stationary solution for one player.
#[derive(Debug, Clone)]
pub struct ErgodicPlayer {
    /// Quadratic value coefficient `Λ` (SPD).
    pub lambda: Mat,
    /// Stationary precision `Σ`.
    pub precision: Mat,
    /// Precision recomputed through the symmetric quadratic equation.
    pub precision_alt: Mat,
    /// Stationary covariance `Σ⁻¹`.
    pub covariance: Mat,
    pub mean: Vector,
    /// Linear value coefficient `ρ`.
    pub rho: Vector,
    /// Long-run average cost.
    pub value: f64,
}

impl ErgodicPlayer {
    /// Closed-loop drift `A − R⁻¹Λ`.
    pub fn closed_loop(&self, player: &PlayerSpec) -> Result<Mat> {
        Ok(&player.drift - player.control_cost_inv()? * &self.lambda)
    }
}

/// Residual certificates of one player's stationary solution, all relative.
#[derive(Debug, Clone, Serialize)]
pub struct ErgodicCertificates {
    pub are_residual: f64,
    pub closed_loop_abscissa: f64,
    /// `‖Σ − Σ_alt‖ / ‖Σ‖`.
    pub precision_route_gap: f64,
    /// `‖ΣςR − RςΣ − (RA − AᵀR)‖` relative to `‖ΣςR‖ + ‖RA‖`.
    pub sylvester_residual: f64,
    /// `‖Λ − R(ςΣ + A)‖ / ‖Λ‖`.
    pub lambda_consistency: f64,
    /// Linear-coefficient equation `(A − R⁻¹Λ)ᵀρ + 2F₁ = 0`.
    pub rho_residual: f64,
    /// `(A − R⁻¹Λ)Σ⁻¹ + Σ⁻¹(A − R⁻¹Λ)ᵀ + 2ς = 0`.
    pub lyapunov_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ErgodicSolution {
    pub players: Vec<ErgodicPlayer>,
    pub certificates: Vec<ErgodicCertificates>,
    /// Residual of the stacked mean equation `M μ = q`.
    pub mean_residual: f64,
    pub f0_mode: F0Mode,
}

impl ErgodicSolution {
    pub fn stacked_mean(&self) -> Vector {
        let parts: Vec<f64> = self.players.iter().flat_map(|p| p.mean.iter().copied()).collect();
        Vector::from_vec(parts)
    }

    pub fn means(&self) -> Vec<Vector> {
        self.players.iter().map(|p| p.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Mat> {
        self.players.iter().map(|p| p.covariance.clone()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        use crate::game::mat_to_rows;
        let players: Vec<_> = self
            .players
            .iter()
            .zip(&self.certificates)
            .map(|(p, c)| {
                serde_json::json!({
                    "Lambda": mat_to_rows(&p.lambda),
                    "Sigma": mat_to_rows(&p.precision),
                    "Sigma_alt": mat_to_rows(&p.precision_alt),
                    "covariance": mat_to_rows(&p.covariance),
                    "mu": p.mean.as_slice(),
                    "rho": p.rho.as_slice(),
                    "c": p.value,
                    "certificates": c,
                })
            })
            .collect();
        serde_json::json!({
            "players": players,
            "mean_residual": self.mean_residual,
            "f0_mode": self.f0_mode,
        })
    }
}

fn are_residual(player: &PlayerSpec, qii: &Mat, r_inv: &Mat, lambda: &Mat) -> f64 {
    let a = &player.drift;
    let quad = lambda * r_inv * lambda;
    let res = lambda * a + a.transpose() * lambda - &quad + qii * 2.0;
    let scale = 2.0 * (lambda * a).norm() + quad.norm() + 2.0 * qii.norm();
    res.norm() / scale.max(1e-300)
}

/// One Kleinman step: given a stabilizing gain `G` (closed loop `A − G`),
/// solve `(A − G)ᵀX + X(A − G) = −(2Q + GᵀRG)`.
fn kleinman_step(player: &PlayerSpec, qii: &Mat, gain: &Mat) -> Result<Mat> {
    let closed = &player.drift - gain;
    let w = qii * 2.0 + gain.transpose() * &player.control_cost * gain;
    linalg::solve_lyapunov(&closed, &linalg::symmetrize(&w))
}

/// Newton–Kleinman iteration for the algebraic Riccati equation, seeded
/// with the gain `A + I` (closed loop `−I`).
pub fn solve_are_newton(player: &PlayerSpec, qii: &Mat, max_iter: usize) -> Result<Mat> {
    let d = player.dim();
    let r_inv = player.control_cost_inv()?;
    let mut gain = &player.drift + Mat::identity(d, d);
    let mut lambda = Mat::zeros(d, d);
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let next = kleinman_step(player, qii, &gain)?;
        last_change = (&next - &lambda).norm() / next.norm().max(1e-300);
        lambda = next;
        gain = &r_inv * &lambda;
        if last_change < 1e-14 {
            break;
        }
    }
    if are_residual(player, qii, &r_inv, &lambda) > RESIDUAL_TIGHT {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            last_change,
        });
    }
    Ok(lambda)
}

/// Stabilizing SPD solution of `ΛA + AᵀΛ − ΛR⁻¹Λ + 2Q_ii = 0`.
///
/// The stable invariant subspace `[U; V]` of the Hamiltonian
/// `[[A, −R⁻¹], [−2Q_ii, −Aᵀ]]` gives `Λ = V U⁻¹`, then a few Newton steps
/// polish the last digits.
pub fn solve_are(player: &PlayerSpec, qii: &Mat) -> Result<Mat> {
    let d = player.dim();
    let a = &player.drift;
    let r_inv = player.control_cost_inv()?;
    let mut h = Mat::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(a);
    h.view_mut((0, d), (d, d)).copy_from(&(-&r_inv));
    h.view_mut((d, 0), (d, d)).copy_from(&(qii * -2.0));
    h.view_mut((d, d), (d, d)).copy_from(&(-a.transpose()));
    let basis = linalg::stable_invariant_subspace(&h, d)?;
    let u = basis.rows(0, d).into_owned();
    let v = basis.rows(d, d).into_owned();
    // Λ = V U⁻¹  ⇔  Uᵀ Λᵀ = Vᵀ
    let lt = u
        .transpose()
        .lu()
        .solve(&v.transpose())
        .ok_or_else(|| Error::Singular("stable basis U block".into()))?;
    let mut lambda = linalg::symmetrize(&lt.transpose());

    let mut residual = are_residual(player, qii, &r_inv, &lambda);
    for _ in 0..4 {
        let gain = &r_inv * &lambda;
        let Ok(next) = kleinman_step(player, qii, &gain) else {
            break;
        };
        let next_residual = are_residual(player, qii, &r_inv, &next);
        if next_residual >= residual {
            break;
        }
        lambda = next;
        residual = next_residual;
    }
    if residual > RESIDUAL_TIGHT {
        return Err(Error::Residual {
            what: "algebraic Riccati equation".into(),
            residual,
            tolerance: RESIDUAL_TIGHT,
        });
    }
    linalg::require_spd(&lambda, "Riccati solution")?;
    let abscissa = linalg::spectral_abscissa(&(a - &r_inv * &lambda));
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    Ok(lambda)
}

/// Both routes to the stationary precision.
#[derive(Debug, Clone)]
pub struct PrecisionRoutes {
    /// `ς⁻¹(R⁻¹Λ − A)`.
    pub primary: Mat,
    /// SPD solution of `Σ ςRς Σ = AᵀRA + 2Q_ii`.
    pub alt: Mat,
    pub gap: f64,
    pub sylvester_residual: f64,
}

/// SPD solution of `Σ B Σ = C`: `B^{-1/2}(B^{1/2} C B^{1/2})^{1/2} B^{-1/2}`.
pub fn symmetric_quadratic_root(b: &Mat, c: &Mat) -> Result<Mat> {
    let b_half = linalg::spd_sqrt(b)?;
    let b_inv_half = linalg::spd_inv_sqrt(b)?;
    let inner = linalg::spd_sqrt(&linalg::symmetrize(&(&b_half * c * &b_half)))?;
    Ok(linalg::symmetrize(&(&b_inv_half * inner * &b_inv_half)))
}

/// Sylvester residual of the symmetric precision route, relative.
pub fn sylvester_residual(player: &PlayerSpec, precision: &Mat) -> f64 {
    let r = &player.control_cost;
    let a = &player.drift;
    let s = player.diffusion();
    let lhs = precision * s * r - r * s * precision;
    let rhs = r * a - a.transpose() * r;
    let scale = (precision * s * r).norm() + (r * a).norm();
    (lhs - rhs).norm() / scale.max(1e-300)
}

pub fn solve_sigma_ergodic(player: &PlayerSpec, qii: &Mat, lambda: &Mat) -> Result<PrecisionRoutes> {
    let r = &player.control_cost;
    let a = &player.drift;
    let s = player.diffusion();
    let r_inv = player.control_cost_inv()?;
    let s_inv = linalg::spd_inverse(s)?;
    let primary = s_inv * (&r_inv * lambda - a);
    let b = s * r * s;
    let c = a.transpose() * r * a + qii * 2.0;
    let alt = symmetric_quadratic_root(&linalg::symmetrize(&b), &linalg::symmetrize(&c))?;
    let gap = (&primary - &alt).norm() / alt.norm();
    let sylvester = sylvester_residual(player, &alt);
    if gap > RESIDUAL_LOOSE {
        return Err(Error::Residual {
            what: format!("stationary precision routes disagree (Sylvester residual {sylvester:.3e})"),
            residual: gap,
            tolerance: RESIDUAL_LOOSE,
        });
    }
    Ok(PrecisionRoutes {
        primary: linalg::symmetrize(&primary),
        alt,
        gap,
        sylvester_residual: sylvester,
    })
}

/// Stacked stationary means from `M μ = q`.
pub fn solve_mu(assembled: &AssembledMatrices) -> Result<Vector> {
    let m = &assembled.mean_operator;
    let smin = linalg::min_singular_value(m);
    if smin <= M_SIGMA_MIN_TOL * linalg::spectral_norm(m).max(1e-300) {
        return Err(Error::Singular(format!("M singular (σ_min = {smin:.3e})")));
    }
    linalg::solve_linear(m, &assembled.target_load)
}

/// `ρ = −R ς Σ μ`.
pub fn solve_rho(player: &PlayerSpec, precision: &Mat, mean: &Vector) -> Vector {
    -(&player.control_cost * player.diffusion() * precision * mean)
}

/// Ergodic value `tr(ςΛ) − ½ρᵀR⁻¹ρ + F₀(μ^{-i}, covariances)`.
pub fn compute_c(
    spec: &GameSpec,
    i: usize,
    lambda: &Mat,
    rho: &Vector,
    means: &[Vector],
    covariances: &[Mat],
    mode: F0Mode,
) -> Result<f64> {
    let p = &spec.players[i];
    let r_inv = p.control_cost_inv()?;
    let f0 = eval_f0(spec, i, means, covariances, mode)?;
    Ok((p.diffusion() * lambda).trace() - 0.5 * rho.dot(&(&r_inv * rho)) + f0)
}

pub fn solve_ergodic_system(spec: &GameSpec) -> Result<ErgodicSolution> {
    solve_ergodic_system_with(spec, F0Mode::PerPlayer)
}

pub fn solve_ergodic_system_with(spec: &GameSpec, mode: F0Mode) -> Result<ErgodicSolution> {
    let (n, d) = (spec.n_players, spec.dim);
    let assembled = assemble(spec)?;

    let mut partial = Vec::with_capacity(n);
    for (i, p) in spec.players.iter().enumerate() {
        let qii = spec.q(i, i, i);
        let lambda = solve_are(p, qii)?;
        let routes = solve_sigma_ergodic(p, qii, &lambda)?;
        let covariance = linalg::spd_inverse(&routes.primary)?;
        partial.push((lambda, routes, covariance));
    }

    let mu = solve_mu(&assembled)?;
    let mean_residual = (&assembled.mean_operator * &mu - &assembled.target_load).norm()
        / (linalg::spectral_norm(&assembled.mean_operator) * mu.norm() + assembled.target_load.norm())
            .max(1e-300);
    let means: Vec<Vector> = (0..n).map(|i| mu.rows(i * d, d).into_owned()).collect();
    let covariances: Vec<Mat> = partial.iter().map(|(_, _, c)| c.clone()).collect();

    let mut players = Vec::with_capacity(n);
    let mut certificates = Vec::with_capacity(n);
    for (i, (lambda, routes, covariance)) in partial.into_iter().enumerate() {
        let p = &spec.players[i];
        let r_inv = p.control_cost_inv()?;
        let closed = &p.drift - &r_inv * &lambda;
        let rho = solve_rho(p, &routes.primary, &means[i]);

        let f1 = eval_f1(spec, i, &means);
        let rho_res_vec = closed.transpose() * &rho + &f1 * 2.0;
        let rho_scale = (closed.norm() * rho.norm() + 2.0 * f1.norm()).max(1.0);
        let rho_residual = rho_res_vec.norm() / rho_scale;
        if rho_residual > RESIDUAL_TIGHT {
            return Err(Error::Residual {
                what: format!("linear coefficient equation of player {i}"),
                residual: rho_residual,
                tolerance: RESIDUAL_TIGHT,
            });
        }
        let lyap = &closed * &covariance + &covariance * closed.transpose() + p.diffusion() * 2.0;
        let lyapunov_residual = lyap.norm() / (p.diffusion().norm() * 2.0);
        let lambda_consistency = (&lambda - &p.control_cost * (p.diffusion() * &routes.primary + &p.drift)).norm()
            / lambda.norm();
        let value = compute_c(spec, i, &lambda, &rho, &means, &covariances, mode)?;

        certificates.push(ErgodicCertificates {
            are_residual: are_residual(p, spec.q(i, i, i), &r_inv, &lambda),
            closed_loop_abscissa: linalg::spectral_abscissa(&closed),
            precision_route_gap: routes.gap,
            sylvester_residual: routes.sylvester_residual,
            lambda_consistency,
            rho_residual,
            lyapunov_residual,
        });
        players.push(ErgodicPlayer {
            lambda,
            precision: routes.primary,
            precision_alt: routes.alt,
            covariance,
            mean: means[i].clone(),
            rho,
            value,
        });
    }
    Ok(ErgodicSolution {
        players,
        certificates,
        mean_residual,
        f0_mode: mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_example, fix_a, ExampleKind, ExampleParams};
    use approx::assert_relative_eq;

    fn scalar_player(a: f64, sigma: f64, r: f64) -> PlayerSpec {
        let m = |x: f64| Mat::from_element(1, 1, x);
        PlayerSpec::new(m(a), m(sigma), m(r), Vector::zeros(1), m(2.0))
    }

    #[test]
    fn are_scalar_cases() {
        let half = Mat::from_element(1, 1, 0.5);
        let l = solve_are(&scalar_player(-1.0, 1.0, 1.0), &half).unwrap();
        assert_relative_eq!(l[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-12);
        let l = solve_are(&scalar_player(0.0, 1.0, 1.0), &half).unwrap();
        assert_relative_eq!(l[(0, 0)], 1.0, epsilon = 1e-12);
        // Unstable open loop still has a stabilizing solution.
        let l = solve_are(&scalar_player(2.0, 1.0, 1.0), &half).unwrap();
        assert_relative_eq!(l[(0, 0)], 2.0 + 5f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn are_diagonal_2d() {
        let p = PlayerSpec::new(
            Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0])),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Vector::zeros(2),
            Mat::identity(2, 2),
        );
        let l = solve_are(&p, &(Mat::identity(2, 2) * 0.5)).unwrap();
        let expect = Mat::from_diagonal(&Vector::from_vec(vec![2f64.sqrt() - 1.0, 5f64.sqrt() - 2.0]));
        assert_relative_eq!(l, expect, epsilon = 1e-12);
    }

    #[test]
    fn newton_route_matches_subspace() {
        let p = PlayerSpec::new(
            Mat::from_row_slice(2, 2, &[0.3, 1.0, -0.4, -0.2]),
            Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.7]),
            Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            Vector::zeros(2),
            Mat::identity(2, 2),
        );
        let q = Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.4]);
        let a = solve_are(&p, &q).unwrap();
        // Seed gain A + I is stabilizing here (closed loop −I).
        let b = solve_are_newton(&p, &q, 60).unwrap();
        assert!((&a - &b).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn fix_a_ergodic_solution() {
        let sol = solve_ergodic_system(&fix_a()).unwrap();
        let s2 = 2f64.sqrt();
        for p in &sol.players {
            assert_relative_eq!(p.lambda[(0, 0)], s2 - 1.0, epsilon = 1e-10);
            assert_relative_eq!(p.precision[(0, 0)], 2.0 * s2, epsilon = 1e-10);
            assert_relative_eq!(p.precision_alt[(0, 0)], 2.0 * s2, epsilon = 1e-10);
            assert_eq!(p.mean[0], 0.0);
            assert_eq!(p.rho[0], 0.0);
            assert_relative_eq!(p.value, (5.0 * s2 - 4.0) / 8.0, epsilon = 1e-10);
        }
        for c in &sol.certificates {
            assert_eq!(c.sylvester_residual, 0.0);
            assert!(c.lyapunov_residual < 1e-9);
            assert!(c.lambda_consistency < 1e-9);
            assert!(c.closed_loop_abscissa < 0.0);
        }
    }

    #[test]
    fn ou_variance_oracle() {
        let p = scalar_player(0.0, 1.0, 1.0);
        let q = Mat::from_element(1, 1, 0.5);
        let l = solve_are(&p, &q).unwrap();
        let routes = solve_sigma_ergodic(&p, &q, &l).unwrap();
        assert_relative_eq!(routes.primary[(0, 0)], 2.0, epsilon = 1e-12);
        // dX = −X dt + dW has stationary variance ½.
        assert_relative_eq!(1.0 / routes.primary[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mu_and_rho_hand_cases() {
        let mut m = assemble(&fix_a()).unwrap();
        m.target_load = Vector::from_vec(vec![1.0, 1.0]);
        let mu = solve_mu(&m).unwrap();
        assert_relative_eq!(mu, Vector::from_vec(vec![2.0, 2.0]), epsilon = 1e-12);

        let p = &fix_a().players[0];
        let rho = solve_rho(p, &Mat::from_element(1, 1, 2.0 * 2f64.sqrt()), &Vector::from_element(1, 2.0));
        assert_relative_eq!(rho[0], -2.0 * 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn singular_mean_operator() {
        let params = ExampleParams {
            drift: 0.0,
            ..ExampleParams::default()
        };
        let spec = build_example(ExampleKind::Consensus, 2, 1, &params).unwrap();
        let err = solve_ergodic_system(&spec).unwrap_err();
        assert!(err.to_string().contains("M singular"), "{err}");
    }

    #[test]
    fn symmetric_targets_give_equal_means() {
        let params = ExampleParams {
            secondary: 0.1,
            others: 0.05,
            target: 1.0,
            ..ExampleParams::default()
        };
        let spec = build_example(ExampleKind::Symmetric, 3, 2, &params).unwrap();
        let sol = solve_ergodic_system(&spec).unwrap();
        for p in &sol.players[1..] {
            assert!((&p.mean - &sol.players[0].mean).norm() < 1e-12);
        }
        assert!(sol.players[0].mean.norm() > 0.1);
        for c in &sol.certificates {
            assert!(c.rho_residual < 1e-10 && c.are_residual < 1e-10);
        }
    }

    #[test]
    fn consensus_8_players_2d() {
        let spec = build_example(ExampleKind::Consensus, 8, 2, &ExampleParams::default()).unwrap();
        let sol = solve_ergodic_system(&spec).unwrap();
        for (p, c) in sol.players.iter().zip(&sol.certificates) {
            assert!(linalg::is_spd(&p.lambda) && linalg::is_spd(&p.precision));
            assert!(c.closed_loop_abscissa < 0.0 && c.lyapunov_residual < 1e-9);
        }
    }

    #[test]
    fn value_reduction_without_interaction() {
        // No off-diagonal cost, zero targets: c = tr(ςΛ) + Σ_j tr(Q_jj cov_j).
        let params = ExampleParams {
            others: 0.3,
            ..ExampleParams::default()
        };
        let spec = build_example(ExampleKind::Symmetric, 3, 1, &params).unwrap();
        let sol = solve_ergodic_system(&spec).unwrap();
        let p = &sol.players[0];
        let expect = 0.5 * p.lambda[(0, 0)] + 2.0 * 0.3 * sol.players[1].covariance[(0, 0)];
        assert_relative_eq!(p.value, expect, epsilon = 1e-12);

        // Doubling ς doubles the tr(ςΛ) term for fixed inputs.
        let mut spec2 = spec.clone();
        spec2.players[0].set_noise(Mat::from_element(1, 1, 2f64.sqrt()));
        let zero = Vector::zeros(1);
        let means = vec![zero.clone(), zero.clone(), zero];
        let covs = sol.covariances();
        let base = compute_c(&spec, 0, &p.lambda, &p.rho, &means, &covs, F0Mode::PerPlayer).unwrap();
        let doubled = compute_c(&spec2, 0, &p.lambda, &p.rho, &means, &covs, F0Mode::PerPlayer).unwrap();
        assert_relative_eq!(doubled - base, 0.5 * p.lambda[(0, 0)], epsilon = 1e-12);
    }
}
