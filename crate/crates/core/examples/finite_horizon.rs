//! Finite-horizon equilibrium with nonzero reference positions: Riccati
//! path, mean/linear-coefficient sweep and the HJB residual.
//!
//! cargo run --example finite_horizon

use lqg_turnpike::game::{build_example, ExampleKind, ExampleParams};
use lqg_turnpike::linalg::Vector;
use lqg_turnpike::riccati_finite::{evaluate_value, hjb_residual, solve_finite_system, TimeGrid};

fn main() -> lqg_turnpike::Result<()> {
    let params = ExampleParams::default().apply_pairs(["xbar=1", "B=0.1", "mu0=0.5"])?;
    let spec = build_example(ExampleKind::Symmetric, 3, 1, &params)?;
    let grid = TimeGrid::new(8.0, 8000)?;
    let fin = solve_finite_system(&spec, &grid)?;
    let x = Vector::from_element(1, 0.25);
    for t in [0.0, 2.0, 4.0, 6.0, 7.9] {
        let (lambda, rho, kappa) = fin.coefficients(0, t)?;
        let (mean, cov) = fin.moments(0, t)?;
        println!(
            "t={t:>4}: Lambda {:.6} rho {:+.6} kappa {:.4} | mean {:+.6} var {:.6} | V(t, 0.25) {:.5} | HJB {:.1e}",
            lambda[(0, 0)],
            rho[0],
            kappa,
            mean[0],
            cov[(0, 0)],
            evaluate_value(&fin, 0, t, &x)?,
            hjb_residual(&fin, &spec, 0, t, &x)?
        );
    }
    fin.write_csv(std::io::sink())?;
    Ok(())
}
