//! Deviation of the finite-horizon equilibrium from the ergodic one and the
//! fitted exponential envelopes.
//!
//! cargo run --release --example turnpike_profile

use lqg_turnpike::game::{build_example, ExampleKind, ExampleParams};
use lqg_turnpike::riccati_ergodic::solve_ergodic_system;
use lqg_turnpike::riccati_finite::{solve_finite_system, TimeGrid};
use lqg_turnpike::turnpike::{deviation_profile, fit_profile, PathwiseMode};

fn main() -> lqg_turnpike::Result<()> {
    let params = ExampleParams::default().apply_pairs(["xbar=1"])?;
    let spec = build_example(ExampleKind::Symmetric, 2, 1, &params)?;
    let fin = solve_finite_system(&spec, &TimeGrid::new(10.0, 10_000)?)?;
    let erg = solve_ergodic_system(&spec)?;
    let profile = deviation_profile(&fin, &erg, &spec, Some(PathwiseMode::Moments))?;
    for rec in fit_profile(&profile, &erg) {
        match &rec.fit {
            Some(f) => println!(
                "{:<12} player {:?}: K = {:.3e}, lambda = {:.4} ({:?} branch, rms {:.1e})",
                rec.quantity, rec.player, f.khat, f.lambdahat, f.branch, f.rms
            ),
            None => println!("{:<12} player {:?}: {}", rec.quantity, rec.player, rec.status),
        }
    }
    Ok(())
}
