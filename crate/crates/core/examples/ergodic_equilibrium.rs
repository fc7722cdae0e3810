//! Ergodic equilibrium of the two-player consensus game: Λ, stationary
//! covariance and the long-run value.
//!
//! cargo run --example ergodic_equilibrium

use lqg_turnpike::game::fix_a;
use lqg_turnpike::riccati_ergodic::solve_ergodic_system;

fn main() -> lqg_turnpike::Result<()> {
    let erg = solve_ergodic_system(&fix_a())?;
    for (i, (p, c)) in erg.players.iter().zip(&erg.certificates).enumerate() {
        println!(
            "player {i}: Lambda = {:.12}, covariance = {:.12}, c = {:.9}",
            p.lambda[(0, 0)],
            p.covariance[(0, 0)],
            p.value
        );
        println!("    ARE residual {:.1e}, precision route gap {:.1e}", c.are_residual, c.precision_route_gap);
    }
    println!("reference: Lambda = {:.12}, c = {:.9}", 2f64.sqrt() - 1.0, (5.0 * 2f64.sqrt() - 4.0) / 8.0);
    Ok(())
}
