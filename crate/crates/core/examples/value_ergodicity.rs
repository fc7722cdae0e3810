//! Normalized finite-horizon value V_T(0, 0)/T approaching the ergodic
//! value at rate 1/T.
//!
//! cargo run --example value_ergodicity

use lqg_turnpike::game::fix_a;
use lqg_turnpike::linalg::Vector;
use lqg_turnpike::riccati_ergodic::solve_ergodic_system;
use lqg_turnpike::riccati_finite::FiniteOptions;
use lqg_turnpike::turnpike::value_ergodicity;

fn main() -> lqg_turnpike::Result<()> {
    let spec = fix_a();
    let erg = solve_ergodic_system(&spec)?;
    let series = value_ergodicity(&spec, &erg, &Vector::zeros(1), &[5.0, 10.0, 20.0, 40.0], &FiniteOptions::default())?;
    let mut prev: Option<f64> = None;
    for p in &series {
        let ratio = prev.map_or(String::new(), |g| format!(", ratio {:.4}", p.gap[0] / g));
        println!("T={:>4}: V/T = {:.7}, c = {:.7}, gap {:.4e}{ratio}", p.horizon, p.normalized_value[0], p.c[0], p.gap[0]);
        prev = Some(p.gap[0]);
    }
    Ok(())
}
