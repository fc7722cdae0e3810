//! Structural checks and measured turnpike constants for a consensus game.
//!
//! cargo run --example assumption_report

use lqg_turnpike::game::{build_example, check_assumptions, ExampleKind, ExampleParams};
use lqg_turnpike::riccati_ergodic::solve_ergodic_system;
use lqg_turnpike::riccati_finite::{solve_finite_system, TimeGrid};

fn main() -> lqg_turnpike::Result<()> {
    let spec = build_example(ExampleKind::Consensus, 4, 1, &ExampleParams::default())?;
    let erg = solve_ergodic_system(&spec)?;
    let fin = solve_finite_system(&spec, &TimeGrid::new(10.0, 10_000)?)?;
    let report = check_assumptions(&spec, Some(&erg), Some(&fin));
    for r in &report.records {
        println!("{:<28} {:?} (gating: {})", r.name, r.status, r.gating);
        for (k, v) in &r.witnesses {
            println!("    {k} = {v:.6e}");
        }
    }
    println!("gating checks passed: {}", report.gating_passed());
    Ok(())
}
