//! Unilateral linear-feedback deviations never beat the equilibrium cost,
//! estimated with common random numbers.
//!
//! cargo run --release --example nash_certificate

use lqg_turnpike::game::fix_a;
use lqg_turnpike::riccati_finite::{solve_finite_system, TimeGrid};
use lqg_turnpike::simulate::NoisePlan;
use lqg_turnpike::verify::{default_perturbations, nash_perturbation};

fn main() -> lqg_turnpike::Result<()> {
    let spec = fix_a();
    let fin = solve_finite_system(&spec, &TimeGrid::new(2.0, 2000)?)?;
    let plan = NoisePlan::new(11, 2000, 1e-3, 2.0)?;
    let out = nash_perturbation(&spec, &fin, 0, &default_perturbations(), &plan)?;
    println!("equilibrium cost {:.5} ± {:.1e}", out.equilibrium_cost.value, out.equilibrium_cost.se);
    for (p, d) in &out.differences {
        println!("gain {:+.2}, shift {:+.1}: J − J* = {:.5} ± {:.1e}", p.gain_scale, p.shift, d.value, d.se);
    }
    println!("curvature {:.4e} ± {:.1e}; {:?}", out.curvature.value, out.curvature.se, out.check.status);
    Ok(())
}
