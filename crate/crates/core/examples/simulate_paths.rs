//! Euler–Maruyama ensemble under the finite-horizon equilibrium, with
//! empirical moments against the solved ones.
//!
//! cargo run --release --example simulate_paths

use lqg_turnpike::game::fix_a;
use lqg_turnpike::riccati_finite::{solve_finite_system, TimeGrid};
use lqg_turnpike::simulate::{simulate_finite, InitialState, NoisePlan, SimOptions};

fn main() -> lqg_turnpike::Result<()> {
    let spec = fix_a();
    let fin = solve_finite_system(&spec, &TimeGrid::new(4.0, 4000)?)?;
    let plan = NoisePlan::new(7, 5000, 1e-3, 4.0)?;
    let ens = simulate_finite(&fin, &spec, &plan, &InitialState::SampleInitial, &SimOptions::with_samples(&plan, 8))?;
    for (s, t) in ens.times.iter().enumerate() {
        let m = ens.moments(0, s);
        let (_, cov) = fin.moments(0, *t)?;
        println!(
            "t={t:.2}: mean {:+.4} ± {:.4}, var {:.4} ± {:.4} (solved {:.4})",
            m.mean[0],
            m.mean_se[0],
            m.covariance[(0, 0)],
            m.covariance_se[(0, 0)],
            cov[(0, 0)]
        );
    }
    Ok(())
}
