//! Full verification suite at reduced Monte Carlo size.
//!
//! cargo run --release --example verification_suite

use lqg_turnpike::game::fix_a;
use lqg_turnpike::verify::{run_full_suite, SuiteConfig};

fn main() {
    let config = SuiteConfig {
        horizon: 2.0,
        steps: 2000,
        paths: 4000,
        cost_window: Some((5.0, 15.0)),
        ..SuiteConfig::default()
    };
    let result = run_full_suite(&fix_a(), &config);
    print!("{}", result.summary_table());
}
