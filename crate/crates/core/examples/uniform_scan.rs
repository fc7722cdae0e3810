//! Turnpike envelopes of the consensus family as the number of players
//! grows.
//!
//! cargo run --release --example uniform_scan

use lqg_turnpike::game::{ExampleKind, ExampleParams};
use lqg_turnpike::riccati_finite::{FiniteOptions, TimeGrid};
use lqg_turnpike::turnpike::uniform_scan;

fn main() -> lqg_turnpike::Result<()> {
    let scan = uniform_scan(
        ExampleKind::Consensus,
        &ExampleParams::default(),
        &[2, 4, 8, 16],
        1,
        |_| TimeGrid::new(10.0, 5000),
        &FiniteOptions::default(),
    )?;
    for e in &scan.entries {
        println!("N={:>2}: peaks {:?}", e.n, e.peaks);
    }
    for (q, s) in &scan.spread {
        println!(
            "{q}: lambda in [{:.4}, {:.4}] (ratio {:.3}), peak Spearman {:.2}",
            s.lambda_min, s.lambda_max, s.lambda_ratio, s.peak_spearman
        );
    }
    Ok(())
}
