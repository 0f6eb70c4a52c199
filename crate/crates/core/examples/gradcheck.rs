//! Compares reverse-mode gradients with central differences for every primitive op,
//! the corner-query cross-attention, an encoder block, the whole model and both losses.
//!
//! ```text
//! cargo run --release --example gradcheck -- [seed]
//! ```

use std::time::Instant;

use cornerstr::diagnostics::run_gradient_checks;

fn main() -> cornerstr::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let start = Instant::now();
    let reports = run_gradient_checks(seed)?;
    for r in &reports {
        let verdict = if r.max_rel_error <= 1e-4 { "ok" } else { "FAIL" };
        println!("{:<32} {:>12.3e}  {verdict}", r.name, r.max_rel_error);
    }
    println!("{} checks in {:.1?}", reports.len(), start.elapsed());
    Ok(())
}
