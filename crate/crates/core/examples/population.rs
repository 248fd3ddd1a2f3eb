//! Population dynamics for the fixed point of `B_eps`: the mean balance,
//! the `2 sqrt(eps)` bound and the coupling contraction.
//!
//! ```text
//! cargo run --release --example population
//! ```

use treewalk::cascade::{coupling_diagnostic, identity_check, run_to_fixpoint, Target};
use treewalk::env::calibrate_two_point;

fn main() -> treewalk::Result<()> {
    let spec = calibrate_two_point(2, 2.0, 1.5)?;

    let run = run_to_fixpoint(&spec, Target::BEps(1e-2), 100_000, 10_000, 1e-4, 1)?;
    println!("fixpoint after {} steps (burn-in {})", run.trace.len(), run.burn_in);
    let (mean, se) = run.pool.mean_stderr();
    println!("E B = {mean:.6} +- {se:.1e}");

    println!("{:>8} {:>12} {:>12} {:>8} {:>10}", "eps", "E B", "2 sqrt eps", "z", "bound");
    for eps in [1e-1, 1e-2, 1e-3] {
        let (chk, _) = identity_check(&spec, eps, 100_000, 200, 2)?;
        println!(
            "{eps:>8.0e} {:>12.6} {:>12.6} {:>8.2} {:>10}",
            chk.mean_b,
            2.0 * eps.sqrt(),
            chk.z_score(),
            chk.bound_holds()
        );
    }

    let steps = coupling_diagnostic(&spec, 1e-2, 50_000, 10, 3);
    for (i, s) in steps.iter().enumerate() {
        println!("coupling step {:>2}: expected ratio {:.4} <= {:.4}", i + 1, s.expected_ratio, s.bound);
    }
    Ok(())
}
