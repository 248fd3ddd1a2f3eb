//! The backward recursion for `B_eps` on one tree: a rigorous enclosure at
//! growing depth, and the Abel sum of the survival curve against it.
//!
//! ```text
//! cargo run --release --example recursion
//! ```

use treewalk::env::{calibrate_two_point, EnvironmentSpec};
use treewalk::recursion::{abel_cross_check, abel_horizon, b_epsilon, epsilon_of_lambda, martingale_limit};
use treewalk::walk::{realization, survival_curve, WalkMode};

fn main() -> treewalk::Result<()> {
    // binary tree: B_eps solves B^2 = eps
    let bin = realization(&EnvironmentSpec::binary(), 1);
    for eps in [1e-2, 1e-4] {
        let b = b_epsilon(&bin, eps, &[50, 100, 200, 400, 600], 1e-5)?;
        println!("binary eps {eps:e}: B = {:.7}, sqrt(eps) = {:.7}", b.root_b, eps.sqrt());
    }

    let spec = calibrate_two_point(2, 2.0, 1.5)?;
    let real = realization(&spec, 4);
    let b = b_epsilon(&real, 1e-2, &[10, 20, 40, 80], 1e-3)?;
    for ((d, v), h) in b.depths.iter().zip(&b.values).zip(&b.half_widths) {
        println!("kappa 1.5 depth {d:>4}: {v:.6} +- {h:.1e}");
    }
    let m = martingale_limit(&real, 1e-3, 200_000_000);
    println!("M_inf on this tree: {:.4} (converged {})", m.estimate, m.converged);

    let lambda = 0.05;
    println!("lambda {lambda} -> eps {:.6}", epsilon_of_lambda(lambda));
    let curve = survival_curve(&real, WalkMode::Quenched, &[abel_horizon(lambda)], 100_000, 9)?;
    let abel = abel_cross_check(&real, lambda, &curve)?;
    println!(
        "Abel sum {:.6} +- {:.1e}, recursion {:.6}, relative gap {:.2e} ({:.2} se)",
        abel.lhs,
        abel.lhs_stderr,
        abel.rhs,
        abel.relative_discrepancy,
        abel.relative_discrepancy / abel.relative_combined_stderr
    );
    Ok(())
}
