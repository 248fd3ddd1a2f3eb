//! Positive stable variables from Kanter's representation, checked against
//! the Laplace transform and the closed form at index 1/2.
//!
//! ```text
//! cargo run --release --example stable
//! ```

use statrs::distribution::{ContinuousCDF, Normal};
use treewalk::limits::{empirical_laplace, sample_stable, StableSpec};
use treewalk::stats::ks_distance_to_cdf;

fn main() -> treewalk::Result<()> {
    for alpha in [0.5, 2.0 / 3.0, 0.9] {
        let s = sample_stable(alpha, 200_000, 1)?;
        let law = StableSpec::new(alpha)?;
        for lambda in [0.5, 1.0, 2.0] {
            let (m, se) = empirical_laplace(&s, lambda);
            println!(
                "alpha {alpha:.3} lambda {lambda}: {m:.5} +- {se:.1e}, exact {:.5}",
                law.laplace(lambda)
            );
        }
        println!("  E S^(-alpha) = {:.5}", law.negative_moment(alpha));
    }

    // S_{1/2} has the law of 1/(2 N^2)
    let s = sample_stable(0.5, 200_000, 2)?;
    let normal = Normal::standard();
    let ks = ks_distance_to_cdf(&s, |x| 2.0 * (1.0 - normal.cdf(1.0 / (2.0 * x).sqrt())));
    println!("KS(S_1/2, 1/(2N^2)) = {ks:.4}");
    Ok(())
}
