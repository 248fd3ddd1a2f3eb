//! Quenched survival of the first return time on the binary tree, next to
//! the exact transfer-matrix values of the depth chain.
//!
//! ```text
//! cargo run --release --example survival
//! ```

use treewalk::birth_death::DepthChain;
use treewalk::env::EnvironmentSpec;
use treewalk::stats::binomial_stderr;
use treewalk::walk::{realization, survival_curve, WalkMode};

fn main() -> treewalk::Result<()> {
    let spec = EnvironmentSpec::binary();
    let real = realization(&spec, 1);
    let horizons = [2, 4, 8, 16, 64, 256, 1024, 2048];
    let replicas = 100_000;
    let curve = survival_curve(&real, WalkMode::Quenched, &horizons, replicas, 5)?;

    // on a deterministic tree the depth is a birth-death chain
    let exact = DepthChain::from_spec(&spec)?.survival(2048);

    println!("{:>6} {:>12} {:>12} {:>8}", "n", "monte carlo", "exact", "z");
    for &n in &horizons {
        let p = curve.survival_at(n);
        let e = exact[n as usize];
        let z = (p - e) / binomial_stderr(e, replicas);
        println!("{n:>6} {p:>12.6} {e:>12.6} {z:>8.2}");
    }

    // annealed: a fresh tree for every replica
    let ann = survival_curve(&real, WalkMode::Annealed, &[256], 20_000, 6)?;
    println!("annealed P(T > 256) = {:.5}", ann.survival_at(256));
    Ok(())
}
