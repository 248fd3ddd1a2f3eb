//! Power tail of the martingale limit from a population pool: Hill and
//! regression exponents, the tail constant and the implied `c_4`.
//!
//! ```text
//! cargo run --release --example tail_fit
//! ```

use treewalk::cascade::{c4_from_tail, empirical_tail, estimate_tail_constant, run_to_fixpoint, Target, TailMethod};
use treewalk::env::{calibrate_two_point, DEFAULT_PROBE_BOUND};

fn main() -> treewalk::Result<()> {
    let spec = calibrate_two_point(2, 2.0, 1.5)?;
    let kappa = spec.kappa(DEFAULT_PROBE_BOUND)?;
    let run = run_to_fixpoint(&spec, Target::MInf, 200_000, 5_000, 1e-3, 1)?;

    for method in [TailMethod::Hill, TailMethod::LogLogRegression] {
        let fit = estimate_tail_constant(&run.pool.samples, kappa, method, 1)?;
        println!(
            "{method:?}: exponent {:.4} +- {:.4}, c_M {:.4} +- {:.4}, window [{:.2}, {:.2}]",
            fit.exponent_hat, fit.exponent_stderr, fit.constant_hat, fit.constant_stderr, fit.fit_window.0, fit.fit_window.1
        );
        if method == TailMethod::Hill {
            println!("c4 from c_M: {:.4}", c4_from_tail(fit.constant_hat, kappa));
        }
    }

    println!("x,tail_prob");
    for (x, p) in empirical_tail(&run.pool.samples, 12) {
        println!("{x:.4},{p:.3e}");
    }
    Ok(())
}
