//! Limit constants for a quenched tree and the law of the root local time
//! against its prediction.
//!
//! ```text
//! cargo run --release --example limit_laws
//! ```

use treewalk::env::EnvironmentSpec;
use treewalk::limits::{corollary12_check, corollary14_check, predict_limits};
use treewalk::recursion::omega_root_parent;
use treewalk::walk::{local_time_profile, realization};

fn main() -> treewalk::Result<()> {
    let spec = EnvironmentSpec::binary();
    let real = realization(&spec, 1);
    let pred = predict_limits(&spec, None, 1.0, omega_root_parent(&real))?;
    println!(
        "regime {}, c3 {:.5}, survival prefactor {:.5}, local time factor {:.5}",
        pred.regime,
        pred.c3.unwrap_or(f64::NAN),
        pred.survival_prefactor(),
        pred.local_time_factor()
    );

    let n = 20_000;
    let grid: Vec<u64> = [1_000, 2_000, 5_000, 10_000, 20_000].to_vec();
    let prof = local_time_profile(&real, n, &grid, 0.1, 4_000, 3)?;

    let lt = corollary12_check(&prof.local_times, n, &pred, 4)?;
    println!("L_n / sqrt(n) against the half-normal: KS {:.4}", lt.ks);

    let lp = corollary14_check(&prof, &pred)?;
    println!(
        "P(X_n = root): slope {:.3} +- {:.3}, prefactor {:.4} (predicted {:.4})",
        lp.fit.slope, lp.fit.stderr_slope, lp.prefactor_hat, lp.predicted_prefactor
    );
    print!("{}", prof.to_csv());
    Ok(())
}
