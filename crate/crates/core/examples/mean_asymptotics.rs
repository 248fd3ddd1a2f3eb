//! `E B_eps` over six decades of `eps` from the quantile-grid solver, with
//! the log-log slope and the fixed-slope prefactor.
//!
//! ```text
//! cargo run --release --example mean_asymptotics
//! ```

use treewalk::cascade::{mean_b_asymptotics, GridConfig, MeanSource};
use treewalk::env::{calibrate_two_point, EnvironmentSpec};

fn main() -> treewalk::Result<()> {
    let grid: Vec<f64> = (4..=12).map(|k| 10f64.powf(-(k as f64) / 2.0)).collect();
    let source = MeanSource::Grid(GridConfig::default());

    for (name, spec) in [("binary", EnvironmentSpec::binary()), ("kappa 3", calibrate_two_point(2, 2.0, 3.0)?)] {
        let a = mean_b_asymptotics(&spec, &grid, source, None, 1)?;
        println!(
            "{name}: slope {:.4} +- {:.4} (expected {:.4}), prefactor {:.4}, c5 {:.4}",
            a.fit.slope,
            a.fit.stderr_slope,
            a.expected_slope,
            a.fixed_slope_prefactor,
            spec.c5().unwrap_or(f64::NAN)
        );
    }

    // kappa = 2: the mean over (eps / log(1/eps))^{1/2} is slowly varying
    let spec = calibrate_two_point(2, 2.0, 2.0)?;
    let a = mean_b_asymptotics(&spec, &grid, source, None, 1)?;
    print!("{}", a.to_csv());
    println!("largest change per step: {:.3}", a.max_step_variation());
    Ok(())
}
