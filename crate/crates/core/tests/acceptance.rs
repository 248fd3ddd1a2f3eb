//! Acceptance suite. Runs every criterion at full size and tolerance,
//! prints one line per criterion and exits non-zero if any fails.
//!
//! ```text
//! cargo test --release -p treewalk --test acceptance
//! ```

use std::time::Instant;

use statrs::function::erf::erfc;
use treewalk::birth_death::DepthChain;
use treewalk::cascade::{
    c4_from_tail, estimate_tail_constant, identity_check, mean_b_asymptotics, run_to_fixpoint, GridConfig,
    MeanSource, Target, TailMethod, DEFAULT_AVERAGING, DEFAULT_POOL_SIZE,
};
use treewalk::env::{calibrate_two_point, EnvironmentSpec, DEFAULT_PROBE_BOUND};
use treewalk::limits::{corollary12_check, corollary14_check, empirical_laplace, predict_limits, sample_stable};
use treewalk::recursion::{abel_cross_check, abel_horizon, b_epsilon, omega_root_parent};
use treewalk::stats::{binomial_stderr, ks_distance_to_cdf};
use treewalk::verify::{verify, RunConfig, Verdict};
use treewalk::walk::{local_time_profile, realization, survival_curve, WalkMode};

type Outcome = treewalk::Result<(bool, String)>;

struct Specs {
    binary: EnvironmentSpec,
    k15: EnvironmentSpec,
    k2: EnvironmentSpec,
    k3: EnvironmentSpec,
}

fn log_grid(hi: f64, lo: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| (hi.ln() + (lo.ln() - hi.ln()) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

fn exact_fixed_point(s: &Specs) -> Outcome {
    let real = realization(&s.binary, 1);
    let mut worst: f64 = 0.0;
    for eps in [1e-2, 1e-4] {
        let b = b_epsilon(&real, eps, &[300, 600], 1e-3)?;
        worst = worst.max((b.root_b - eps.sqrt()).abs());
    }
    Ok((worst <= 1e-6, format!("max |B - sqrt(eps)| = {worst:.2e} at depth 600")))
}

/// Criteria on the pool fixpoints: mean balance and the `2 sqrt(eps)` bound.
fn fixpoints(s: &Specs) -> treewalk::Result<((bool, String), (bool, String))> {
    let mut worst_z: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let (mut ok_id, mut ok_bound) = (true, true);
    let mut runs = 0;
    for spec in [&s.binary, &s.k15, &s.k3] {
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let (c, _) = identity_check(spec, eps, DEFAULT_POOL_SIZE, DEFAULT_AVERAGING, 1)?;
            worst_z = worst_z.max(c.z_score().abs());
            worst_ratio = worst_ratio.max(c.mean_b / (2.0 * eps.sqrt()));
            ok_id &= c.passes(3.0);
            ok_bound &= c.bound_holds();
            runs += 1;
        }
    }
    Ok((
        (ok_id, format!("{runs} fixpoints, max |residual| / se = {worst_z:.2}")),
        (ok_bound, format!("{runs} fixpoints, max E B / (2 sqrt eps) = {worst_ratio:.4}")),
    ))
}

fn binary_survival(s: &Specs) -> Outcome {
    let real = realization(&s.binary, 1);
    let replicas = 1_000_000;
    let mut horizons: Vec<u64> = (1..=2048).collect();
    horizons.push(10_000);
    let curve = survival_curve(&real, WalkMode::Quenched, &horizons, replicas, 1)?;
    let pred = predict_limits(&s.binary, None, 1.0, omega_root_parent(&real))?;
    let c3 = pred.c3.expect("c3 for kappa > 2");
    let n = 10_000f64;
    let ratio = n.sqrt() * curve.survival_at(10_000) / (pred.omega_root * c3);
    let exact = DepthChain::from_spec(&s.binary)?.survival(2048);
    let worst = (1..=2048)
        .map(|t| (curve.survival_at(t) - exact[t as usize]).abs() / binomial_stderr(exact[t as usize], replicas))
        .fold(0.0, f64::max);
    Ok((
        (0.93..=1.07).contains(&ratio) && worst <= 3.0,
        format!("n^(1/2) P(T+ > n) / (omega c3) = {ratio:.4} at n = 1e4; transfer-matrix max |z| {worst:.2} for n <= 2048"),
    ))
}

fn abel(s: &Specs) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, spec, seed) in [("binary", &s.binary, 1), ("kappa 1.5", &s.k15, 4)] {
        let real = realization(spec, seed);
        for lambda in [0.02, 0.05] {
            let curve = survival_curve(&real, WalkMode::Quenched, &[abel_horizon(lambda)], 1_000_000, 2)?;
            let c = abel_cross_check(&real, lambda, &curve)?;
            ok &= c.passes(3.0);
            parts.push(format!(
                "{name} l={lambda}: {:.2} se (literal form off by {:.1}%)",
                c.relative_discrepancy / c.relative_combined_stderr,
                100.0 * (c.rhs_without_boundary / c.lhs - 1.0).abs()
            ));
        }
    }
    Ok((ok, parts.join("; ")))
}

struct Scaling {
    line: (bool, String),
    k15_prefactor: f64,
}

fn scaling(s: &Specs) -> treewalk::Result<Scaling> {
    let src = MeanSource::Grid(GridConfig::default());
    let grid = log_grid(1e-2, 1e-6, 9);
    let k15 = mean_b_asymptotics(&s.k15, &grid, src, None, 1)?;
    let bin = mean_b_asymptotics(&s.binary, &grid, src, None, 1)?;
    let doubling: Vec<f64> = (0..=13).map(|k| 1e-2 / 2f64.powi(k)).collect();
    let k2 = mean_b_asymptotics(&s.k2, &doubling, src, None, 1)?;
    let ok15 = (k15.fit.slope - 1.0 / 1.5).abs() <= 0.05;
    let okb = (bin.fit.slope - 0.5).abs() <= 0.01;
    let var = k2.max_step_variation();
    Ok(Scaling {
        line: (
            ok15 && okb && var < 0.10,
            format!(
                "slope kappa 1.5 {:.4} (1/kappa {:.4}), binary {:.4}; kappa 2 max change per doubling {:.3}",
                k15.fit.slope,
                1.0 / 1.5,
                bin.fit.slope,
                var
            ),
        ),
        k15_prefactor: k15.fixed_slope_prefactor,
    })
}

fn tail_closure(s: &Specs, measured_prefactor: f64) -> Outcome {
    let kappa = s.k15.kappa(DEFAULT_PROBE_BOUND)?;
    let pool = run_to_fixpoint(&s.k15, Target::MInf, DEFAULT_POOL_SIZE, 5_000, 1e-3, 1)?.pool;
    let fit = estimate_tail_constant(&pool.samples, kappa, TailMethod::Hill, 1)?;
    let hill_ok = (fit.exponent_hat / kappa - 1.0).abs() <= 0.10;
    let c4 = c4_from_tail(fit.constant_hat, kappa);
    let ratio = c4 / measured_prefactor;
    Ok((
        hill_ok && (ratio - 1.0).abs() <= 0.15,
        format!(
            "Hill {:.4} (kappa {kappa:.2}); c_M {:.4} gives c4 {c4:.4} against regression prefactor {measured_prefactor:.4}, ratio {ratio:.3}",
            fit.exponent_hat, fit.constant_hat
        ),
    ))
}

fn stable() -> Outcome {
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 2.0 / 3.0] {
        let s = sample_stable(alpha, 1_000_000, 1)?;
        for lambda in [0.5, 1.0, 2.0] {
            let (m, se) = empirical_laplace(&s, lambda);
            worst = worst.max((m - (-f64::powf(lambda, alpha)).exp()).abs() / se);
        }
    }
    // P(1/(2 N^2) <= x) = P(|N| >= (2x)^{-1/2})
    let half = sample_stable(0.5, 1_000_000, 2)?;
    let ks = ks_distance_to_cdf(&half, |x| if x > 0.0 { erfc(0.5 / x.sqrt()) } else { 0.0 });
    Ok((
        worst <= 3.0 && ks <= 0.01,
        format!("max Laplace |z| {worst:.2}; KS(S_1/2, 1/(2N^2)) = {ks:.4} at 1e6 samples"),
    ))
}

fn local_laws(s: &Specs) -> treewalk::Result<((bool, String), (bool, String))> {
    let real = realization(&s.binary, 1);
    let pred = predict_limits(&s.binary, None, 1.0, omega_root_parent(&real))?;
    let n = 100_000;
    let grid: Vec<u64> = log_grid(n as f64, 1_000.0, 11)
        .into_iter()
        .rev()
        .map(|x| {
            let k = x.round() as u64;
            k - k % 2
        })
        .collect();
    let prof = local_time_profile(&real, n, &grid, 0.1, 10_000, 1)?;
    let lt = corollary12_check(&prof.local_times, n, &pred, 1)?;
    let lp = corollary14_check(&prof, &pred)?;
    Ok((
        (lt.ks <= 0.03, format!("KS(L_n / sqrt(n), half-normal) = {:.4} at n = 1e5, 1e4 replicas", lt.ks)),
        (
            lp.slope_ok(0.03) && lp.prefactor_ok(0.10) && lp.monotone(2.0),
            format!(
                "slope {:.4} +- {:.4}, prefactor ratio {:.4}, largest increase {:.2} se",
                lp.fit.slope,
                lp.fit.stderr_slope,
                lp.prefactor_ratio(),
                lp.max_increase_z
            ),
        ),
    ))
}

fn properties(s: &Specs) -> Outcome {
    let claims = ["Eq2.4", "Sec3-contraction", "Lem3.1", "Lem3.3", "Eq1.5"];
    let mut failed = Vec::new();
    for (label, spec) in [("binary", &s.binary), ("k1.5", &s.k15)] {
        let cfg = RunConfig::new(label, spec, 1);
        for id in claims {
            if verify(id, &cfg)?.report.verdict != Verdict::Pass {
                failed.push(format!("{id} on {label}"));
            }
        }
    }
    // bitwise reproducibility across worker counts
    let real = realization(&s.k15, 2);
    let run = |w: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(w).build().unwrap().install(|| {
            let c = survival_curve(&real, WalkMode::Quenched, &[10, 100, 1_000], 5_000, 3).unwrap();
            let p = run_to_fixpoint(&s.k15, Target::BEps(1e-2), 20_000, 1_000, 1e-4, 3).unwrap();
            (c.to_csv(), p.pool.samples)
        })
    };
    let reference = run(1);
    if [2, 3].iter().any(|&w| run(w) != reference) {
        failed.push("reproducibility".into());
    }
    Ok((
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks on 2 specs and 1/2/3-worker reproducibility", claims.len())
        } else {
            format!("failing: {}", failed.join(", "))
        },
    ))
}

fn main() {
    // `cargo test` passes harness flags; honour a name filter like the default harness
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    let specs = Specs {
        binary: EnvironmentSpec::binary(),
        k15: calibrate_two_point(2, 2.0, 1.5).expect("calibration"),
        k2: calibrate_two_point(2, 2.0, 2.0).expect("calibration"),
        k3: calibrate_two_point(2, 2.0, 3.0).expect("calibration"),
    };
    let start = Instant::now();
    let mut lines: Vec<(usize, &str, treewalk::Result<(bool, String)>, f64)> = Vec::new();
    let timed = |f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64())
    };

    let (r, t) = timed(&mut || exact_fixed_point(&specs));
    lines.push((1, "exact fixed point", r, t));

    let t0 = Instant::now();
    match fixpoints(&specs) {
        Ok((id, bound)) => {
            let t = t0.elapsed().as_secs_f64();
            lines.push((2, "mean balance at fixpoints", Ok(id), t));
            lines.push((3, "2 sqrt(eps) bound", Ok(bound), 0.0));
        }
        Err(e) => {
            let msg = e.to_string();
            lines.push((2, "mean balance at fixpoints", Err(e), 0.0));
            lines.push((3, "2 sqrt(eps) bound", Err(treewalk::Error::Precondition(msg)), 0.0));
        }
    }

    let (r, t) = timed(&mut || binary_survival(&specs));
    lines.push((4, "binary survival and oracle", r, t));

    let (r, t) = timed(&mut || abel(&specs));
    lines.push((5, "Abel identity", r, t));

    let t0 = Instant::now();
    let sc = scaling(&specs);
    let t6 = t0.elapsed().as_secs_f64();
    let prefactor = sc.as_ref().map(|s| s.k15_prefactor).unwrap_or(f64::NAN);
    lines.push((6, "scaling exponents", sc.map(|s| s.line), t6));

    let (r, t) = timed(&mut || tail_closure(&specs, prefactor));
    lines.push((7, "tail closure", r, t));

    let (r, t) = timed(&mut stable);
    lines.push((8, "stable sampler", r, t));

    let t0 = Instant::now();
    match local_laws(&specs) {
        Ok((lt, lp)) => {
            lines.push((9, "local time law", Ok(lt), t0.elapsed().as_secs_f64()));
            lines.push((10, "local probability", Ok(lp), 0.0));
        }
        Err(e) => {
            let msg = e.to_string();
            lines.push((9, "local time law", Err(e), 0.0));
            lines.push((10, "local probability", Err(treewalk::Error::Precondition(msg)), 0.0));
        }
    }

    let (r, t) = timed(&mut || properties(&specs));
    lines.push((11, "property suite", r, t));

    let mut failures = 0;
    println!();
    for (k, name, r, secs) in &lines {
        let (ok, detail) = match r {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!ok);
        println!("[{k:>2}] {} {name}: {detail} ({secs:.1} s)", if ok { "PASS" } else { "FAIL" });
    }
    println!(
        "\n{} of {} criteria pass ({:.0} s)",
        lines.len() - failures,
        lines.len(),
        start.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
