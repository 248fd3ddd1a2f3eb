//! Moment identities, bounds, tail fits and `E B_eps` asymptotics on top of
//! the two solvers.

use serde::{Deserialize, Serialize};

use super::grid::{run_grid, GridConfig, GridLaw};
use super::pool::{population_step, relaxation_time, run_to_fixpoint, PopulationPool, Target};
use crate::env::{EnvironmentSpec, Regime};
use crate::error::{Error, Result};
use crate::stats::{
    batch_means_stderr, beta, bootstrap, ks_distance, loglog_fit, mean_stderr, quantile_sorted,
    FitResult, RngStream, DEFAULT_BOOTSTRAP_RESAMPLES,
};

/// Standard errors below this are treated as this (deterministic pools).
pub const IDENTITY_FLOOR: f64 = 1e-12;
/// Minimum steps averaged after the fixpoint is reached.
pub const DEFAULT_AVERAGING: usize = 200;
pub const AVERAGING_BATCHES: usize = 10;
/// Each batch spans at least this many relaxation times.
pub const BATCH_RELAXATIONS: f64 = 5.0;
/// Pool snapshots merged by [`law_check`], two relaxation times apart.
pub const LAW_SNAPSHOTS: usize = 8;
/// Tail window as pool quantiles.
pub const TAIL_WINDOW: (f64, f64) = (0.95, 0.999);
/// Hill threshold quantile, inside the window. Below it the local index of
/// the `kappa = 1.5` law is still well short of `kappa`.
pub const HILL_THRESHOLD: f64 = 0.99;

const TAG_CMP: u64 = 0xC0_4D;

/// `B(2 - kappa, kappa - 1)`, finite for `1 < kappa < 2`.
pub fn c_kappa(kappa: f64) -> f64 {
    kappa * beta(2.0 - kappa, kappa - 1.0)
}

/// `(c_M kappa B(2 - kappa, kappa - 1))^{-1/kappa}`.
pub fn c4_from_tail(c_m: f64, kappa: f64) -> f64 {
    (c_m * c_kappa(kappa)).powf(-1.0 / kappa)
}

/// The normalizer `r(eps)` with `E B_eps ~ C r(eps)`.
pub fn mean_b_scale(regime: Regime, kappa: f64, eps: f64) -> f64 {
    match regime {
        Regime::KappaLt2 => eps.powf(1.0 / kappa),
        Regime::KappaEq2 => (eps / (1.0 / eps).ln()).sqrt(),
        Regime::KappaGt2 => eps.sqrt(),
    }
}

/// Predicted prefactor `C` for [`mean_b_scale`]; `c_m` is needed iff
/// `kappa <= 2`.
pub fn mean_b_prefactor(spec: &EnvironmentSpec, kappa: f64, c_m: Option<f64>) -> Result<f64> {
    match Regime::of(kappa)? {
        Regime::KappaGt2 => spec
            .c5()
            .ok_or_else(|| Error::Precondition("c5 undefined for this spec".into())),
        regime => {
            let c_m: f64 = c_m.ok_or(Error::MissingTailConstant)?;
            Ok(if regime == Regime::KappaLt2 {
                c4_from_tail(c_m, kappa)
            } else {
                (2.0 * c_m).powf(-0.5)
            })
        }
    }
}

/// Time-averaged check of `E B^2/(1+B) = eps E 1/(1+B)` on a pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub epsilon: f64,
    pub pool_size: usize,
    /// Steps to reach the fixpoint.
    pub iterations: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Average of `lhs - rhs` over the averaging steps.
    pub residual: f64,
    /// Batch-means standard error of `residual`.
    pub stderr: f64,
    /// Same quantities on the last pool alone, with the naive error.
    pub single_residual: f64,
    pub single_stderr: f64,
    pub mean_b: f64,
    pub mean_b_stderr: f64,
}

impl IdentityCheck {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.residual.abs() <= sigmas * self.stderr.max(IDENTITY_FLOOR)
    }

    /// `E B_eps <= 2 sqrt(eps)`, checked on the point estimate.
    pub fn bound_holds(&self) -> bool {
        self.mean_b <= 2.0 * self.epsilon.sqrt()
    }

    pub fn z_score(&self) -> f64 {
        self.residual / self.stderr.max(IDENTITY_FLOOR)
    }
}

fn identity_terms(pool: &PopulationPool, eps: f64) -> (f64, f64, Vec<f64>) {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let d: Vec<f64> = pool
        .samples
        .iter()
        .map(|&b| {
            let l = b * b / (1.0 + b);
            let r = eps / (1.0 + b);
            lhs += l;
            rhs += r;
            l - r
        })
        .collect();
    let n = pool.len() as f64;
    (lhs / n, rhs / n, d)
}

/// Runs a pool to its fixpoint, then averages the identity terms over at
/// least `averaging` further steps. The residual of one pool follows the
/// scale of the pool, which wanders on the relaxation time `tau`, so the
/// single-pool error `sd / sqrt(P)` is too small; the time average uses
/// batches of at least [`BATCH_RELAXATIONS`] `tau` and their batch-means
/// error.
pub fn identity_check(
    spec: &EnvironmentSpec,
    eps: f64,
    pool_size: usize,
    averaging: usize,
    seed: u64,
) -> Result<(IdentityCheck, PopulationPool)> {
    if averaging < 2 * AVERAGING_BATCHES {
        return Err(Error::Precondition(format!("averaging {averaging} too short")));
    }
    let run = run_to_fixpoint(spec, Target::BEps(eps), pool_size, 200_000, 1e-10, seed)?;
    let iterations = run.trace.len();
    let mut pool = run.pool;
    let tau = relaxation_time(&pool);
    let averaging = averaging.max((BATCH_RELAXATIONS * tau * AVERAGING_BATCHES as f64).ceil() as usize);
    let (_, _, d) = identity_terms(&pool, eps);
    let (single_residual, single_stderr) = mean_stderr(&d);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let mut residuals = Vec::with_capacity(averaging);
    let mut means = Vec::with_capacity(averaging);
    for _ in 0..averaging {
        population_step(&mut pool, spec);
        let (l, r, _) = identity_terms(&pool, eps);
        lhs += l;
        rhs += r;
        residuals.push(l - r);
        means.push(pool.mean());
    }
    let (residual, stderr) = batch_means_stderr(&residuals, AVERAGING_BATCHES);
    let (mean_b, mean_b_stderr) = batch_means_stderr(&means, AVERAGING_BATCHES);
    Ok((
        IdentityCheck {
            epsilon: eps,
            pool_size,
            iterations,
            lhs: lhs / averaging as f64,
            rhs: rhs / averaging as f64,
            residual,
            stderr,
            single_residual,
            single_stderr,
            mean_b,
            mean_b_stderr,
        },
        pool,
    ))
}

/// How a tail fit was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailMethod {
    LogLogRegression,
    Hill,
}

/// Power-tail fit `P(M > x) ~ c x^{-alpha}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub exponent_hat: f64,
    pub exponent_stderr: f64,
    /// `c_M`: `x^kappa P(M > x)` averaged over the window with the known
    /// `kappa`, unconditional (zeros count in the denominator).
    pub constant_hat: f64,
    pub constant_stderr: f64,
    pub fit_window: (f64, f64),
    pub method: TailMethod,
    /// Order statistics inside the window.
    pub points: usize,
}

/// Ascending nonzero samples and the total count.
fn survivors(samples: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|&x| x > 0.0).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `(x, P(M > x))` at order statistics inside the quantile window, thinned
/// to at most `max_points` log-spaced ranks.
fn window_points(sorted: &[f64], total: usize, window: (f64, f64), max_points: usize) -> Vec<(f64, f64)> {
    let n = sorted.len();
    let k_hi = ((1.0 - window.0) * n as f64).floor() as usize;
    let k_lo = (((1.0 - window.1) * n as f64).ceil() as usize).max(1);
    if k_hi <= k_lo {
        return Vec::new();
    }
    let mut ks: Vec<usize> = (0..max_points)
        .map(|i| {
            let t = i as f64 / (max_points - 1) as f64;
            ((k_lo as f64).ln() + t * ((k_hi as f64).ln() - (k_lo as f64).ln())).exp().round() as usize
        })
        .collect();
    ks.dedup();
    // k-th largest value has k - 1/2 values above it on average
    ks.into_iter()
        .filter(|&k| k >= 1 && k <= n)
        .map(|k| (sorted[n - k], (k as f64 - 0.5) / total as f64))
        .collect()
}

/// `(x, P(M > x))` at up to `max_points` log-spaced order statistics of
/// the whole sample.
pub fn empirical_tail(samples: &[f64], max_points: usize) -> Vec<(f64, f64)> {
    let sorted = survivors(samples);
    window_points(&sorted, samples.len(), (0.0, 1.0), max_points.max(2))
}

fn window_constant(sorted: &[f64], total: usize, kappa: f64) -> Option<f64> {
    let pts = window_points(sorted, total, TAIL_WINDOW, 64);
    if pts.len() < 2 {
        return None;
    }
    Some(pts.iter().map(|(x, s)| x.powf(kappa) * s).sum::<f64>() / pts.len() as f64)
}

/// Power-tail fit of an `M_inf` pool on the quantile window [`TAIL_WINDOW`].
/// The exponent is fitted freely; the constant uses the known `kappa`.
pub fn estimate_tail_constant(samples: &[f64], kappa: f64, method: TailMethod, seed: u64) -> Result<TailFit> {
    if !kappa.is_finite() {
        return Err(Error::DegenerateTail("kappa is infinite; M_inf has no power tail".into()));
    }
    let sorted = survivors(samples);
    let total = samples.len();
    if sorted.len() < 10_000 {
        return Err(Error::DegenerateTail(format!("{} surviving samples, need 10^4", sorted.len())));
    }
    let lo = quantile_sorted(&sorted, TAIL_WINDOW.0);
    let hi = quantile_sorted(&sorted, TAIL_WINDOW.1);
    if !(hi > lo * (1.0 + 1e-9)) {
        return Err(Error::DegenerateTail("tail window has no spread".into()));
    }
    let (exponent_hat, exponent_stderr, points) = match method {
        TailMethod::LogLogRegression => {
            let pts = window_points(&sorted, total, TAIL_WINDOW, 200);
            let fit = loglog_fit(&pts, None)?;
            (-fit.slope, fit.stderr_slope, pts.len())
        }
        TailMethod::Hill => {
            let n = sorted.len();
            let k = ((1.0 - HILL_THRESHOLD) * n as f64) as usize;
            let threshold = sorted[n - k - 1];
            let s: f64 = sorted[n - k..].iter().map(|x| (x / threshold).ln()).sum();
            let alpha = k as f64 / s;
            (alpha, alpha / (k as f64).sqrt(), k)
        }
    };
    let constant_hat = window_constant(&sorted, total, kappa)
        .ok_or_else(|| Error::DegenerateTail("too few points in window".into()))?;
    let surv_fraction = sorted.len() as f64 / total as f64;
    let boot = bootstrap(&sorted, DEFAULT_BOOTSTRAP_RESAMPLES, seed, |s| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        let n = (v.len() as f64 / surv_fraction).round() as usize;
        window_constant(&v, n, kappa)
    });
    Ok(TailFit {
        exponent_hat,
        exponent_stderr,
        constant_hat,
        constant_stderr: boot.map(|b| b.stderr).unwrap_or(f64::NAN),
        fit_window: (lo, hi),
        method,
        points,
    })
}

/// Where the means of [`mean_b_asymptotics`] come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MeanSource {
    /// Plain pools of the given size, time-averaged at the fixpoint.
    Pool { size: usize },
    /// The tail-resolved grid solver.
    Grid(GridConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanBRow {
    pub epsilon: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `C r(eps)` when the prefactor is known.
    pub predicted: Option<f64>,
    /// `mean / r(eps)`.
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanBAsymptotics {
    pub kappa: f64,
    pub regime: Regime,
    pub rows: Vec<MeanBRow>,
    /// Free log-log fit of the mean against `eps`.
    pub fit: FitResult,
    /// `1/kappa` or `1/2`.
    pub expected_slope: f64,
    /// Prefactor with the slope fixed at the expected one, fitted over the
    /// smaller half of the grid (where the asymptotics are closest).
    pub fixed_slope_prefactor: f64,
    pub predicted_prefactor: Option<f64>,
}

impl MeanBAsymptotics {
    /// Largest relative change of `mean / r(eps)` between neighbouring grid
    /// points.
    pub fn max_step_variation(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| (w[1].scaled / w[0].scaled - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,mean_b,stderr,predicted,scaled\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{:.10e},{:.3e},{},{:.8}\n",
                r.epsilon,
                r.mean,
                r.stderr,
                r.predicted.map(|p| format!("{p:.10e}")).unwrap_or_default(),
                r.scaled
            ));
        }
        out
    }
}

/// Grid `M_inf` law run long enough for tail work.
pub fn m_inf_grid(spec: &EnvironmentSpec, config: GridConfig, seed: u64) -> Result<GridLaw> {
    let run = run_grid(spec, GridLaw::constant(Target::MInf, config, 1.0, seed), 60, 40)?;
    let mut law = run.law;
    law.values = run.averaged_values;
    Ok(law)
}

/// `E B_eps` over `eps_grid` with the free slope fit and, when `c_m` is
/// supplied or not needed, the predicted curve.
pub fn mean_b_asymptotics(
    spec: &EnvironmentSpec,
    eps_grid: &[f64],
    source: MeanSource,
    c_m: Option<f64>,
    seed: u64,
) -> Result<MeanBAsymptotics> {
    let kappa = spec.kappa(crate::env::DEFAULT_PROBE_BOUND)?;
    let regime = Regime::of(kappa)?;
    let prefactor = mean_b_prefactor(spec, kappa, c_m).ok();
    let mut eps: Vec<f64> = eps_grid.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let mut means = Vec::with_capacity(eps.len());
    match source {
        MeanSource::Pool { size } => {
            for &e in &eps {
                let (chk, _) = identity_check(spec, e, size, DEFAULT_AVERAGING, seed)?;
                means.push((chk.mean_b, chk.mean_b_stderr));
            }
        }
        MeanSource::Grid(config) => {
            // continuation from the martingale law downwards in eps
            let m = m_inf_grid(spec, config, seed)?;
            let mut law = m.rescaled_as(Target::BEps(eps[0]), eps[0].sqrt());
            for &e in &eps {
                law.target = Target::BEps(e);
                let run = run_grid(spec, law, 30, 20)?;
                means.push((run.mean, run.mean_stderr));
                law = run.law;
            }
        }
    }
    let rows: Vec<MeanBRow> = eps
        .iter()
        .zip(&means)
        .map(|(&e, &(mean, stderr))| {
            let r = mean_b_scale(regime, kappa, e);
            MeanBRow {
                epsilon: e,
                mean,
                stderr,
                predicted: prefactor.map(|c| c * r),
                scaled: mean / r,
            }
        })
        .collect();
    let fit = loglog_fit(&rows.iter().map(|r| (r.epsilon, r.mean)).collect::<Vec<_>>(), None)?;
    let expected_slope = regime.index(kappa);
    let small = &rows[rows.len() / 2..];
    let fixed_slope_prefactor =
        (small.iter().map(|r| r.scaled.ln()).sum::<f64>() / small.len() as f64).exp();
    Ok(MeanBAsymptotics {
        kappa,
        regime,
        rows,
        fit,
        expected_slope,
        fixed_slope_prefactor,
        predicted_prefactor: prefactor,
    })
}

/// Monte Carlo comparison `E phi_a(<lhs>) <= E phi_a(<rhs>)` with
/// `phi_a(x) = x^2 / (a + x)` and `<x> = x / E x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
    pub passes: bool,
}

#[inline]
pub fn phi_a(a: f64, x: f64) -> f64 {
    x * x / (a + x)
}

fn normalized_phi(a: f64, xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| phi_a(a, x / m)).collect()
}

/// Paired check on draws of `xi`: `<(eps + xi)/(1 + xi)>` against `<xi>`.
pub fn convex_comparison_check<F>(mut xi: F, a: f64, eps: f64, n: usize, seed: u64) -> ComparisonCheck
where
    F: FnMut(&mut RngStream) -> f64,
{
    let mut rng = RngStream::tagged(seed, &[TAG_CMP]);
    let xs: Vec<f64> = (0..n).map(|_| xi(&mut rng)).collect();
    let gs: Vec<f64> = xs.iter().map(|&x| (eps + x) / (1.0 + x)).collect();
    let l = normalized_phi(a, &gs);
    let r = normalized_phi(a, &xs);
    let diff: Vec<f64> = l.iter().zip(&r).map(|(x, y)| x - y).collect();
    let (d, se) = mean_stderr(&diff);
    ComparisonCheck {
        lhs: mean_stderr(&l).0,
        rhs: mean_stderr(&r).0,
        stderr: se,
        passes: d <= 3.0 * se + 1e-12,
    }
}

/// Unpaired check of `E phi_a(<B>) <= E phi_a(M)` from two pools.
pub fn pool_comparison_check(b_pool: &[f64], m_pool: &[f64], a: f64) -> ComparisonCheck {
    let (l, se_l) = mean_stderr(&normalized_phi(a, b_pool));
    let (r, se_r) = mean_stderr(&normalized_phi(a, m_pool));
    let stderr = se_l.hypot(se_r);
    ComparisonCheck {
        lhs: l,
        rhs: r,
        stderr,
        passes: l <= r + 3.0 * stderr + 1e-9 * r.abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsympMRow {
    pub a: f64,
    pub value: f64,
    pub stderr: f64,
    /// `value a^{kappa-1} / c_kappa` for `kappa < 2` (tends to `c_M`),
    /// `a value` otherwise (tends to `E M^2`).
    pub scaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsympMCheck {
    pub regime: Regime,
    pub rows: Vec<AsympMRow>,
    pub fit: Option<FitResult>,
    /// `1 - kappa` below 2, `-1` above.
    pub expected_slope: f64,
    /// Exact `E M^2` when finite.
    pub second_moment: Option<f64>,
}

/// `E M^2/(a + M)` over `a_grid` from weighted atoms `(mass, value)`.
fn asymp_m_rows<I>(points: I, a_grid: &[f64], kappa: f64, regime: Regime) -> Vec<AsympMRow>
where
    I: Fn(f64) -> (f64, f64),
{
    a_grid
        .iter()
        .map(|&a| {
            let (value, stderr) = points(a);
            let scaled = match regime {
                Regime::KappaLt2 => value * a.powf(kappa - 1.0) / c_kappa(kappa),
                _ => a * value,
            };
            AsympMRow { a, value, stderr, scaled }
        })
        .collect()
}

fn finish_asymp(spec: &EnvironmentSpec, kappa: f64, rows: Vec<AsympMRow>) -> Result<AsympMCheck> {
    let regime = Regime::of(kappa)?;
    let fit = loglog_fit(&rows.iter().map(|r| (r.a, r.value)).collect::<Vec<_>>(), None).ok();
    Ok(AsympMCheck {
        regime,
        rows,
        fit,
        expected_slope: if regime == Regime::KappaGt2 { -1.0 } else { 1.0 - kappa },
        second_moment: spec.m_inf_second_moment(),
    })
}

/// `E M^2/(a + M)` against `a` on a pool.
pub fn asymp_m_check(spec: &EnvironmentSpec, m_pool: &[f64], a_grid: &[f64], kappa: f64) -> Result<AsympMCheck> {
    let regime = Regime::of(kappa)?;
    let rows = asymp_m_rows(
        |a| mean_stderr(&m_pool.iter().map(|&m| phi_a(a, m)).collect::<Vec<_>>()),
        a_grid,
        kappa,
        regime,
    );
    finish_asymp(spec, kappa, rows)
}

/// Same on a grid law, whose deep tail the pool cannot reach.
pub fn asymp_m_check_grid(spec: &EnvironmentSpec, law: &GridLaw, a_grid: &[f64], kappa: f64) -> Result<AsympMCheck> {
    let regime = Regime::of(kappa)?;
    let rows = asymp_m_rows(|a| (law.expect(|m| phi_a(a, m)), 0.0), a_grid, kappa, regime);
    finish_asymp(spec, kappa, rows)
}

/// Law comparison of `eps^{-1/2} B_eps` with `c5 M_inf` for `kappa > 2`.
/// Both sides merge [`LAW_SNAPSHOTS`] spaced pools, a time average of the
/// empirical law that smooths out the wandering scale of a single pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawCheck {
    pub epsilon: f64,
    pub c5: f64,
    pub ks: f64,
    /// `E B / (c5 sqrt(eps))`.
    pub mean_ratio: f64,
}

pub fn law_check(spec: &EnvironmentSpec, eps: f64, pool_size: usize, seed: u64) -> Result<LawCheck> {
    let kappa = spec.kappa(crate::env::DEFAULT_PROBE_BOUND)?;
    if Regime::of(kappa)? != Regime::KappaGt2 {
        return Err(Error::RegimeMismatch(format!("law check needs kappa > 2, got {kappa}")));
    }
    let c5 = spec.c5().ok_or_else(|| Error::Precondition("c5 undefined".into()))?;
    let run = run_to_fixpoint(spec, Target::BEps(eps), pool_size, 200_000, 1e-10, seed)?;
    let mut b = run.pool;
    let gap = (2.0 * relaxation_time(&b)).ceil() as usize;
    let mut scaled_b = Vec::with_capacity(LAW_SNAPSHOTS * pool_size);
    for _ in 0..LAW_SNAPSHOTS {
        for _ in 0..gap {
            population_step(&mut b, spec);
        }
        scaled_b.extend(b.samples.iter().map(|x| x / eps.sqrt()));
    }
    let mut m = run_to_fixpoint(spec, Target::MInf, pool_size, 10_000, 1e-4, seed ^ 0x4D)?.pool;
    let mut scaled_m = Vec::with_capacity(LAW_SNAPSHOTS * pool_size);
    for _ in 0..LAW_SNAPSHOTS {
        for _ in 0..10 {
            population_step(&mut m, spec);
        }
        scaled_m.extend(m.samples.iter().map(|x| c5 * x));
    }
    let mean_b = scaled_b.iter().sum::<f64>() / scaled_b.len() as f64;
    Ok(LawCheck {
        epsilon: eps,
        c5,
        ks: law_distance(&scaled_b, &scaled_m),
        mean_ratio: mean_b / c5,
    })
}

/// KS distance, except that two point masses (relative spread below 1e-6)
/// are compared by location: rounding along different paths would otherwise
/// split them.
fn law_distance(a: &[f64], b: &[f64]) -> f64 {
    let spread = |x: &[f64]| {
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        ((hi - lo) / hi.abs().max(1e-300), 0.5 * (lo + hi))
    };
    let ((sa, ca), (sb, cb)) = (spread(a), spread(b));
    if sa < 1e-6 && sb < 1e-6 {
        return if (ca - cb).abs() <= 1e-6 * ca.abs().max(cb.abs()) { 0.0 } else { 1.0 };
    }
    ks_distance(a, b)
}

/// Pre-normalization means of an `M_inf` pool over `steps` steps after a
/// burn-in, as `(mean, batch-means stderr)`; the martingale keeps it at 1.
pub fn m_pool_mean_check(spec: &EnvironmentSpec, pool_size: usize, steps: usize, seed: u64) -> (f64, f64) {
    let mut pool = PopulationPool::new(Target::MInf, pool_size, seed);
    for _ in 0..50 {
        population_step(&mut pool, spec);
    }
    let raw: Vec<f64> = (0..steps)
        .map(|_| {
            population_step(&mut pool, spec);
            pool.last_raw_mean
        })
        .collect();
    if raw.len() >= 2 * AVERAGING_BATCHES {
        batch_means_stderr(&raw, AVERAGING_BATCHES)
    } else {
        mean_stderr(&raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::calibrate_two_point;

    #[test]
    fn c4_closed_form_at_three_halves() {
        // B(1/2, 1/2) = pi
        let c = c4_from_tail(1.0, 1.5);
        assert!((c - (1.5 * std::f64::consts::PI).powf(-1.0 / 1.5)).abs() < 1e-12);
    }

    #[test]
    fn binary_identity_and_bound() {
        let spec = EnvironmentSpec::binary();
        for eps in [1e-1, 1e-2] {
            let (c, pool) = identity_check(&spec, eps, 2000, 40, 3).unwrap();
            assert!(c.passes(3.0), "{c:?}");
            assert!(c.bound_holds());
            assert!((pool.mean() - eps.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn binary_tail_is_degenerate() {
        let ones = vec![1.0; 20_000];
        assert!(matches!(
            estimate_tail_constant(&ones, f64::INFINITY, TailMethod::Hill, 0),
            Err(Error::DegenerateTail(_))
        ));
        assert!(matches!(
            estimate_tail_constant(&ones, 3.0, TailMethod::LogLogRegression, 0),
            Err(Error::DegenerateTail(_))
        ));
    }

    #[test]
    fn pareto_tail_is_recovered() {
        // P(X > x) = x^{-1.5} on [1, inf)
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.open_uniform().powf(-1.0 / 1.5)).collect();
        for method in [TailMethod::LogLogRegression, TailMethod::Hill] {
            let f = estimate_tail_constant(&xs, 1.5, method, 1).unwrap();
            assert!((f.exponent_hat - 1.5).abs() < 0.06f64.max(3.0 * f.exponent_stderr), "{f:?}");
            assert!((f.constant_hat - 1.0).abs() < 0.05, "{f:?}");
            assert!(f.constant_stderr > 0.0 && f.constant_stderr < 0.05);
        }
    }

    #[test]
    fn constant_xi_makes_both_sides_equal() {
        let c = convex_comparison_check(|_| 0.7, 1.0, 0.3, 1000, 0);
        assert!((c.lhs - phi_a(1.0, 1.0)).abs() < 1e-12);
        assert!((c.rhs - c.lhs).abs() < 1e-12);
        assert!(c.passes);
    }

    #[test]
    fn two_point_xi_passes() {
        let c = convex_comparison_check(|r| if r.uniform() < 0.5 { 0.1 } else { 10.0 }, 1.0, 0.5, 100_000, 2);
        assert!(c.passes, "{c:?}");
        assert!(c.lhs < c.rhs);
    }

    #[test]
    fn binary_second_moment_row() {
        let spec = EnvironmentSpec::binary();
        let c = asymp_m_check(&spec, &[1.0; 100], &[1e2, 1e3, 1e4, 1e5, 1e6], f64::INFINITY).unwrap();
        assert!((c.rows.last().unwrap().scaled - 1.0).abs() < 1e-5);
        assert_eq!(c.second_moment, Some(1.0));
    }

    #[test]
    fn law_check_refuses_heavy_tails() {
        let spec = calibrate_two_point(2, 2.0, 1.5).unwrap();
        assert!(matches!(law_check(&spec, 1e-3, 1000, 0), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn prefactor_needs_tail_constant_below_two() {
        let spec = calibrate_two_point(2, 2.0, 1.5).unwrap();
        assert!(matches!(mean_b_prefactor(&spec, 1.5, None), Err(Error::MissingTailConstant)));
        let bin = EnvironmentSpec::binary();
        assert!((mean_b_prefactor(&bin, f64::INFINITY, None).unwrap() - 1.0).abs() < 1e-12);
    }
}
