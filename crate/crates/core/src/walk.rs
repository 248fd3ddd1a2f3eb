//! The quenched walk on a [`TreeArena`]: return times, survival curves of
//! the first return time, local times and the local probability at the
//! root.
//!
//! Replica `r` always draws from the stream `(seed, [tag, r])`, and results
//! are merged from fixed-size chunks in chunk order, so every output is a
//! function of the seed alone and not of the worker count.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::{NodeId, Realization, Site, TreeArena, DEFAULT_CAPACITY, ROOT};
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::stats::{binomial_stderr, mean_stderr, stream_key, RngStream};

/// Default per-replica step budget.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
/// Largest horizon accepted by [`survival_curve`].
pub const MAX_HORIZON: u64 = 100_000;
/// Smallest replica count accepted by [`survival_curve`].
pub const MIN_REPLICAS: usize = 1_000;

const TAG_SURVIVAL: u64 = 0x5355_5256;
const TAG_LOCAL: u64 = 0x4C4F_4341;
const TAG_ENV: u64 = 0x454E_5649;
const TAG_RETURNS: u64 = 0x5245_5455;
const TAG_REVERSE: u64 = 0x5245_5645;
const CHUNK: usize = 256;
/// Cached nodes after which a worker's arena is dropped and regrown.
const CACHE_LIMIT: usize = 1 << 22;

/// Quenched: every replica walks the same tree. Annealed: each replica
/// walks a fresh tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WalkMode {
    Quenched,
    Annealed,
}

/// Observables of one trajectory started at the root.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WalkRecord {
    pub steps: u64,
    /// `L_n` at the root with `n = steps`.
    pub root_local_time: u64,
    pub return_times: Vec<u64>,
    pub max_depth: u32,
    pub root_visits_even: u64,
}

/// One step of the walk.
#[inline]
pub fn step(arena: &mut TreeArena, site: Site, rng: &mut RngStream) -> Result<Site> {
    arena.step_with(site, rng.uniform())
}

/// Walks from the root until the `k_returns`-th return or until
/// `step_budget` steps.
pub fn run_return_times(
    arena: &mut TreeArena,
    k_returns: usize,
    step_budget: u64,
    rng: &mut RngStream,
) -> Result<WalkRecord> {
    if k_returns == 0 {
        return Err(Error::Precondition("k_returns must be at least 1".into()));
    }
    let mut rec = WalkRecord::default();
    let mut site = Site::Node(ROOT);
    while rec.return_times.len() < k_returns {
        if rec.steps == step_budget {
            return Err(Error::BudgetExhausted {
                budget: step_budget,
                partial: Box::new(rec),
            });
        }
        site = match step(arena, site, rng) {
            Ok(s) => s,
            Err(Error::ArenaCapacity { .. }) => {
                return Err(Error::BudgetExhausted {
                    budget: step_budget,
                    partial: Box::new(rec),
                })
            }
            Err(e) => return Err(e),
        };
        rec.steps += 1;
        if let Site::Node(x) = site {
            rec.max_depth = rec.max_depth.max(arena.depth(x));
            if x == ROOT {
                assert!(rec.steps % 2 == 0, "odd return time {}", rec.steps);
                rec.root_local_time += 1;
                rec.root_visits_even += 1;
                rec.return_times.push(rec.steps);
            }
        }
    }
    Ok(rec)
}

/// Length of one excursion from the root, or `None` if it outlasts `cap`.
pub fn excursion(arena: &mut TreeArena, cap: u64, rng: &mut RngStream) -> Result<Option<u64>> {
    let mut site = Site::Node(ROOT);
    for t in 1..=cap {
        site = step(arena, site, rng)?;
        if site == Site::Node(ROOT) {
            debug_assert!(t % 2 == 0);
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Successive return-time increments of one quenched walk, each censored
/// at `cap`. After a censored excursion the walk restarts at the root, which
/// leaves the increments i.i.d. with the law of `min(T+, cap)`.
pub fn return_increments(real: &Realization, count: usize, cap: u64, seed: u64) -> Result<Vec<u64>> {
    let mut arena = TreeArena::new(real.clone());
    let mut rng = RngStream::tagged(seed, &[TAG_RETURNS]);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if arena.len() > CACHE_LIMIT {
            arena.clear();
        }
        out.push(excursion(&mut arena, cap, &mut rng)?.unwrap_or(cap));
    }
    Ok(out)
}

/// Detailed balance on one edge of a truncated tree: occupation of the
/// lower end `y` against the upper end `x`, with `pi(y)/pi(x)` from the
/// conductances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBalance {
    /// Depth of `y`; 0 is the edge between the root and its parent.
    pub depth: u32,
    pub ratio: f64,
    pub predicted: f64,
    /// Batch-means z-score of `visits(y) pi(x) - visits(x) pi(y)`.
    pub z: f64,
}

/// Runs the walk on the tree cut at `depth`, with vertices at that depth
/// sent back to their parent, and compares occupations with the reversible
/// measure `pi(x) = c(x) (1 + S_x)` (`c(x)` only at the cut), where
/// `c(x) = prod A` along the path is the conductance of the edge above `x`.
pub fn reversibility_diagnostic(
    real: &Realization,
    depth: u32,
    steps: u64,
    batches: usize,
    seed: u64,
) -> Result<Vec<EdgeBalance>> {
    if depth == 0 || batches < 2 || steps < 10 * batches as u64 {
        return Err(Error::Precondition("need depth >= 1, two batches and 10 steps per batch".into()));
    }
    let mut arena = TreeArena::new(real.clone());
    arena.expand_to_depth(depth)?;
    let n = arena.len();
    // state n is the parent of the root
    let mut pi = vec![0.0; n + 1];
    let mut cond = vec![1.0; n];
    pi[n] = 1.0;
    for x in 0..n as NodeId {
        if let Some(p) = arena.parent(x) {
            cond[x as usize] = cond[p as usize] * arena.mark(x);
        }
        pi[x as usize] = if arena.depth(x) < depth {
            cond[x as usize] * (1.0 + arena.child_mark_sum(x))
        } else {
            cond[x as usize]
        };
    }
    let burn = steps / 10;
    let per = (steps - burn) / batches as u64;
    let mut visits = vec![vec![0u64; n + 1]; batches];
    let mut rng = RngStream::tagged(seed, &[TAG_REVERSE]);
    let mut site = Site::Node(ROOT);
    for t in 0..burn + per * batches as u64 {
        site = match site {
            Site::Node(x) if arena.depth(x) == depth => Site::Node(arena.parent(x).expect("cut below the root")),
            s => step(&mut arena, s, &mut rng)?,
        };
        if t >= burn {
            let b = ((t - burn) / per) as usize;
            let k = match site {
                Site::Node(x) => x as usize,
                Site::RootParent => n,
            };
            visits[b][k] += 1;
        }
    }
    let mut out = Vec::with_capacity(n);
    for y in 0..n {
        let (x, d) = match arena.parent(y as NodeId) {
            Some(p) => (p as usize, arena.depth(y as NodeId)),
            None => (n, 0),
        };
        let diffs: Vec<f64> = visits
            .iter()
            .map(|v| (v[y] as f64 * pi[x] - v[x] as f64 * pi[y]) / (pi[x] + pi[y]) / per as f64)
            .collect();
        let (m, se) = mean_stderr(&diffs);
        let tot_y: u64 = visits.iter().map(|v| v[y]).sum();
        let tot_x: u64 = visits.iter().map(|v| v[x]).sum();
        out.push(EdgeBalance {
            depth: d,
            ratio: tot_y as f64 / tot_x as f64,
            predicted: pi[y] / pi[x],
            z: if se > 0.0 { m / se } else { 0.0 },
        });
    }
    Ok(out)
}

/// Estimated `P(T+ > n)` at a set of horizons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub horizons: Vec<u64>,
    pub survival_estimates: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub replica_count: usize,
    /// `return_time_counts[t]` replicas returned exactly at time `t`,
    /// for `t` up to the largest horizon.
    pub return_time_counts: Vec<u64>,
    /// Replicas still away from the root at the largest horizon.
    pub censored: u64,
}

impl SurvivalCurve {
    fn from_counts(horizons: Vec<u64>, counts: Vec<u64>, censored: u64, replicas: usize) -> Self {
        // survivors beyond t = censored + returns after t
        let mut beyond = vec![0u64; counts.len()];
        let mut acc = censored;
        for t in (0..counts.len()).rev() {
            beyond[t] = acc;
            acc += counts[t];
        }
        let survival_estimates: Vec<f64> = horizons
            .iter()
            .map(|&h| beyond[h as usize] as f64 / replicas as f64)
            .collect();
        let standard_errors = survival_estimates
            .iter()
            .map(|&p| binomial_stderr(p, replicas))
            .collect();
        Self {
            horizons,
            survival_estimates,
            standard_errors,
            replica_count: replicas,
            return_time_counts: counts,
            censored,
        }
    }

    pub fn max_horizon(&self) -> u64 {
        self.return_time_counts.len() as u64 - 1
    }

    /// `P(T+ > n)` for any `n` up to the largest horizon.
    pub fn survival_at(&self, n: u64) -> f64 {
        let after: u64 = self.return_time_counts[(n as usize + 1).min(self.return_time_counts.len())..]
            .iter()
            .sum();
        (after + self.censored) as f64 / self.replica_count as f64
    }

    /// Restriction to new horizons (all at most the largest one).
    pub fn at_horizons(&self, horizons: &[u64]) -> Self {
        Self::from_counts(
            horizons.to_vec(),
            self.return_time_counts.clone(),
            self.censored,
            self.replica_count,
        )
    }

    /// CSV with columns `n,p_hat,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p_hat,stderr\n");
        for ((n, p), s) in self.horizons.iter().zip(&self.survival_estimates).zip(&self.standard_errors) {
            out.push_str(&format!("{n},{p:.9e},{s:.3e}\n"));
        }
        out
    }
}

fn replica_realization(base: &Realization, mode: WalkMode, seed: u64, r: usize) -> Option<Realization> {
    match mode {
        WalkMode::Quenched => None,
        WalkMode::Annealed => Some(Realization::new(
            base.spec_arc().clone(),
            stream_key(&[TAG_ENV, seed, r as u64]),
        )),
    }
}

/// Estimates `P(T+ > n)` for every `n` in `horizons` from `replicas`
/// independent excursions from the root.
pub fn survival_curve(
    real: &Realization,
    mode: WalkMode,
    horizons: &[u64],
    replicas: usize,
    seed: u64,
) -> Result<SurvivalCurve> {
    if replicas < MIN_REPLICAS {
        return Err(Error::Precondition(format!("need at least {MIN_REPLICAS} replicas")));
    }
    if horizons.is_empty() || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("horizons must be nonempty and strictly increasing".into()));
    }
    let h_max = *horizons.last().unwrap();
    if h_max > MAX_HORIZON {
        return Err(Error::Precondition(format!("horizon {h_max} above the cap {MAX_HORIZON}")));
    }
    let chunks = replicas.div_ceil(CHUNK);
    let parts: Vec<Result<(Vec<u64>, u64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; h_max as usize + 1];
            let mut censored = 0;
            let mut arena = TreeArena::new(real.clone());
            for r in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                if let Some(fresh) = replica_realization(real, mode, seed, r) {
                    arena = TreeArena::new(fresh);
                } else if arena.len() > CACHE_LIMIT {
                    arena.clear();
                }
                let mut rng = RngStream::tagged(seed, &[TAG_SURVIVAL, r as u64]);
                match excursion(&mut arena, h_max, &mut rng) {
                    Ok(Some(t)) => counts[t as usize] += 1,
                    Ok(None) => censored += 1,
                    Err(Error::ArenaCapacity { .. }) => {
                        return Err(Error::BudgetExhausted {
                            budget: h_max,
                            partial: Box::default(),
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((counts, censored))
        })
        .collect();
    let mut counts = vec![0u64; h_max as usize + 1];
    let mut censored = 0;
    for part in parts {
        let (c, z) = part?;
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        censored += z;
    }
    Ok(SurvivalCurve::from_counts(horizons.to_vec(), counts, censored, replicas))
}

/// Local-time observations of many quenched trajectories of length `n_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeProfile {
    pub n_max: u64,
    /// `L_{n_max}` at the root, one per replica.
    pub local_times: Vec<u64>,
    /// Even times at which the local probability is reported.
    pub grid: Vec<u64>,
    /// Fraction of replicas at the root at exactly `grid[k]`.
    pub point_estimates: Vec<f64>,
    pub point_stderr: Vec<f64>,
    /// Average of `1{X_m = root}` over even `m` with `|m - grid[k]| <=
    /// window * grid[k]`, then over replicas.
    pub window_estimates: Vec<f64>,
    pub window_stderr: Vec<f64>,
    pub window: f64,
    pub replicas: usize,
}

impl LocalTimeProfile {
    /// `L_{n_max} / sqrt(n_max)`.
    pub fn scaled_local_times(&self, exponent: f64) -> Vec<f64> {
        let s = (self.n_max as f64).powf(exponent);
        self.local_times.iter().map(|&l| l as f64 / s).collect()
    }

    /// CSV with columns `n,p_point,stderr_point,p_window,stderr_window`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p_point,stderr_point,p_window,stderr_window\n");
        for k in 0..self.grid.len() {
            out.push_str(&format!(
                "{},{:.9e},{:.3e},{:.9e},{:.3e}\n",
                self.grid[k],
                self.point_estimates[k],
                self.point_stderr[k],
                self.window_estimates[k],
                self.window_stderr[k]
            ));
        }
        out
    }
}

/// Runs `replicas` quenched trajectories of `n_max` steps on `real`.
///
/// `grid` must contain even times not exceeding `n_max`; `window` is the
/// relative half-width of the averaging window (0 gives point estimates).
pub fn local_time_profile(
    real: &Realization,
    n_max: u64,
    grid: &[u64],
    window: f64,
    replicas: usize,
    seed: u64,
) -> Result<LocalTimeProfile> {
    if grid.iter().any(|&n| n % 2 == 1 || n > n_max) {
        return Err(Error::Precondition("grid times must be even and at most n_max".into()));
    }
    if !(0.0..1.0).contains(&window) {
        return Err(Error::Precondition("window must lie in [0, 1)".into()));
    }
    if replicas == 0 {
        return Err(Error::Precondition("need at least one replica".into()));
    }
    // window of each grid point as an inclusive range of even times
    let ranges: Vec<(u64, u64)> = grid
        .iter()
        .map(|&n| {
            let half = (window * n as f64).floor() as u64;
            let lo = n.saturating_sub(half);
            let hi = (n + half).min(n_max);
            (lo + lo % 2, hi - hi % 2)
        })
        .collect();
    let per_chunk = 16;
    let chunks = replicas.div_ceil(per_chunk);
    type Obs = (u64, Vec<bool>, Vec<f64>);
    let parts: Vec<Result<Vec<Obs>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut arena = TreeArena::new(real.clone());
            let mut out = Vec::new();
            for r in c * per_chunk..((c + 1) * per_chunk).min(replicas) {
                if arena.len() > CACHE_LIMIT {
                    arena.clear();
                }
                let mut rng = RngStream::tagged(seed, &[TAG_LOCAL, r as u64]);
                out.push(one_local_time_run(&mut arena, n_max, grid, &ranges, &mut rng)?);
            }
            Ok(out)
        })
        .collect();
    let mut local_times = Vec::with_capacity(replicas);
    let mut at_point = vec![Vec::with_capacity(replicas); grid.len()];
    let mut in_window = vec![Vec::with_capacity(replicas); grid.len()];
    for part in parts {
        for (l, pts, win) in part? {
            local_times.push(l);
            for k in 0..grid.len() {
                at_point[k].push(if pts[k] { 1.0 } else { 0.0 });
                in_window[k].push(win[k]);
            }
        }
    }
    let mut point_estimates = Vec::new();
    let mut point_stderr = Vec::new();
    let mut window_estimates = Vec::new();
    let mut window_stderr = Vec::new();
    for k in 0..grid.len() {
        let (p, _) = mean_stderr(&at_point[k]);
        point_estimates.push(p);
        point_stderr.push(binomial_stderr(p, replicas));
        let (w, ws) = mean_stderr(&in_window[k]);
        window_estimates.push(w);
        window_stderr.push(ws);
    }
    Ok(LocalTimeProfile {
        n_max,
        local_times,
        grid: grid.to_vec(),
        point_estimates,
        point_stderr,
        window_estimates,
        window_stderr,
        window,
        replicas,
    })
}

fn one_local_time_run(
    arena: &mut TreeArena,
    n_max: u64,
    grid: &[u64],
    ranges: &[(u64, u64)],
    rng: &mut RngStream,
) -> Result<(u64, Vec<bool>, Vec<f64>)> {
    let mut visits = Vec::new();
    let mut site = Site::Node(ROOT);
    if grid.contains(&0) || ranges.iter().any(|r| r.0 == 0) {
        visits.push(0);
    }
    for t in 1..=n_max {
        site = step(arena, site, rng)?;
        if site == Site::Node(ROOT) {
            assert!(t % 2 == 0, "root visited at odd time {t}");
            visits.push(t);
        }
    }
    let local_time = visits.iter().filter(|&&t| t > 0).count() as u64;
    let point = grid.iter().map(|n| visits.binary_search(n).is_ok()).collect();
    let window = ranges
        .iter()
        .map(|&(lo, hi)| {
            let a = visits.partition_point(|&t| t < lo);
            let b = visits.partition_point(|&t| t <= hi);
            (b - a) as f64 / ((hi - lo) / 2 + 1) as f64
        })
        .collect();
    Ok((local_time, point, window))
}

/// The empirical law of `L_n` at the root and the estimate of
/// `P(X_n = root)` (with its binomial error) on one fixed tree.
pub fn local_time_and_local_prob(
    real: &Realization,
    n: u64,
    replicas: usize,
    seed: u64,
) -> Result<(Vec<u64>, f64, f64)> {
    if n % 2 == 1 {
        return Err(Error::Precondition("local probability needs an even n".into()));
    }
    let prof = local_time_profile(real, n, &[n], 0.0, replicas, seed)?;
    Ok((prof.local_times, prof.point_estimates[0], prof.point_stderr[0]))
}

/// Convenience: a realization of `spec` at environment seed `env_seed`.
pub fn realization(spec: &EnvironmentSpec, env_seed: u64) -> Realization {
    Realization::new(Arc::new(spec.clone()), env_seed)
}

/// `TreeArena` with the default capacity for the given realization.
pub fn arena(real: &Realization) -> TreeArena {
    TreeArena::with_capacity(real.clone(), DEFAULT_CAPACITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::calibrate_two_point;

    fn binary() -> Realization {
        realization(&EnvironmentSpec::binary(), 0)
    }

    #[test]
    fn return_times_are_even_and_increasing() {
        let real = realization(&calibrate_two_point(2, 2.0, 1.5).unwrap(), 3);
        let mut a = arena(&real);
        let mut rng = RngStream::new(1, 2);
        let rec = run_return_times(&mut a, 50, 10_000_000, &mut rng).unwrap();
        assert_eq!(rec.return_times.len(), 50);
        assert!(rec.return_times.windows(2).all(|w| w[0] < w[1]));
        assert!(rec.return_times.iter().all(|t| t % 2 == 0));
        assert_eq!(rec.root_local_time, 50);
        assert_eq!(rec.steps, *rec.return_times.last().unwrap());
    }

    #[test]
    fn zero_returns_is_rejected() {
        let mut a = arena(&binary());
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(run_return_times(&mut a, 0, 10, &mut rng), Err(Error::Precondition(_))));
    }

    #[test]
    fn budget_exhaustion_keeps_partial_record() {
        let mut a = arena(&binary());
        let mut rng = RngStream::new(0, 0);
        match run_return_times(&mut a, 1_000_000, 1000, &mut rng) {
            Err(Error::BudgetExhausted { budget, partial }) => {
                assert_eq!(budget, 1000);
                assert_eq!(partial.steps, 1000);
                assert!(partial.return_times.iter().all(|&t| t <= 1000));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_step_excursion_through_root_parent() {
        // P(T+ = 2) >= omega(root, parent) = 1/2 on the binary tree, and the
        // remaining mass of T+ = 2 comes from root -> child -> root (1/2 * 1/2)
        let curve = survival_curve(&binary(), WalkMode::Quenched, &[1, 2], 40_000, 8).unwrap();
        assert_eq!(curve.survival_estimates[0], 1.0);
        let p2 = 1.0 - curve.survival_estimates[1];
        assert!((p2 - 0.75).abs() < 4.0 * binomial_stderr(0.75, 40_000), "{p2}");
    }

    #[test]
    fn survival_at_zero_is_one_and_curve_is_monotone() {
        let real = realization(&calibrate_two_point(2, 2.0, 1.5).unwrap(), 1);
        let c = survival_curve(&real, WalkMode::Quenched, &[0, 2, 10, 100, 1000], 2000, 4).unwrap();
        assert_eq!(c.survival_estimates[0], 1.0);
        assert!(c.survival_estimates.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(c.survival_at(1000), c.survival_estimates[4]);
        assert!(c.to_csv().starts_with("n,p_hat,stderr\n"));
    }

    #[test]
    fn survival_is_deterministic_across_worker_counts() {
        let real = realization(&calibrate_two_point(2, 2.0, 1.5).unwrap(), 2);
        let run = |w| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .unwrap()
                .install(|| survival_curve(&real, WalkMode::Annealed, &[10, 100, 500], 1500, 77).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn preconditions() {
        let real = binary();
        assert!(survival_curve(&real, WalkMode::Quenched, &[10], 10, 0).is_err());
        assert!(survival_curve(&real, WalkMode::Quenched, &[10, 5], 1000, 0).is_err());
        assert!(survival_curve(&real, WalkMode::Quenched, &[MAX_HORIZON + 1], 1000, 0).is_err());
        assert!(local_time_and_local_prob(&real, 11, 10, 0).is_err());
    }

    #[test]
    fn local_prob_at_time_zero_is_one() {
        let (lt, p, se) = local_time_and_local_prob(&binary(), 0, 20, 0).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(se, 0.0);
        assert!(lt.iter().all(|&l| l == 0));
    }

    #[test]
    fn window_and_point_estimates_agree_on_average() {
        let prof = local_time_profile(&binary(), 400, &[200, 400], 0.1, 4000, 5).unwrap();
        for k in 0..2 {
            let d = (prof.point_estimates[k] - prof.window_estimates[k]).abs();
            assert!(d < 4.0 * prof.point_stderr[k], "{d}");
        }
        assert_eq!(prof.local_times.len(), 4000);
    }
}
