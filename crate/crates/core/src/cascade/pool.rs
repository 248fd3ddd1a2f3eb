//! Population dynamics for the annealed fixed points
//!
//! ```text
//! B  =(law)  sum_i A_i (eps + B_i) / (1 + B_i)
//! M  =(law)  sum_i A_i M_i
//! ```
//!
//! New sample `j` of step `t` is drawn from the stream
//! `(seed, [t, j / BLOCK])`, so a step is a pure function of the pool, the
//! seed and the step index, whatever the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::stats::{mean_stderr, RngStream};

/// Default pool size.
pub const DEFAULT_POOL_SIZE: usize = 200_000;
/// Consecutive small changes required by [`run_to_fixpoint`].
/// Steps before the tail of a pool has filled in.
pub const MIN_BURN_IN: usize = 100;
pub const CONSECUTIVE: usize = 5;

const BLOCK: usize = 4096;
const TAG_STEP: u64 = 0x504F_4F4C;

/// Which fixed point a pool approximates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    BEps(f64),
    MInf,
}

impl Target {
    /// The per-child map `g`.
    #[inline]
    pub fn g(&self, y: f64) -> f64 {
        match *self {
            Target::BEps(eps) => (eps + y) / (1.0 + y),
            Target::MInf => y,
        }
    }

    /// Lipschitz constant of `g` at `y`.
    #[inline]
    pub fn g_prime(&self, y: f64) -> f64 {
        match *self {
            Target::BEps(eps) => (1.0 - eps) / ((1.0 + y) * (1.0 + y)),
            Target::MInf => 1.0,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match *self {
            Target::BEps(eps) => Some(eps),
            Target::MInf => None,
        }
    }

    fn initial(&self) -> f64 {
        match *self {
            Target::BEps(eps) => eps,
            Target::MInf => 1.0,
        }
    }
}

/// A fixed-size sample approximating the law of `B_eps` or `M_inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationPool {
    pub samples: Vec<f64>,
    pub target: Target,
    pub iterations_done: usize,
    pub seed: u64,
    /// Mean of the last step before renormalization (`M_inf` pools are
    /// rescaled to mean 1 after every step).
    pub last_raw_mean: f64,
    /// Largest `sum_i A_i` drawn by the last step.
    pub last_max_mark_sum: f64,
}

impl PopulationPool {
    /// Pool with every sample at the canonical start (`eps` or 1).
    pub fn new(target: Target, size: usize, seed: u64) -> Self {
        Self::from_samples(target, vec![target.initial(); size], seed)
    }

    pub fn from_samples(target: Target, samples: Vec<f64>, seed: u64) -> Self {
        Self {
            samples,
            target,
            iterations_done: 0,
            seed,
            last_raw_mean: f64::NAN,
            last_max_mark_sum: f64::NAN,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean_stderr(&self.samples).0
    }

    pub fn mean_stderr(&self) -> (f64, f64) {
        mean_stderr(&self.samples)
    }

    /// Samples with exact zeros (extinct trees) removed.
    pub fn surviving(&self) -> Vec<f64> {
        self.samples.iter().copied().filter(|&x| x > 0.0).collect()
    }
}

/// Draws one new sample; returns `(value, sum of marks)`.
#[inline]
fn draw(spec: &EnvironmentSpec, target: Target, old: &[f64], rng: &mut RngStream) -> (f64, f64) {
    let atom = spec.atom_for(rng.uniform());
    let mut v = 0.0;
    for &a in &atom.marks {
        let j = rng.below(old.len());
        v += a * target.g(old[j]);
    }
    (v, atom.mark_sum())
}

/// One population step: every new sample is `sum_i A_i g(old_{J_i})` with
/// fresh `(nu, A)` and uniform indices `J_i`.
pub fn population_step(pool: &mut PopulationPool, spec: &EnvironmentSpec) {
    let t = pool.iterations_done as u64;
    let seed = pool.seed;
    let target = pool.target;
    let old = &pool.samples;
    let mut next = vec![0.0; old.len()];
    let max_sums: Vec<f64> = next
        .par_chunks_mut(BLOCK)
        .enumerate()
        .map(|(b, chunk)| {
            let mut rng = RngStream::tagged(seed, &[TAG_STEP, t, b as u64]);
            let mut max_s: f64 = 0.0;
            for slot in chunk.iter_mut() {
                let (v, s) = draw(spec, target, old, &mut rng);
                *slot = v;
                max_s = max_s.max(s);
            }
            max_s
        })
        .collect();
    pool.last_max_mark_sum = max_sums.into_iter().fold(0.0, f64::max);
    pool.last_raw_mean = mean_stderr(&next).0;
    if target == Target::MInf && pool.last_raw_mean > 0.0 {
        let m = pool.last_raw_mean;
        next.iter_mut().for_each(|x| *x /= m);
    }
    pool.samples = next;
    pool.iterations_done += 1;
}

/// `1 / (1 - mean g'(B))`: the number of steps over which a `B_eps` pool
/// forgets a perturbation of its scale. `M_inf` pools are renormalized
/// every step, which removes that mode; 1 is returned.
pub fn relaxation_time(pool: &PopulationPool) -> f64 {
    match pool.target {
        Target::MInf => 1.0,
        target => {
            let rho = pool.samples.iter().map(|&y| target.g_prime(y)).sum::<f64>() / pool.len() as f64;
            1.0 / (1.0 - rho).max(1e-12)
        }
    }
}

/// A converged pool together with its mean trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixpointRun {
    pub pool: PopulationPool,
    /// Tracked functional per step with its pool standard deviation: the
    /// mean for `B_eps`, the mean of `ln(1 + M)` for `M_inf`.
    pub trace: Vec<(f64, f64)>,
    pub burn_in: usize,
}

impl FixpointRun {
    /// CSV with columns `iteration,mean,sd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean,sd\n");
        for (i, (m, sd)) in self.trace.iter().enumerate() {
            out.push_str(&format!("{},{:.12e},{:.6e}\n", i + 1, m, sd));
        }
        out
    }
}

fn tracked(pool: &PopulationPool) -> (f64, f64) {
    let (m, se) = match pool.target {
        Target::BEps(_) => pool.mean_stderr(),
        Target::MInf => mean_stderr(&pool.samples.iter().map(|x| x.ln_1p()).collect::<Vec<_>>()),
    };
    (m, se * (pool.len() as f64).sqrt())
}

/// Iterates until the tracked mean changes by at most `tol` (relative), or
/// by no more than three standard errors of a difference of two pool means,
/// on [`CONSECUTIVE`] consecutive steps, after a burn-in of five relaxation
/// times `1 / (1 - mean g')` estimated from the pool itself.
pub fn run_to_fixpoint(
    spec: &EnvironmentSpec,
    target: Target,
    pool_size: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<FixpointRun> {
    let mut pool = PopulationPool::new(target, pool_size, seed);
    let mut trace = Vec::new();
    let mut streak = 0;
    let mut prev = tracked(&pool).0;
    let root_p = (pool_size as f64).sqrt();
    let mut burn_in = MIN_BURN_IN;
    for it in 1..=max_iter {
        population_step(&mut pool, spec);
        let (m, sd) = tracked(&pool);
        trace.push((m, sd));
        if let Target::BEps(_) = target {
            if it % 10 == 0 {
                // the relaxation time shrinks as the pool grows from eps
                burn_in = MIN_BURN_IN.max((5.0 * relaxation_time(&pool)).ceil().min(1e9) as usize);
            }
        }
        let noise = 3.0 * std::f64::consts::SQRT_2 * sd / root_p;
        streak = if (m - prev).abs() <= (tol * m.abs()).max(noise) { streak + 1 } else { 0 };
        prev = m;
        if streak >= CONSECUTIVE && it >= burn_in {
            return Ok(FixpointRun { pool, trace, burn_in });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last_means: trace.iter().rev().take(CONSECUTIVE).rev().map(|t| t.0).collect(),
    })
}

/// Paired-coupling diagnostic for one step from two pools `B`, `B~`
/// (paired by index).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingStep {
    /// `mean|g(B) - g(B~)| / mean|B - B~|`: the expected one-step coupling
    /// ratio, exact over the resampling because `E sum A_i = 1`.
    pub expected_ratio: f64,
    /// Realized `mean|B' - B~'| / mean|B - B~|` with common draws.
    pub realized_ratio: f64,
    pub bound: f64,
}

/// Runs two coupled pools from different starts with common randomness
/// and records the contraction ratio of every step.
pub fn coupling_diagnostic(
    spec: &EnvironmentSpec,
    eps: f64,
    pool_size: usize,
    steps: usize,
    seed: u64,
) -> Vec<CouplingStep> {
    let target = Target::BEps(eps);
    let mut a = PopulationPool::new(target, pool_size, seed);
    let start_high = spec.atoms().iter().map(|x| x.mark_sum()).fold(0.0, f64::max);
    let mut b = PopulationPool::from_samples(target, vec![start_high; pool_size], seed);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let d0: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).sum();
        if d0 == 0.0 {
            break;
        }
        let dg: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (target.g(*x) - target.g(*y)).abs()).sum();
        population_step(&mut a, spec);
        population_step(&mut b, spec);
        let d1: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).sum();
        out.push(CouplingStep {
            expected_ratio: dg / d0,
            realized_ratio: d1 / d0,
            bound: 1.0 - eps,
        });
    }
    out
}
