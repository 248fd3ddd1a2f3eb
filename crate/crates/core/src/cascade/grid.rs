//! Tail-resolved solver for the same fixed points as the pool.
//!
//! The law is stored as `K` quantile bins whose probability edges are
//! evenly spaced in log-odds, from `sigma(z_min)` to `sigma(z_max)`, so
//! bins reach survival probabilities far below `1 / pool size`. One
//! iteration draws `N` weighted samples of `sum_i A_i g(Y_i)`: each child
//! bin is picked from the mixture `q_k = m_k / 2 + 1 / (2K)` and carries
//! the importance factor `m_k / q_k`. The weighted sample is then folded
//! back onto the same probability edges, bin values being conditional
//! means.
//!
//! The scale of the law is the slow direction of the iteration. After every
//! step it is therefore fixed directly: `M_inf` laws are rescaled to mean 1,
//! and `B_eps` laws by the unique `s` with `E g(s B) = s E B`, the mean
//! balance `E B = E sum_i A_i g(B_i)` that any fixed point satisfies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pool::Target;
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::stats::{batch_means_stderr, RngStream};

const TAG_GRID: u64 = 0x4752_4944;
const BLOCK: usize = 8192;

/// Resolution of a [`GridLaw`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub bins: usize,
    pub z_min: f64,
    pub z_max: f64,
    /// Weighted draws per iteration.
    pub draws: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bins: 3000,
            z_min: -12.0,
            z_max: 32.0,
            draws: 200_000,
        }
    }
}

#[inline]
fn sigmoid_upper(z: f64) -> f64 {
    // P(logistic > z), accurate deep in the upper tail
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// A law on `[0, inf)` held as quantile bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLaw {
    pub target: Target,
    pub config: GridConfig,
    /// Survival probability at the lower edge of each bin; `surv[0] = 1`.
    pub surv: Vec<f64>,
    /// Probability of each bin.
    pub mass: Vec<f64>,
    /// Conditional mean of each bin, non-decreasing.
    pub values: Vec<f64>,
    pub iterations_done: usize,
    pub seed: u64,
}

impl GridLaw {
    /// Constant law at `x0`.
    pub fn constant(target: Target, config: GridConfig, x0: f64, seed: u64) -> Self {
        let k = config.bins;
        let mut surv = Vec::with_capacity(k + 1);
        surv.push(1.0);
        for j in 1..k {
            let z = config.z_min + (config.z_max - config.z_min) * j as f64 / k as f64;
            surv.push(sigmoid_upper(z));
        }
        surv.push(0.0);
        let mass = (0..k).map(|j| surv[j] - surv[j + 1]).collect();
        Self {
            target,
            config,
            surv,
            mass,
            values: vec![x0; k],
            iterations_done: 0,
            seed,
        }
    }

    /// Starts from a law of another target rescaled by `scale`.
    pub fn rescaled_as(&self, target: Target, scale: f64) -> Self {
        let mut out = self.clone();
        out.target = target;
        out.values.iter_mut().for_each(|x| *x *= scale);
        out
    }

    pub fn bins(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.mass.iter().zip(&self.values).map(|(m, x)| m * x).sum()
    }

    /// `E f(X)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.mass.iter().zip(&self.values).map(|(m, x)| m * f(*x)).sum()
    }

    /// Survival function at the upper edge of each bin paired with the bin
    /// value: points `(x_k, P(X > x_k))` with `P` taken at the bin midpoint
    /// in probability.
    pub fn tail_points(&self) -> Vec<(f64, f64)> {
        (0..self.bins())
            .map(|k| (self.values[k], 0.5 * (self.surv[k] + self.surv[k + 1])))
            .collect()
    }

    fn sampler(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.bins() as f64;
        let mut cum = Vec::with_capacity(self.bins());
        let mut acc = 0.0;
        for m in &self.mass {
            acc += m;
            cum.push(acc);
        }
        let ratio = self.mass.iter().map(|m| m / (0.5 * m + 0.5 / k)).collect();
        (cum, ratio)
    }

    /// One weighted resampling step followed by the scale fix.
    pub fn iterate(&mut self, spec: &EnvironmentSpec) -> Result<()> {
        let k = self.bins();
        let (cum, ratio) = self.sampler();
        let total = *cum.last().unwrap();
        let t = self.iterations_done as u64;
        let seed = self.seed;
        let target = self.target;
        let values = &self.values;
        let n = self.config.draws;
        let mut samples: Vec<(f64, f64)> = vec![(0.0, 0.0); n];
        samples.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
            let mut rng = RngStream::tagged(seed, &[TAG_GRID, t, b as u64]);
            for slot in chunk.iter_mut() {
                let atom = spec.atom_for(rng.uniform());
                let (mut v, mut w) = (0.0, 1.0);
                for &a in &atom.marks {
                    let u = rng.uniform();
                    let j = if u < 0.5 {
                        ((2.0 * u * k as f64) as usize).min(k - 1)
                    } else {
                        cum.partition_point(|&c| c < (2.0 * u - 1.0) * total).min(k - 1)
                    };
                    v += a * target.g(values[j]);
                    w *= ratio[j];
                }
                *slot = (v, w);
            }
        });
        samples.par_sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let w_total: f64 = samples.iter().map(|s| s.1).sum();
        if !(w_total > 0.0) {
            return Err(Error::DegenerateTail("all importance weights vanished".into()));
        }
        // fold the weighted sample, largest first, onto the survival edges
        let mut new_values = vec![0.0; k];
        let mut bin = k - 1;
        let mut filled = 0.0; // probability assigned to the current bin
        let mut acc = 0.0;
        for &(x, w) in &samples {
            let mut p = w / w_total;
            while p > 0.0 {
                let room = self.mass[bin] - filled;
                if p < room || bin == 0 {
                    acc += p * x;
                    filled += p;
                    p = 0.0;
                } else {
                    acc += room * x;
                    new_values[bin] = acc / self.mass[bin];
                    p -= room;
                    bin -= 1;
                    filled = 0.0;
                    acc = 0.0;
                }
            }
        }
        if filled > 0.0 {
            new_values[bin] = acc / filled;
        }
        for j in (0..bin).rev() {
            new_values[j] = new_values[j + 1];
        }
        self.values = new_values;
        self.rescale();
        self.iterations_done += 1;
        Ok(())
    }

    fn rescale(&mut self) {
        match self.target {
            Target::MInf => {
                let m = self.mean();
                if m > 0.0 {
                    self.values.iter_mut().for_each(|x| *x /= m);
                }
            }
            Target::BEps(_) => {
                let s = self.balance_scale();
                self.values.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Unique `s > 0` with `E g(s X) = s E X`.
    pub fn balance_scale(&self) -> f64 {
        let mean = self.mean();
        if mean <= 0.0 {
            return 1.0;
        }
        let phi = |s: f64| self.expect(|x| self.target.g(s * x)) - s * mean;
        let (mut lo, mut hi) = (0.0, 1.0);
        while phi(hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return 1.0;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Summary of a converged grid run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub law: GridLaw,
    /// Mean after each iteration (before averaging).
    pub means: Vec<f64>,
    /// Mean averaged over the sampling phase, and its batch-means error.
    pub mean: f64,
    pub mean_stderr: f64,
    /// Bin values averaged over the sampling phase.
    pub averaged_values: Vec<f64>,
}

/// Iterates `burn_in` times, then averages over `sampling` more.
pub fn run_grid(
    spec: &EnvironmentSpec,
    start: GridLaw,
    burn_in: usize,
    sampling: usize,
) -> Result<GridRun> {
    let mut law = start;
    let mut means = Vec::with_capacity(burn_in + sampling);
    let mut sum_values = vec![0.0; law.bins()];
    for it in 0..burn_in + sampling {
        law.iterate(spec)?;
        means.push(law.mean());
        if it >= burn_in {
            sum_values.iter_mut().zip(&law.values).for_each(|(s, v)| *s += v);
        }
    }
    let tail = &means[burn_in..];
    let (mean, mean_stderr) = if tail.len() >= 10 {
        batch_means_stderr(tail, 5)
    } else {
        crate::stats::mean_stderr(tail)
    };
    let averaged_values = sum_values.iter().map(|s| s / sampling.max(1) as f64).collect();
    Ok(GridRun {
        law,
        means,
        mean,
        mean_stderr,
        averaged_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_and_masses() {
        let g = GridLaw::constant(Target::MInf, GridConfig::default(), 1.0, 0);
        assert_eq!(g.surv[0], 1.0);
        assert_eq!(*g.surv.last().unwrap(), 0.0);
        assert!((g.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.surv[g.bins() - 1] < 1e-13);
        assert!(g.mass.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn binary_is_a_fixed_point() {
        let spec = EnvironmentSpec::binary();
        let cfg = GridConfig {
            bins: 200,
            draws: 20_000,
            ..GridConfig::default()
        };
        let mut g = GridLaw::constant(Target::BEps(1e-4), cfg, 0.5, 1);
        for _ in 0..5 {
            g.iterate(&spec).unwrap();
        }
        assert!(g.values.iter().all(|&x| (x - 0.01).abs() < 1e-12), "{:?}", &g.values[..3]);
    }

    #[test]
    fn balance_scale_solves_mean_balance() {
        let cfg = GridConfig {
            bins: 100,
            ..GridConfig::default()
        };
        let mut g = GridLaw::constant(Target::BEps(0.01), cfg, 1.0, 0);
        g.values = (0..100).map(|i| 0.01 * (1.0 + i as f64)).collect();
        let s = g.balance_scale();
        let lhs = g.expect(|x| g.target.g(s * x));
        assert!((lhs - s * g.mean()).abs() < 1e-12);
    }
}
