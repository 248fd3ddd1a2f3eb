//! Exact transfer-matrix oracle for the depth of the walk.
//!
//! When `sum_i A_i` equals a constant `S` at every vertex, the depth of the
//! walk is a birth-death chain on `{-1, 0, 1, ...}` (state `-1` is the
//! vertex above the root): from `d >= 0` it moves up with probability
//! `1/(1+S)` and down with probability `S/(1+S)`, and from `-1` it moves to
//! `0`. Iterating the distribution gives `P(T+ > n)` and `P(X_n = root)`
//! exactly.

use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthChain {
    /// Probability of moving towards the root.
    up: f64,
}

impl DepthChain {
    pub fn new(mark_sum: f64) -> Self {
        Self {
            up: 1.0 / (1.0 + mark_sum),
        }
    }

    /// Requires an almost surely constant mark sum.
    pub fn from_spec(spec: &EnvironmentSpec) -> Result<Self> {
        if !spec.has_constant_mark_sum() {
            return Err(Error::Precondition("mark sum is not constant; depth is not Markov".into()));
        }
        if spec.atoms().iter().any(|a| a.nu == 0) {
            return Err(Error::Precondition("leaves break depth homogeneity".into()));
        }
        Ok(Self::new(spec.atoms()[0].mark_sum()))
    }

    /// Index `d + 1` holds the mass at depth `d`.
    fn evolve(&self, dist: &[f64], next: &mut Vec<f64>, kill_root: bool) {
        let len = dist.len() + 1;
        next.clear();
        next.resize(len, 0.0);
        let down = 1.0 - self.up;
        // from -1 to 0
        next[1] += dist[0];
        for (i, &m) in dist.iter().enumerate().skip(1) {
            if m == 0.0 {
                continue;
            }
            next[i - 1] += m * self.up;
            next[i + 1] += m * down;
        }
        if kill_root {
            next[1] = 0.0;
        }
    }

    /// `P(T+ > n)` for `n = 0..=n_max`.
    pub fn survival(&self, n_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(1.0);
        let mut dist = vec![0.0, 1.0];
        let mut next = Vec::new();
        for _ in 0..n_max {
            self.evolve(&dist, &mut next, true);
            std::mem::swap(&mut dist, &mut next);
            out.push(dist.iter().sum());
        }
        out
    }

    /// `P(X_n = root)` for `n = 0..=n_max`.
    pub fn return_probability(&self, n_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_max + 1);
        out.push(1.0);
        let mut dist = vec![0.0, 1.0];
        let mut next = Vec::new();
        for _ in 0..n_max {
            self.evolve(&dist, &mut next, false);
            std::mem::swap(&mut dist, &mut next);
            out.push(dist[1]);
        }
        out
    }

    /// `P(T+ = n)` for `n = 0..=n_max`.
    pub fn first_return_law(&self, n_max: usize) -> Vec<f64> {
        let s = self.survival(n_max);
        let mut out = vec![0.0; n_max + 1];
        for n in 1..=n_max {
            out[n] = s[n - 1] - s[n];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_times_by_hand() {
        let c = DepthChain::new(1.0);
        let s = c.survival(4);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 1.0);
        // returns at 2: via the parent (1/2) or a child (1/2 * 1/2)
        assert!((s[2] - 0.25).abs() < 1e-15);
        assert!((s[3] - 0.25).abs() < 1e-15);
        let p = c.return_probability(4);
        assert_eq!(p[1], 0.0);
        assert!((p[2] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn binary_survival_asymptotics() {
        // depth is |SRW| shifted; n^{1/2} P(T+ > n) -> (1/2) sqrt(2/pi)
        let c = DepthChain::new(1.0);
        let s = c.survival(20_000);
        let target = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
        let r = (20_000f64).sqrt() * s[20_000] / target;
        assert!((r - 1.0).abs() < 5e-3, "{r}");
    }

    #[test]
    fn binary_return_probability_asymptotics() {
        // P(X_n = root) ~ sqrt(8/pi) n^{-1/2} for even n
        let c = DepthChain::new(1.0);
        let p = c.return_probability(20_000);
        let r = p[20_000] * (20_000f64).sqrt() / (8.0 / std::f64::consts::PI).sqrt();
        assert!((r - 1.0).abs() < 5e-3, "{r}");
        assert!(p.iter().skip(1).step_by(2).all(|&x| x == 0.0));
    }

    #[test]
    fn mass_is_conserved_without_killing() {
        let c = DepthChain::new(0.7);
        let mut dist = vec![0.0, 1.0];
        let mut next = Vec::new();
        for _ in 0..300 {
            c.evolve(&dist, &mut next, false);
            std::mem::swap(&mut dist, &mut next);
        }
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_random_mark_sum() {
        let spec = crate::env::calibrate_two_point(2, 2.0, 1.5).unwrap();
        assert!(DepthChain::from_spec(&spec).is_err());
        assert!(DepthChain::from_spec(&EnvironmentSpec::binary()).is_ok());
    }
}
