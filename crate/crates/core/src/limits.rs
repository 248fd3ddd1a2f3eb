//! Positive stable laws, the limit constants `c1..c5`, the LIL rate
//! functions and the distributional comparisons for the local time and the
//! local probability at the root.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::arena::{Realization, Site, TreeArena, ROOT};
use crate::cascade::c4_from_tail;
use crate::env::{EnvironmentSpec, Regime, DEFAULT_PROBE_BOUND};
use crate::error::{Error, Result};
use crate::stats::{gamma, ks_distance, ks_distance_to_cdf, loglog_fit, FitResult, RngStream};
use crate::walk::LocalTimeProfile;

const TAG_STABLE: u64 = 0x57AB;
const STABLE_BLOCK: usize = 65_536;
const TAG_LIL: u64 = 0x4C49_4C;
const LIL_CACHE: usize = 1 << 22;
/// Reference draws used for the stable side of a KS comparison.
pub const REFERENCE_DRAWS: usize = 1_000_000;

/// Positive `alpha`-stable law with `E exp(-lambda S) = exp(-lambda^alpha)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
    alpha: f64,
}

impl StableSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Precondition(format!("stable index {alpha} outside (0, 1)")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Kanter's representation: for `U` uniform on `(0, pi)` and `W`
    /// standard exponential,
    /// `S = sin(a U) / sin(U)^{1/a} * (sin((1 - a) U) / W)^{(1 - a)/a}`.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let a = self.alpha;
        let u = PI * rng.open_uniform();
        let w = rng.exp1();
        let s = (a * u).sin() / u.sin().powf(1.0 / a) * ((((1.0 - a) * u).sin()) / w).powf((1.0 - a) / a);
        s.max(f64::MIN_POSITIVE)
    }

    pub fn laplace(&self, lambda: f64) -> f64 {
        (-lambda.powf(self.alpha)).exp()
    }

    /// `E S^{-p} = Gamma(1 + p/alpha) / Gamma(1 + p)` for `p > -alpha`.
    pub fn negative_moment(&self, p: f64) -> f64 {
        gamma(1.0 + p / self.alpha) / gamma(1.0 + p)
    }
}

/// `count` draws, reproducible for a given seed whatever the worker count.
pub fn sample_stable(alpha: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    let spec = StableSpec::new(alpha)?;
    let mut out = vec![0.0; count];
    out.par_chunks_mut(STABLE_BLOCK).enumerate().for_each(|(b, chunk)| {
        let mut rng = RngStream::tagged(seed, &[TAG_STABLE, b as u64]);
        chunk.iter_mut().for_each(|x| *x = spec.sample(&mut rng));
    });
    Ok(out)
}

/// Empirical `E exp(-lambda S)` with its standard error.
pub fn empirical_laplace(samples: &[f64], lambda: f64) -> (f64, f64) {
    let v: Vec<f64> = samples.iter().map(|s| (-lambda * s).exp()).collect();
    crate::stats::mean_stderr(&v)
}

/// The LIL normalization of the local time at the root.
pub fn f_kappa(regime: Regime, kappa: f64, n: f64) -> f64 {
    let ll = n.ln().ln();
    match regime {
        Regime::KappaLt2 => n.powf(1.0 / kappa) * ll.powf(1.0 - 1.0 / kappa),
        Regime::KappaEq2 => (n * n.ln() * ll).sqrt(),
        Regime::KappaGt2 => (n * ll).sqrt(),
    }
}

/// Predicted constants for one tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitPrediction {
    pub kappa: f64,
    pub regime: Regime,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub c5: Option<f64>,
    pub c_m: Option<f64>,
    pub omega_root: f64,
    pub m_inf: f64,
}

impl LimitPrediction {
    /// `1 / (omega(root, parent) M_inf)`.
    pub fn quenched_prefactor(&self) -> f64 {
        1.0 / (self.omega_root * self.m_inf)
    }

    /// Index of the local time: `max(1/kappa, 1/2)`.
    pub fn alpha(&self) -> f64 {
        self.regime.index(self.kappa)
    }

    /// `P(T+ > n) ~ survival_prefactor * r(n)`, with `r` from
    /// [`Self::survival_rate`].
    pub fn survival_prefactor(&self) -> f64 {
        let c = match self.regime {
            Regime::KappaLt2 => self.c1,
            Regime::KappaEq2 => self.c2,
            Regime::KappaGt2 => self.c3,
        };
        c.unwrap_or(f64::NAN) / self.quenched_prefactor()
    }

    pub fn survival_rate(&self, n: f64) -> f64 {
        match self.regime {
            Regime::KappaLt2 => n.powf(-1.0 / self.kappa),
            Regime::KappaEq2 => (n * n.ln()).powf(-0.5),
            Regime::KappaGt2 => n.powf(-0.5),
        }
    }

    /// Normalization of `L_n`.
    pub fn local_time_scale(&self, n: f64) -> f64 {
        match self.regime {
            Regime::KappaLt2 => n.powf(1.0 / self.kappa),
            Regime::KappaEq2 => (n * n.ln()).sqrt(),
            Regime::KappaGt2 => n.sqrt(),
        }
    }

    /// `K` with `L_n / scale(n) -> K Z`, where `Z = S_{1/kappa}^{-1/kappa}`
    /// below 2 and `|N|` otherwise.
    pub fn local_time_factor(&self) -> f64 {
        let q = self.quenched_prefactor();
        match self.regime {
            Regime::KappaLt2 => q / (self.c1.unwrap_or(f64::NAN) * gamma(1.0 - 1.0 / self.kappa)),
            Regime::KappaEq2 => q * (2.0 / PI).sqrt() / self.c2.unwrap_or(f64::NAN),
            Regime::KappaGt2 => q * (2.0 / PI).sqrt() / self.c3.unwrap_or(f64::NAN),
        }
    }

    /// `P(X_n = root) ~ local_prob_prefactor * n^{slope}` (times
    /// `sqrt(log n)` at `kappa = 2`), even `n`.
    pub fn local_prob_prefactor(&self) -> f64 {
        let q = self.quenched_prefactor();
        match self.regime {
            Regime::KappaLt2 => {
                let k = self.kappa;
                let moment = StableSpec { alpha: 1.0 / k }.negative_moment(1.0 / k);
                q * 2.0 * moment / (self.c1.unwrap_or(f64::NAN) * k * gamma(1.0 - 1.0 / k))
            }
            Regime::KappaEq2 => q * 2.0 / (PI * self.c2.unwrap_or(f64::NAN)),
            Regime::KappaGt2 => q * 2.0 / (PI * self.c3.unwrap_or(f64::NAN)),
        }
    }

    pub fn local_prob_slope(&self) -> f64 {
        match self.regime {
            Regime::KappaLt2 => 1.0 / self.kappa - 1.0,
            _ => -0.5,
        }
    }

    pub fn local_prob(&self, n: f64) -> f64 {
        let log = if self.regime == Regime::KappaEq2 { n.ln().sqrt() } else { 1.0 };
        self.local_prob_prefactor() * n.powf(self.local_prob_slope()) * log
    }

    pub fn f_kappa(&self, n: f64) -> f64 {
        f_kappa(self.regime, self.kappa, n)
    }

    /// Replaces `c4` (and the `c1` built from it) below `kappa = 2`, e.g.
    /// by the measured prefactor of `E B_eps / eps^{1/kappa}` near
    /// `eps = 1/n`.
    pub fn with_c4(mut self, c4: f64) -> Self {
        if self.regime == Regime::KappaLt2 {
            self.c4 = Some(c4);
            self.c1 = Some(c1_from_c4(c4, self.kappa));
        }
        self
    }
}

/// `c1 = 2^{1/kappa} c4 / Gamma(1 - 1/kappa)`.
pub fn c1_from_c4(c4: f64, kappa: f64) -> f64 {
    2f64.powf(1.0 / kappa) * c4 / gamma(1.0 - 1.0 / kappa)
}

/// Constants for `spec` on a tree with the given `omega(root, parent)` and
/// `M_inf`. `c_m` is required when `kappa <= 2`.
pub fn predict_limits(
    spec: &EnvironmentSpec,
    c_m: Option<f64>,
    m_inf: f64,
    omega_root: f64,
) -> Result<LimitPrediction> {
    let kappa = spec.kappa(DEFAULT_PROBE_BOUND)?;
    let regime = Regime::of(kappa)?;
    if !(m_inf > 0.0 && omega_root > 0.0) {
        return Err(Error::Precondition("M_inf and omega must be positive".into()));
    }
    let mut p = LimitPrediction {
        kappa,
        regime,
        c1: None,
        c2: None,
        c3: None,
        c4: None,
        c5: None,
        c_m,
        omega_root,
        m_inf,
    };
    match regime {
        Regime::KappaGt2 => {
            let c5 = spec.c5().ok_or_else(|| Error::Precondition("c5 undefined".into()))?;
            p.c5 = Some(c5);
            p.c3 = Some((2.0 / PI).sqrt() * c5);
        }
        Regime::KappaLt2 => {
            let c_m = c_m.ok_or(Error::MissingTailConstant)?;
            let c4 = c4_from_tail(c_m, kappa);
            p.c4 = Some(c4);
            p.c1 = Some(c1_from_c4(c4, kappa));
        }
        Regime::KappaEq2 => {
            let c_m = c_m.ok_or(Error::MissingTailConstant)?;
            p.c2 = Some((PI * c_m).powf(-0.5));
        }
    }
    Ok(p)
}

/// KS comparison of the rescaled local time with its limit law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeReport {
    pub regime: Regime,
    pub n: u64,
    pub replicas: usize,
    /// `L_n / scale` is compared with `factor * Z`.
    pub scale: f64,
    pub factor: f64,
    pub ks: f64,
    /// `None` at `kappa = 2`, where the slowly varying factor makes a
    /// pass/fail verdict meaningless at desk scale.
    pub tolerance: Option<f64>,
    /// `(x, empirical cdf, predicted cdf)` on a grid of quantiles.
    pub plot: Vec<(f64, f64, f64)>,
}

impl LocalTimeReport {
    pub fn passes(&self) -> Option<bool> {
        self.tolerance.map(|t| self.ks <= t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,empirical_cdf,predicted_cdf\n");
        for (x, e, p) in &self.plot {
            out.push_str(&format!("{x:.6},{e:.6},{p:.6}\n"));
        }
        out
    }
}

/// Default KS tolerances: exact-oracle case and heavy-tail case.
pub const KS_TOL_GAUSSIAN: f64 = 0.03;
pub const KS_TOL_STABLE: f64 = 0.08;

/// Compares `L_n / scale(n)` with the predicted limit. The stable case
/// draws [`REFERENCE_DRAWS`] of `S_{1/kappa}^{-1/kappa}` from `seed`.
pub fn corollary12_check(local_times: &[u64], n: u64, pred: &LimitPrediction, seed: u64) -> Result<LocalTimeReport> {
    if local_times.is_empty() {
        return Err(Error::Precondition("no local times".into()));
    }
    let scale = pred.local_time_scale(n as f64);
    let factor = pred.local_time_factor();
    if !factor.is_finite() {
        return Err(Error::MissingTailConstant);
    }
    let x: Vec<f64> = local_times.iter().map(|&l| l as f64 / scale).collect();
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let emp = |z: f64| sorted.partition_point(|&v| v <= z) as f64 / sorted.len() as f64;
    let qs: Vec<f64> = (1..50).map(|i| crate::stats::quantile_sorted(&sorted, i as f64 / 50.0)).collect();
    let (ks, plot, tolerance) = match pred.regime {
        Regime::KappaLt2 => {
            let alpha = 1.0 / pred.kappa;
            let mut z: Vec<f64> = sample_stable(alpha, REFERENCE_DRAWS, seed)?
                .into_iter()
                .map(|s| factor * s.powf(-alpha))
                .collect();
            z.sort_by(f64::total_cmp);
            let pc = |v: f64| z.partition_point(|&w| w <= v) as f64 / z.len() as f64;
            let plot = qs.iter().map(|&q| (q, emp(q), pc(q))).collect();
            (ks_distance(&x, &z), plot, Some(KS_TOL_STABLE))
        }
        regime => {
            let cdf = |v: f64| if v <= 0.0 { 0.0 } else { erf(v / (factor * 2f64.sqrt())) };
            let plot = qs.iter().map(|&q| (q, emp(q), cdf(q))).collect();
            let tol = (regime == Regime::KappaGt2).then_some(KS_TOL_GAUSSIAN);
            (ks_distance_to_cdf(&x, cdf), plot, tol)
        }
    };
    Ok(LocalTimeReport {
        regime: pred.regime,
        n,
        replicas: local_times.len(),
        scale,
        factor,
        ks,
        tolerance,
        plot,
    })
}

/// Slope, prefactor and monotonicity of the even-time local probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalProbReport {
    pub fit: FitResult,
    pub expected_slope: f64,
    /// Inverse-variance weighted mean of `p_n / (n^{slope} log-factor)`
    /// with the slope fixed at the expected one.
    pub prefactor_hat: f64,
    pub prefactor_stderr: f64,
    pub predicted_prefactor: f64,
    /// Largest `(p_{k+1} - p_k) / sqrt(se_k^2 + se_{k+1}^2)` over the grid.
    pub max_increase_z: f64,
}

impl LocalProbReport {
    pub fn prefactor_ratio(&self) -> f64 {
        self.prefactor_hat / self.predicted_prefactor
    }

    pub fn slope_ok(&self, tol: f64) -> bool {
        (self.fit.slope - self.expected_slope).abs() <= tol
    }

    pub fn prefactor_ok(&self, rel_tol: f64) -> bool {
        (self.prefactor_ratio() - 1.0).abs() <= rel_tol
    }

    /// Non-increasing within `sigmas` standard errors.
    pub fn monotone(&self, sigmas: f64) -> bool {
        self.max_increase_z <= sigmas
    }
}

/// Uses the window estimates of `profile` (point estimates when the window
/// is zero).
pub fn corollary14_check(profile: &LocalTimeProfile, pred: &LimitPrediction) -> Result<LocalProbReport> {
    let (p, se) = if profile.window > 0.0 {
        (&profile.window_estimates, &profile.window_stderr)
    } else {
        (&profile.point_estimates, &profile.point_stderr)
    };
    let pts: Vec<(f64, f64)> = profile.grid.iter().zip(p).map(|(&n, &v)| (n as f64, v)).collect();
    let fit = loglog_fit(&pts, None)?;
    let slope = pred.local_prob_slope();
    let (mut num, mut den) = (0.0, 0.0);
    for ((&n, &v), &s) in profile.grid.iter().zip(p).zip(se) {
        let shape = pred.local_prob(n as f64) / pred.local_prob_prefactor();
        let (c, cs) = (v / shape, s / shape);
        if cs > 0.0 {
            num += c / (cs * cs);
            den += 1.0 / (cs * cs);
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateWindow("no local-probability errors".into()));
    }
    let max_increase_z = p
        .windows(2)
        .zip(se.windows(2))
        .map(|(v, s)| (v[1] - v[0]) / s[0].hypot(s[1]).max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LocalProbReport {
        fit,
        expected_slope: slope,
        prefactor_hat: num / den,
        prefactor_stderr: den.powf(-0.5),
        predicted_prefactor: pred.local_prob_prefactor(),
        max_increase_z,
    })
}

/// One point of a single-trajectory LIL trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LilPoint {
    pub n: u64,
    pub local_time: u64,
    pub ratio: f64,
    /// `max_{m <= n} L_m / f_kappa(m)` over the checkpoints so far.
    pub running_max: f64,
}

/// Follows one quenched trajectory and records `L_n / f_kappa(n)` at
/// log-spaced checkpoints from `n = 16` to `n_max`. Diagnostic only.
pub fn lil_trace(real: &Realization, regime: Regime, kappa: f64, n_max: u64, seed: u64) -> Result<Vec<LilPoint>> {
    let mut checkpoints: Vec<u64> = (0..)
        .map(|i| (16.0 * 2f64.powf(i as f64 / 4.0)) as u64)
        .take_while(|&n| n <= n_max)
        .collect();
    checkpoints.dedup();
    let mut arena = TreeArena::new(real.clone());
    let mut rng = RngStream::tagged(seed, &[TAG_LIL]);
    let mut site = Site::Node(ROOT);
    let (mut local_time, mut best) = (0u64, 0.0f64);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for t in 1..=n_max {
        if arena.len() > LIL_CACHE && site == Site::Node(ROOT) {
            arena.clear();
        }
        site = arena.step_with(site, rng.uniform())?;
        if site == Site::Node(ROOT) {
            local_time += 1;
        }
        if next.peek() == Some(&&t) {
            next.next();
            let ratio = local_time as f64 / f_kappa(regime, kappa, t as f64);
            best = best.max(ratio);
            out.push(LilPoint {
                n: t,
                local_time,
                ratio,
                running_max: best,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::calibrate_two_point;

    #[test]
    fn stable_laplace_transform() {
        for alpha in [0.5, 2.0 / 3.0, 0.75] {
            let s = sample_stable(alpha, 200_000, 7).unwrap();
            assert!(s.iter().all(|&x| x > 0.0));
            for lambda in [0.5, 1.0, 2.0] {
                let (m, se) = empirical_laplace(&s, lambda);
                let target = StableSpec::new(alpha).unwrap().laplace(lambda);
                assert!((m - target).abs() <= 4.0 * se, "alpha {alpha} lambda {lambda}: {m} vs {target}");
            }
        }
    }

    #[test]
    fn half_stable_is_inverse_gaussian_square() {
        let s = sample_stable(0.5, 200_000, 3).unwrap();
        // P(1/(2N^2) <= x) = P(|N| >= 1/sqrt(2x)) = 1 - erf(1/(2 sqrt x))
        let ks = ks_distance_to_cdf(&s, |x| if x <= 0.0 { 0.0 } else { 1.0 - erf(0.5 / x.sqrt()) });
        assert!(ks < 0.005, "{ks}");
    }

    #[test]
    fn scaling_property() {
        // 2^{1/alpha} S has transform exp(-2 lambda^alpha)
        let alpha = 0.6;
        let s: Vec<f64> = sample_stable(alpha, 200_000, 9).unwrap().iter().map(|x| x * 2f64.powf(1.0 / alpha)).collect();
        let (m, se) = empirical_laplace(&s, 1.0);
        assert!((m - (-2.0f64).exp()).abs() <= 4.0 * se);
    }

    #[test]
    fn negative_moment_matches_monte_carlo() {
        let alpha = 2.0 / 3.0;
        let s = sample_stable(alpha, 400_000, 1).unwrap();
        let v: Vec<f64> = s.iter().map(|x| x.powf(-alpha)).collect();
        let (m, se) = crate::stats::mean_stderr(&v);
        let exact = StableSpec::new(alpha).unwrap().negative_moment(alpha);
        assert!((exact - 1.0 / gamma(1.0 + alpha)).abs() < 1e-12);
        assert!((m - exact).abs() <= 4.0 * se, "{m} {exact}");
    }

    #[test]
    fn rejects_bad_index() {
        assert!(StableSpec::new(1.0).is_err());
        assert!(sample_stable(0.0, 10, 0).is_err());
    }

    #[test]
    fn binary_constants() {
        let p = predict_limits(&EnvironmentSpec::binary(), None, 1.0, 0.5).unwrap();
        assert_eq!(p.regime, Regime::KappaGt2);
        assert!((p.c3.unwrap() - (2.0 / PI).sqrt()).abs() < 1e-12);
        assert!((p.c5.unwrap() - 1.0).abs() < 1e-12);
        // L_n / sqrt(n) -> 2 |N|
        assert!((p.local_time_factor() - 2.0).abs() < 1e-12);
        assert!((p.local_prob_prefactor() - (8.0 / PI).sqrt()).abs() < 1e-12);
        assert!((p.survival_prefactor() - 0.5 * (2.0 / PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn heavy_tails_need_c_m() {
        let spec = calibrate_two_point(2, 2.0, 1.5).unwrap();
        assert!(matches!(predict_limits(&spec, None, 1.0, 0.5), Err(Error::MissingTailConstant)));
        let p = predict_limits(&spec, Some(0.3), 1.0, 0.5).unwrap();
        let c4 = (0.3 * 1.5 * PI).powf(-1.0 / 1.5);
        assert!((p.c4.unwrap() - c4).abs() < 1e-12);
        assert!((p.c1.unwrap() - 2f64.powf(1.0 / 1.5) * c4 / gamma(1.0 / 3.0)).abs() < 1e-12);
        assert!((p.local_prob_slope() + 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn c1_grows_towards_two() {
        // B(2 - k, k - 1) has a pole at k = 2, so c4 and c1 vanish there;
        // the guard is that c1 moves monotonically on the approach
        let c1 = |k: f64| 2f64.powf(1.0 / k) * c4_from_tail(0.3, k) / gamma(1.0 - 1.0 / k);
        let ks: Vec<f64> = (0..=19).map(|i| 1.8 + 0.01 * i as f64).collect();
        let v: Vec<f64> = ks.iter().map(|&k| c1(k)).collect();
        let inc = v.windows(2).all(|w| w[1] > w[0]);
        let dec = v.windows(2).all(|w| w[1] < w[0]);
        assert!(inc || dec, "{v:?}");
    }

    #[test]
    fn rate_functions() {
        let n = 1e6f64;
        let ll = n.ln().ln();
        assert!((f_kappa(Regime::KappaLt2, 1.5, n) - n.powf(2.0 / 3.0) * ll.powf(1.0 / 3.0)).abs() < 1e-9);
        assert!((f_kappa(Regime::KappaEq2, 2.0, n) - (n * n.ln() * ll).sqrt()).abs() < 1e-9);
        assert!((f_kappa(Regime::KappaGt2, 5.0, n) - (n * ll).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn lil_trace_on_binary_tree() {
        let real = crate::walk::realization(&EnvironmentSpec::binary(), 0);
        let tr = lil_trace(&real, Regime::KappaGt2, f64::INFINITY, 100_000, 4).unwrap();
        assert_eq!(tr.first().unwrap().n, 16);
        assert!(tr.windows(2).all(|w| w[0].n < w[1].n && w[0].running_max <= w[1].running_max));
        assert!(tr.last().unwrap().running_max < 10.0);
    }

    #[test]
    fn limit_cdf_goes_to_one() {
        let p = predict_limits(&EnvironmentSpec::binary(), None, 1.0, 0.5).unwrap();
        let r = corollary12_check(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10], 100, &p, 0).unwrap();
        let last = r.plot.last().unwrap();
        assert!(last.2 > 0.0 && last.2 <= 1.0);
        let far = erf(1e3 / (2.0 * 2f64.sqrt()));
        assert!((far - 1.0).abs() < 1e-15);
    }
}
