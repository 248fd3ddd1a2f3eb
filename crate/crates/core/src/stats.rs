//! Estimation utilities shared by every module: counter-based random
//! streams, log-log regression, Kolmogorov-Smirnov distances, the Hill
//! estimator, bootstrap intervals and binomial errors.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// Minimum number of points accepted by [`loglog_fit`].
pub const MIN_FIT_POINTS: usize = 5;

/// Default number of bootstrap resamples.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 200;

/// SplitMix64 finalizer. Used to fold tags into stream identifiers and
/// node keys.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a list of tags into one 64-bit stream identifier.
pub fn stream_key(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &t| mix64(acc ^ mix64(t)))
}

/// A counter-based random stream: the output is a pure function of
/// `(seed, stream_id, counter)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector and 128-bit word
/// position give exactly this addressing. Distinct stream ids never
/// overlap, so replica `i` can be simulated on any worker in any order.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    /// Stream positioned at an explicit word counter.
    pub fn at(seed: u64, stream_id: u64, counter: u128) -> Self {
        let mut s = Self::new(seed, stream_id);
        s.inner.set_word_pos(counter);
        s
    }

    /// Stream whose id is derived from a tag list, see [`stream_key`].
    pub fn tagged(seed: u64, tags: &[u64]) -> Self {
        Self::new(seed, stream_key(tags))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn open_uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn exp1(&mut self) -> f64 {
        self.inner.sample(Exp1)
    }

    pub fn std_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of a time-series average using non-overlapping batch
/// means (`batches` equal batches, remainder dropped from the front).
pub fn batch_means_stderr(series: &[f64], batches: usize) -> (f64, f64) {
    let batches = batches.max(2).min(series.len().max(2));
    let len = series.len() / batches;
    if len == 0 {
        return mean_stderr(series);
    }
    let start = series.len() - len * batches;
    let means: Vec<f64> = series[start..]
        .chunks(len)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    mean_stderr(&means)
}

pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// Ordinary least-squares result on log-log axes.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub stderr_intercept: f64,
    pub r2: f64,
    /// Range of x actually used.
    pub window: (f64, f64),
    pub points: usize,
}

impl FitResult {
    /// `exp(intercept)`, the prefactor `C` in `y = C x^slope`.
    pub fn prefactor(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Least squares of `ln y` on `ln x`, keeping points with `x` inside
/// `window` (inclusive) when one is given.
pub fn loglog_fit(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<FitResult> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, _)| window.is_none_or(|(lo, hi)| x >= lo && x <= hi))
        .collect();
    if kept.len() < MIN_FIT_POINTS {
        return Err(Error::DegenerateWindow(format!(
            "{} points in window, need at least {MIN_FIT_POINTS}",
            kept.len()
        )));
    }
    if let Some(&(x, y)) = kept.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::DegenerateWindow(format!(
            "non-positive point ({x}, {y})"
        )));
    }
    let lx: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let mut fit = linear_fit(&lx, &ly)?;
    let (lo, hi) = kept
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    fit.window = (lo, hi);
    Ok(fit)
}

/// Plain least squares `y = intercept + slope x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return Err(Error::DegenerateWindow(format!("{n} points")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateWindow("no spread in x".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let sigma2 = if n > 2 { sse / (nf - 2.0) } else { 0.0 };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(FitResult {
        slope,
        intercept,
        stderr_slope: (sigma2 / sxx).sqrt(),
        stderr_intercept: (sigma2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        r2,
        window: (
            xs.iter().copied().fold(f64::INFINITY, f64::min),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
        points: n,
    })
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov statistic: the sup distance between the
/// empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "ks_distance needs two non-empty samples");
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_distance_to_cdf<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    assert!(!sample.is_empty());
    let xs = sorted(sample);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        // ties: jump over equal values so atoms of the sample are handled
        let x = xs[i];
        let before = i as f64 / n;
        while i < xs.len() && xs[i] == x {
            i += 1;
        }
        let after = i as f64 / n;
        let f = cdf(x);
        d = d.max((f - before).abs()).max((after - f).abs());
    }
    d
}

/// Hill tail-index estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HillEstimate {
    pub exponent: f64,
    pub stderr: f64,
    /// Number of top order statistics used.
    pub k: usize,
    /// Threshold order statistic `x_(k+1)`.
    pub threshold: f64,
}

/// Hill estimator over the top `top_fraction` of a positive sample.
///
/// `1 / exponent = mean(ln(x_(i) / x_(k+1)))` over the `k` largest values;
/// the standard error is `exponent / sqrt(k)`.
pub fn hill_estimator(sample: &[f64], top_fraction: f64) -> Result<HillEstimate> {
    if !(top_fraction > 0.0 && top_fraction <= 0.2) {
        return Err(Error::Precondition(format!(
            "top_fraction {top_fraction} outside (0, 0.2]"
        )));
    }
    let mut xs: Vec<f64> = sample.iter().copied().filter(|x| *x > 0.0).collect();
    xs.sort_by(|a, b| b.total_cmp(a));
    let k = (top_fraction * xs.len() as f64).floor() as usize;
    if k < 2 || k >= xs.len() {
        return Err(Error::TooFewExceedances(format!(
            "k = {k} of {} positive values",
            xs.len()
        )));
    }
    let threshold = xs[k];
    let gamma = xs[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    if !(gamma > 0.0) {
        return Err(Error::TooFewExceedances(
            "no spread among the top order statistics".into(),
        ));
    }
    let exponent = 1.0 / gamma;
    Ok(HillEstimate {
        exponent,
        stderr: exponent / (k as f64).sqrt(),
        k,
        threshold,
    })
}

pub use statrs::function::gamma::{gamma, ln_gamma};
use statrs::function::erf::erfc;

/// Euler Beta function through log-gamma.
pub fn beta(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// Percentile bootstrap summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bootstrap {
    pub estimate: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Nonparametric bootstrap of `stat` with a 95% percentile interval.
/// Resamples for which `stat` returns `None` are skipped.
pub fn bootstrap<F>(sample: &[f64], resamples: usize, seed: u64, stat: F) -> Option<Bootstrap>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let estimate = stat(sample)?;
    let mut rng = RngStream::tagged(seed, &[0xB007]);
    let n = sample.len();
    let mut buf = vec![0.0; n];
    let mut reps = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = sample[rng.below(n)];
        }
        if let Some(v) = stat(&buf) {
            if v.is_finite() {
                reps.push(v);
            }
        }
    }
    if reps.len() < 2 {
        return None;
    }
    let (_, se) = mean_stderr(&reps);
    let sd = se * (reps.len() as f64).sqrt();
    reps.sort_by(f64::total_cmp);
    Some(Bootstrap {
        estimate,
        stderr: sd,
        ci_low: quantile_sorted(&reps, 0.025),
        ci_high: quantile_sorted(&reps, 0.975),
    })
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    assert!(!xs.is_empty());
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    xs[lo] * (1.0 - t) + xs[hi] * t
}

/// Midranks (1-based) of `xs`.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation between the values and their position in the
/// sequence, with the two-sided normal p-value of `rho sqrt(n - 1)`. Under
/// exchangeability the ranks carry no trend.
pub fn rank_trend_test(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 3, "rank test needs at least 3 values");
    let r = midranks(xs);
    let pos: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in pos.iter().zip(&r) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if syy == 0.0 {
        return (0.0, 1.0);
    }
    let rho = sxy / (sxx * syy).sqrt();
    let z = rho * ((n - 1) as f64).sqrt();
    (rho, erfc(z.abs() / std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_half_half_is_pi() {
        assert!((beta(0.5, 0.5) - std::f64::consts::PI).abs() < 1e-12);
        assert!((beta(2.0, 3.0) - 1.0 / 12.0).abs() < 1e-14);
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stream_is_a_pure_function_of_its_address() {
        let mut a = RngStream::new(7, 3);
        let first: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        let mut b = RngStream::new(7, 3);
        let again: Vec<u64> = (0..10).map(|_| b.next_u64()).collect();
        assert_eq!(first, again);

        // jump straight to the counter after four draws
        let mut c = RngStream::at(7, 3, 8);
        assert_eq!(c.next_u64(), first[4]);

        let mut d = RngStream::new(7, 4);
        assert_ne!(d.next_u64(), first[0]);
    }

    #[test]
    fn uniform_ranges() {
        let mut r = RngStream::new(1, 1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            let v = r.open_uniform();
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64)> = (1..=8)
            .map(|i| {
                let x = i as f64 * 1.7;
                (x, 3.0 * x.powf(-2.0))
            })
            .collect();
        let fit = loglog_fit(&pts, None).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law_fit() {
        let mut rng = RngStream::new(11, 0);
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = 10f64.powf(1.0 + i as f64 * 0.1);
                let noise = 1.0 + 0.01 * (2.0 * rng.uniform() - 1.0);
                (x, x.powf(-0.5) * noise)
            })
            .collect();
        let fit = loglog_fit(&pts, None).unwrap();
        assert!((fit.slope + 0.5).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn single_point_is_degenerate() {
        assert!(matches!(
            loglog_fit(&[(1.0, 2.0)], None),
            Err(Error::DegenerateWindow(_))
        ));
        let pts: Vec<(f64, f64)> = (1..10).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(
            loglog_fit(&pts, Some((100.0, 200.0))),
            Err(Error::DegenerateWindow(_))
        ));
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_distance(&a, &a), 0.0);
        let b: Vec<f64> = (0..50).map(|i| 1000.0 + i as f64).collect();
        assert_eq!(ks_distance(&a, &b), 1.0);
    }

    #[test]
    fn ks_same_law_is_small() {
        // DKW: P(D > t) <= 2 exp(-2 n t^2 / 2) for two samples of size n;
        // at n = 1e5 and t = 0.01 the bound is 2 e^-5 < 0.014.
        let mut r = RngStream::new(5, 0);
        let a: Vec<f64> = (0..100_000).map(|_| r.std_normal()).collect();
        let b: Vec<f64> = (0..100_000).map(|_| r.std_normal()).collect();
        assert!(ks_distance(&a, &b) <= 0.01);
    }

    #[test]
    fn ks_against_cdf() {
        let mut r = RngStream::new(9, 0);
        let a: Vec<f64> = (0..50_000).map(|_| r.uniform()).collect();
        assert!(ks_distance_to_cdf(&a, |x| x.clamp(0.0, 1.0)) < 0.01);
        assert!((ks_distance_to_cdf(&[0.5; 10], |x| x) - 0.5).abs() < 1e-12);
    }

    fn pareto(rng: &mut RngStream, alpha: f64) -> f64 {
        rng.open_uniform().powf(-1.0 / alpha)
    }

    #[test]
    fn hill_recovers_pareto_index() {
        let mut r = RngStream::new(3, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| pareto(&mut r, 1.5)).collect();
        let h = hill_estimator(&xs, 0.01).unwrap();
        assert!((h.exponent - 1.5).abs() < 0.05, "{h:?}");
        assert!((h.stderr - h.exponent / (h.k as f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hill_constant_sample_has_no_exceedances() {
        assert!(matches!(
            hill_estimator(&[2.0; 1000], 0.1),
            Err(Error::TooFewExceedances(_))
        ));
    }

    #[test]
    fn hill_drifts_on_lognormal() {
        // no power tail: the estimate keeps moving with the fraction
        let mut r = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| r.std_normal().exp()).collect();
        let est: Vec<f64> = [0.2, 0.05, 0.01, 0.002]
            .iter()
            .map(|&f| hill_estimator(&xs, f).unwrap().exponent)
            .collect();
        assert!(est.windows(2).all(|w| w[1] > w[0]), "{est:?}");
        assert!(est[3] / est[0] > 1.3, "{est:?}");
    }

    #[test]
    fn bootstrap_ci_coverage_on_pareto() {
        let mut covered = 0;
        for rep in 0..100u64 {
            let mut r = RngStream::new(100 + rep, 0);
            let xs: Vec<f64> = (0..2_000).map(|_| pareto(&mut r, 1.5)).collect();
            let b = bootstrap(&xs, DEFAULT_BOOTSTRAP_RESAMPLES, rep, |s| {
                hill_estimator(s, 0.1).ok().map(|h| h.exponent)
            })
            .unwrap();
            if b.ci_low <= 1.5 && 1.5 <= b.ci_high {
                covered += 1;
            }
        }
        assert!(covered >= 90, "coverage {covered}/100");
    }

    #[test]
    fn binomial_error() {
        assert!((binomial_stderr(0.5, 100) - 0.05).abs() < 1e-15);
        assert_eq!(binomial_stderr(1.0, 10), 0.0);
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rank_trend() {
        let mut rng = RngStream::new(4, 0);
        let iid: Vec<f64> = (0..5000).map(|_| rng.exp1()).collect();
        let (_, p) = rank_trend_test(&iid);
        assert!(p > 0.01, "p = {p}");
        let drift: Vec<f64> = iid.iter().enumerate().map(|(i, x)| x + i as f64 * 1e-3).collect();
        let (rho, p) = rank_trend_test(&drift);
        assert!(rho > 0.5 && p < 1e-10);
        assert_eq!(rank_trend_test(&[1.0; 10]), (0.0, 1.0));
    }
}
