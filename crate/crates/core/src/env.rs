//! The random environment: a finite-support joint law of the offspring
//! count and the mark vector, together with its log-Laplace functional
//! `psi(t) = ln E[sum_i A_i^t]`, the second root `kappa`, and the exact
//! moments that the limit constants are built from.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper end of the interval probed for the second root of `psi`.
pub const DEFAULT_PROBE_BOUND: f64 = 64.0;

const PROB_TOL: f64 = 1e-12;
const CRITICAL_TOL: f64 = 1e-10;
const LATTICE_MAX_DENOMINATOR: u64 = 1_000_000;
const LATTICE_REL_TOL: f64 = 1e-12;

/// One support point of the law of `(nu, A_1..A_nu)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub p: f64,
    pub nu: usize,
    pub marks: Vec<f64>,
}

impl Atom {
    pub fn new(p: f64, marks: Vec<f64>) -> Self {
        Self {
            p,
            nu: marks.len(),
            marks,
        }
    }

    pub fn mark_sum(&self) -> f64 {
        self.marks.iter().sum()
    }
}

/// How `omega(root, parent-of-root)` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootParentRule {
    /// Same normalization as an interior node: `1 / (1 + sum of root marks)`.
    #[default]
    Derived,
}

/// On-disk form of a spec: `{"atoms": [{"p", "nu", "marks"}], "seed"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SpecFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// A validated environment law. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentSpec {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
    root_parent_rule: RootParentRule,
}

impl EnvironmentSpec {
    /// Validates and builds a spec. Criticality `E[sum A_i] = 1` and
    /// supercriticality `E[nu] > 1` are enforced here.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidSpec("no atoms".into()));
        }
        for (k, a) in atoms.iter().enumerate() {
            if !(a.p > 0.0 && a.p <= 1.0) {
                return Err(Error::InvalidSpec(format!("atom {k}: probability {} not in (0,1]", a.p)));
            }
            if a.marks.len() != a.nu {
                return Err(Error::InvalidSpec(format!(
                    "atom {k}: nu = {} but {} marks",
                    a.nu,
                    a.marks.len()
                )));
            }
            if let Some(m) = a.marks.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
                return Err(Error::InvalidSpec(format!("atom {k}: mark {m} is not positive and finite")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.p).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidSpec(format!("probabilities sum to {total}")));
        }
        let mean_sum: f64 = atoms.iter().map(|a| a.p * a.mark_sum()).sum();
        if (mean_sum - 1.0).abs() > CRITICAL_TOL {
            return Err(Error::InvalidSpec(format!(
                "E[sum A_i] = {mean_sum}, criticality requires 1"
            )));
        }
        let mean_nu: f64 = atoms.iter().map(|a| a.p * a.nu as f64).sum();
        if mean_nu <= 1.0 {
            return Err(Error::InvalidSpec(format!("E[nu] = {mean_nu} is not supercritical")));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = atoms
            .iter()
            .map(|a| {
                acc += a.p;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self {
            atoms,
            cumulative,
            root_parent_rule: RootParentRule::Derived,
        })
    }

    pub fn from_file(file: &SpecFile) -> Result<Self> {
        Self::new(file.atoms.clone())
    }

    pub fn to_file(&self, seed: Option<u64>) -> SpecFile {
        SpecFile {
            atoms: self.atoms.clone(),
            seed,
        }
    }

    /// Deterministic tree: every vertex has `nu` children, all with mark `mark`.
    pub fn deterministic(nu: usize, mark: f64) -> Result<Self> {
        Self::new(vec![Atom::new(1.0, vec![mark; nu])])
    }

    /// The regular binary tree with all marks 1/2.
    pub fn binary() -> Self {
        Self::deterministic(2, 0.5).expect("binary spec is valid")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn root_parent_rule(&self) -> RootParentRule {
        self.root_parent_rule
    }

    /// Atom selected by a uniform draw `u` in `[0,1)`.
    #[inline]
    pub fn atom_for(&self, u: f64) -> &Atom {
        let k = self.cumulative.partition_point(|&c| c <= u);
        &self.atoms[k.min(self.atoms.len() - 1)]
    }

    fn expect<F: Fn(&Atom) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.p * f(a)).sum()
    }

    pub fn mean_nu(&self) -> f64 {
        self.expect(|a| a.nu as f64)
    }

    /// `E[sum A_i]`; equals 1 for every valid spec.
    pub fn mean_mark_sum(&self) -> f64 {
        self.expect(Atom::mark_sum)
    }

    /// `E[sum A_i^2]`.
    pub fn sum_sq(&self) -> f64 {
        self.expect(|a| a.marks.iter().map(|m| m * m).sum())
    }

    /// `E[sum_{i != j} A_i A_j]`.
    pub fn cross_sum(&self) -> f64 {
        self.expect(|a| {
            let s = a.mark_sum();
            s * s - a.marks.iter().map(|m| m * m).sum::<f64>()
        })
    }

    /// `E[(sum A_i)^t]`.
    pub fn sum_pow(&self, t: f64) -> f64 {
        self.expect(|a| a.mark_sum().powf(t))
    }

    /// `E[sum A_i^t log+ A_i]`.
    pub fn sum_pow_log_plus(&self, t: f64) -> f64 {
        self.expect(|a| a.marks.iter().map(|m| m.powf(t) * m.ln().max(0.0)).sum())
    }

    /// `(1 - E sum A_i^2) / E sum_{i!=j} A_i A_j`, the inverse of
    /// `E[M_inf^2]`; `None` unless `E sum A_i^2 < 1`.
    fn second_moment_ratio(&self) -> Option<f64> {
        let s2 = self.sum_sq();
        let cross = self.cross_sum();
        (s2 < 1.0 && cross > 0.0).then(|| (1.0 - s2) / cross)
    }

    /// `c_5 = ((1 - E sum A_i^2) / E sum_{i!=j} A_i A_j)^{1/2}`.
    pub fn c5(&self) -> Option<f64> {
        self.second_moment_ratio().map(f64::sqrt)
    }

    /// `E[M_inf^2] = E sum_{i!=j} A_i A_j / (1 - E sum A_i^2)`.
    pub fn m_inf_second_moment(&self) -> Option<f64> {
        self.second_moment_ratio().map(|r| 1.0 / r)
    }

    /// Extinction probability of the underlying Galton-Watson tree.
    pub fn extinction_probability(&self) -> f64 {
        if self.atoms.iter().all(|a| a.nu > 0) {
            return 0.0;
        }
        let gen = |s: f64| self.expect(|a| s.powi(a.nu as i32));
        let mut q = 0.0;
        for _ in 0..100_000 {
            let next = gen(q);
            if (next - q).abs() < 1e-16 {
                return next;
            }
            q = next;
        }
        q
    }

    /// True when the mark sum is almost surely constant, so the depth of the
    /// walk is itself a birth-death chain.
    pub fn has_constant_mark_sum(&self) -> bool {
        let s0 = self.atoms[0].mark_sum();
        self.atoms.iter().all(|a| (a.mark_sum() - s0).abs() <= 1e-15 * s0.max(1.0))
    }

    /// True when every vertex draws the same atom, i.e. all subtrees rooted
    /// at the same generation are identical.
    pub fn is_homogeneous(&self) -> bool {
        self.atoms.iter().all(|a| a.marks == self.atoms[0].marks)
    }

    /// `psi(t) = ln E[sum_i A_i^t]`, by log-sum-exp over the atoms.
    pub fn psi(&self, t: f64) -> f64 {
        let terms = self.atoms.iter().flat_map(|a| {
            let lp = a.p.ln();
            a.marks.iter().map(move |m| lp + t * m.ln())
        });
        log_sum_exp(terms)
    }

    /// `psi'(t) = E[sum A_i^t ln A_i] / E[sum A_i^t]`.
    pub fn psi_prime(&self, t: f64) -> f64 {
        let base = self.psi(t);
        self.atoms
            .iter()
            .flat_map(|a| a.marks.iter().map(move |m| (a.p, *m)))
            .map(|(p, m)| (p.ln() + t * m.ln() - base).exp() * m.ln())
            .sum()
    }

    /// Minimum of `psi` over `[0,1]`, by a grid plus golden-section refinement.
    pub fn psi_inf_unit_interval(&self) -> f64 {
        let n = 200;
        let (mut best_t, mut best) = (1.0, self.psi(1.0));
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let v = self.psi(t);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        let (mut lo, mut hi) = ((best_t - 1.0 / n as f64).max(0.0), (best_t + 1.0 / n as f64).min(1.0));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if self.psi(a) < self.psi(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        best.min(self.psi(0.5 * (lo + hi)))
    }

    fn check_regime(&self) -> Result<()> {
        let d1 = self.psi_prime(1.0);
        if d1 >= 0.0 {
            return Err(Error::InvalidRegime(format!("psi'(1) = {d1} is not negative")));
        }
        let inf = self.psi_inf_unit_interval();
        if inf.abs() > CRITICAL_TOL {
            return Err(Error::InvalidRegime(format!("inf over [0,1] of psi is {inf}, not 0")));
        }
        Ok(())
    }

    /// Second zero of `psi` after 1, or `+inf` when `psi < 0` on the whole
    /// probe interval `(1, probe_bound]`.
    pub fn kappa(&self, probe_bound: f64) -> Result<f64> {
        self.check_regime()?;
        let n = 4096;
        let step = (probe_bound - 1.0) / n as f64;
        let mut prev = 1.0;
        for k in 1..=n {
            let t = 1.0 + step * k as f64;
            if self.psi(t) >= 0.0 {
                return Ok(self.bisect_root(prev, t));
            }
            prev = t;
        }
        Ok(f64::INFINITY)
    }

    /// Root of `psi` in `(lo, hi]` with `psi(lo) < 0 <= psi(hi)`.
    fn bisect_root(&self, mut lo: f64, mut hi: f64) -> f64 {
        if self.psi(hi).abs() <= 1e-12 {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = self.psi(mid);
            if v.abs() <= 1e-12 && hi - lo < 1e-12 {
                return mid;
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        let (vl, vh) = (self.psi(lo).abs(), self.psi(hi).abs());
        if vl < vh {
            lo
        } else {
            hi
        }
    }

    /// Checks the regime, moment and non-lattice hypotheses.
    pub fn validate_assumptions(&self) -> AssumptionReport {
        let psi_prime_1 = self.psi_prime(1.0);
        let inf = self.psi_inf_unit_interval();
        let hyp1_ok = inf.abs() <= CRITICAL_TOL && psi_prime_1 < 0.0;
        let mut details = Vec::new();
        details.push(format!("inf_[0,1] psi = {inf:.3e}, psi'(1) = {psi_prime_1:.6}"));
        let kappa = if hyp1_ok {
            self.kappa(DEFAULT_PROBE_BOUND).unwrap_or(f64::NAN)
        } else {
            details.push("regime hypothesis fails; kappa undefined".into());
            f64::NAN
        };
        // finite support: every moment below is a finite sum
        let hyp2_ok = if kappa.is_finite() && kappa <= 2.0 {
            let a = self.sum_pow(kappa);
            let b = self.sum_pow_log_plus(kappa);
            details.push(format!("E(sum A)^kappa = {a:.6}, E sum A^kappa log+ A = {b:.6}"));
            a.is_finite() && b.is_finite()
        } else {
            let a = self.sum_pow(2.0);
            details.push(format!("E(sum A)^2 = {a:.6}"));
            a.is_finite()
        };
        let hyp3_status = if kappa.is_finite() && kappa <= 2.0 {
            match lattice_span(self) {
                Some(h) => {
                    details.push(format!("log-marks look lattice with span {h:.6}"));
                    LatticeStatus::Lattice
                }
                None => {
                    details.push("log-marks likely non-lattice".into());
                    LatticeStatus::NonLattice
                }
            }
        } else {
            LatticeStatus::NotApplicable
        };
        AssumptionReport {
            hyp1_ok,
            hyp2_ok,
            hyp3_status,
            kappa,
            psi_prime_1,
            details: details.join("; "),
        }
    }
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `|kappa - 2|` below this is treated as the critical case.
pub const KAPPA_TWO_TOL: f64 = 1e-6;

/// Which of the three asymptotic cases a `kappa` falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    KappaLt2,
    KappaEq2,
    KappaGt2,
}

impl Regime {
    /// `kappa` must exceed 1; `f64::INFINITY` is allowed.
    pub fn of(kappa: f64) -> Result<Self> {
        if !(kappa > 1.0) {
            return Err(Error::InvalidRegime(format!("kappa = {kappa} is not above 1")));
        }
        Ok(if (kappa - 2.0).abs() <= KAPPA_TWO_TOL {
            Regime::KappaEq2
        } else if kappa < 2.0 {
            Regime::KappaLt2
        } else {
            Regime::KappaGt2
        })
    }

    /// Index of the limit laws: `max(1/kappa, 1/2)`.
    pub fn index(self, kappa: f64) -> f64 {
        match self {
            Regime::KappaLt2 => 1.0 / kappa,
            _ => 0.5,
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::KappaLt2 => "kappa<2",
            Regime::KappaEq2 => "kappa=2",
            Regime::KappaGt2 => "kappa>2",
        })
    }
}

/// Outcome of the non-lattice heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatticeStatus {
    NonLattice,
    Lattice,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub hyp1_ok: bool,
    pub hyp2_ok: bool,
    pub hyp3_status: LatticeStatus,
    /// `f64::INFINITY` when `psi` stays negative past 1.
    pub kappa: f64,
    pub psi_prime_1: f64,
    pub details: String,
}

impl AssumptionReport {
    /// Regime and moment hypotheses both hold.
    pub fn regime_ok(&self) -> bool {
        self.hyp1_ok && self.hyp2_ok
    }

    /// The exact tail asymptotics need the non-lattice hypothesis when
    /// `kappa <= 2`.
    pub fn tail_asymptotics_ok(&self) -> bool {
        self.regime_ok() && self.hyp3_status != LatticeStatus::Lattice
    }
}

/// Continued-fraction test of whether `x` is (numerically) rational with a
/// denominator at most `max_den`.
fn looks_rational(x: f64, max_den: u64, rel_tol: f64) -> bool {
    let target = x.abs();
    let tol = rel_tol * target.max(1.0);
    let (mut h0, mut h1) = (0f64, 1f64);
    let (mut k0, mut k1) = (1f64, 0f64);
    let mut r = target;
    for _ in 0..64 {
        let a = r.floor();
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 > max_den as f64 {
            return false;
        }
        if (target - h2 / k2).abs() <= tol {
            return true;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac <= 0.0 {
            return true;
        }
        r = 1.0 / frac;
    }
    false
}

/// A common span `h` with every nonzero `ln A_i` in `h Z`, if the
/// heuristic finds one.
fn lattice_span(spec: &EnvironmentSpec) -> Option<f64> {
    let mut logs: Vec<f64> = spec
        .atoms()
        .iter()
        .flat_map(|a| a.marks.iter().map(|m| m.ln()))
        .filter(|l| l.abs() > 1e-15)
        .collect();
    logs.sort_by(f64::total_cmp);
    logs.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1.0));
    let Some(&base) = logs.first() else {
        // every mark equals 1: the measure sits at the origin
        return Some(0.0);
    };
    let all_rational = logs
        .iter()
        .all(|l| looks_rational(l / base, LATTICE_MAX_DENOMINATOR, LATTICE_REL_TOL));
    all_rational.then(|| {
        // span = |base| / lcm of the denominators; report |base| as an upper bound
        base.abs()
    })
}

/// Builds the spec with `nu = b` children carrying i.i.d. two-point marks
/// `{a w.p. p, c w.p. 1-p}`, with `(a, p)` solving
///
/// ```text
/// p a + (1-p) c = 1/b,    p a^kappa + (1-p) c^kappa = 1/b
/// ```
///
/// so that `psi(1) = psi(kappa) = 0`. The first equation is linear in `p`;
/// the second is bisected over `a in (0, 1/b)`.
pub fn calibrate_two_point(b: usize, c: f64, kappa_target: f64) -> Result<EnvironmentSpec> {
    if b < 2 || b > 16 {
        return Err(Error::Infeasible(format!("b = {b} outside 2..=16")));
    }
    if !(c > 1.0) {
        return Err(Error::Infeasible(format!("c = {c} must exceed 1 for a second root of psi")));
    }
    if !(kappa_target > 1.0 && kappa_target.is_finite()) {
        return Err(Error::Infeasible(format!("kappa = {kappa_target} must be finite and > 1")));
    }
    let inv_b = 1.0 / b as f64;
    let p_of = |a: f64| (c - inv_b) / (c - a);
    let h = |a: f64| {
        let p = p_of(a);
        p * a.powf(kappa_target) + (1.0 - p) * c.powf(kappa_target) - inv_b
    };
    // h(0+) = (c^(kappa-1) - 1)/b > 0 and h(1/b) = b^-kappa - 1/b < 0
    let (mut lo, mut hi) = (0.0, inv_b);
    if !(h(1e-300) > 0.0 && h(inv_b) < 0.0) {
        return Err(Error::Infeasible("no sign change of the calibration residual".into()));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let a = if h(lo).abs() < h(hi).abs() { lo } else { hi };
    let p = p_of(a);
    if !(a > 0.0 && a < 1.0 && p > 0.0 && p < 1.0) {
        return Err(Error::Infeasible(format!("solution (a, p) = ({a}, {p}) leaves the unit square")));
    }
    let r1 = p * a + (1.0 - p) * c - inv_b;
    let r2 = h(a);
    if r1.abs() > 1e-12 || r2.abs() > 1e-12 {
        return Err(Error::Infeasible(format!("residuals {r1:.2e}, {r2:.2e} above 1e-12")));
    }
    let mut atoms = Vec::with_capacity(1 << b);
    for pattern in 0u32..(1u32 << b) {
        let n_c = pattern.count_ones() as i32;
        let prob = p.powi(b as i32 - n_c) * (1.0 - p).powi(n_c);
        let marks = (0..b).map(|i| if pattern >> i & 1 == 1 { c } else { a }).collect();
        atoms.push(Atom::new(prob, marks));
    }
    // renormalize away the last ulp so the probability check is exact
    let total: f64 = atoms.iter().map(|x| x.p).sum();
    atoms.iter_mut().for_each(|x| x.p /= total);
    let spec = EnvironmentSpec::new(atoms)?;
    if spec.psi_prime(1.0) >= 0.0 {
        return Err(Error::Infeasible("calibrated spec has psi'(1) >= 0".into()));
    }
    Ok(spec)
}

/// The two-point parameters `(a, p)` of a calibrated spec, read back from
/// its atoms.
pub fn two_point_parameters(spec: &EnvironmentSpec) -> Option<(f64, f64)> {
    let first = spec.atoms().first()?;
    let a = first.marks.iter().copied().fold(f64::INFINITY, f64::min);
    let b = first.nu as i32;
    Some((a, first.p.powf(1.0 / b as f64)))
}
