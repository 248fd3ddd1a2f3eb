//! Invariants that must hold for every admissible input.

use proptest::prelude::*;

use treewalk::arena::{Site, TreeArena, ROOT};
use treewalk::cascade::{population_step, PopulationPool, Target};
use treewalk::env::{calibrate_two_point, Atom, EnvironmentSpec, DEFAULT_PROBE_BOUND};
use treewalk::limits::{predict_limits, StableSpec};
use treewalk::recursion::{beta_backward, epsilon_of_lambda};
use treewalk::stats::RngStream;
use treewalk::verify::{report_bundle, verify, Params, Registry, RunConfig};
use treewalk::walk::{realization, run_return_times, survival_curve, WalkMode};

fn cal(kappa: f64, c: f64) -> EnvironmentSpec {
    calibrate_two_point(2, c, kappa).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn calibrated_laws_are_critical_and_supercritical(kappa in 1.05f64..4.0, c in 1.5f64..4.0) {
        let spec = cal(kappa, c);
        let p: f64 = spec.atoms().iter().map(|a| a.p).sum();
        prop_assert!((p - 1.0).abs() <= 1e-12);
        prop_assert!((spec.mean_mark_sum() - 1.0).abs() <= 1e-10);
        prop_assert!(spec.mean_nu() > 1.0);
        prop_assert!(spec.atoms().iter().all(|a| a.marks.iter().all(|m| *m > 0.0 && m.is_finite())));
        let rep = spec.validate_assumptions();
        prop_assert_eq!(rep.hyp1_ok, spec.psi_inf_unit_interval().abs() <= 1e-10 && spec.psi_prime(1.0) < 0.0);
    }

    #[test]
    fn subcritical_mark_sums_are_rejected(scale in 0.5f64..0.99) {
        let spec = EnvironmentSpec::new(vec![Atom::new(1.0, vec![0.5 * scale, 0.5 * scale])]);
        prop_assert!(spec.is_err());
    }

    #[test]
    fn transition_weights(seed in 0u64..10_000, kappa in 1.1f64..3.0, depth in 1u32..6) {
        let mut arena = TreeArena::from_spec(&cal(kappa, 2.0), seed);
        arena.expand_to_depth(depth).unwrap();
        let root_total = arena.omega_root_parent().unwrap()
            + arena.children(ROOT).map(|c| arena.omega_child(ROOT, c)).sum::<f64>();
        prop_assert!((root_total - 1.0).abs() <= 1e-12);
        for x in 0..arena.len() as u32 {
            if !arena.is_expanded(x) {
                continue;
            }
            for c in arena.children(x) {
                let ratio = arena.omega_child(x, c) / arena.omega_parent(x);
                prop_assert!((ratio - arena.mark(c)).abs() <= 1e-12 * arena.mark(c));
            }
        }
    }

    #[test]
    fn returns_are_even_and_increasing(seed in 0u64..10_000, kappa in 1.2f64..3.0) {
        let mut arena = TreeArena::from_spec(&cal(kappa, 2.0), seed);
        let mut rng = RngStream::tagged(seed, &[1]);
        let rec = match run_return_times(&mut arena, 30, 200_000, &mut rng) {
            Ok(r) => r,
            Err(treewalk::Error::BudgetExhausted { partial, .. }) => *partial,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(rec.return_times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(rec.return_times.iter().all(|t| t % 2 == 0));
        prop_assert_eq!(rec.root_local_time as usize, rec.return_times.len());
    }

    #[test]
    fn parity_on_every_step(seed in 0u64..10_000) {
        let mut arena = TreeArena::from_spec(&cal(1.5, 2.0), seed);
        let mut rng = RngStream::tagged(seed, &[2]);
        let mut site = Site::Node(ROOT);
        for n in 1..4000u64 {
            site = treewalk::walk::step(&mut arena, site, &mut rng).unwrap();
            if site == Site::Node(ROOT) {
                prop_assert_eq!(n % 2, 0);
            }
        }
    }

    #[test]
    fn recursion_residuals_and_monotonicity(seed in 0u64..10_000, l1 in 0.01f64..0.5, dl in 0.01f64..0.5) {
        let mut arena = TreeArena::from_spec(&cal(1.5, 2.0), seed);
        let mut prev: Option<f64> = None;
        for n in 1..=8 {
            let f = beta_backward(&mut arena, n, l1).unwrap();
            prop_assert!(f.max_residual(&arena) <= 1e-14);
            // deeper truncation, smaller beta
            if let Some(p) = prev {
                prop_assert!(f.root_b <= p * (1.0 + 1e-14));
            }
            prev = Some(f.root_b);
        }
        // larger lambda (larger eps), larger beta
        let lo = beta_backward(&mut arena, 8, l1).unwrap().root_b;
        let hi = beta_backward(&mut arena, 8, l1 + dl).unwrap().root_b;
        prop_assert!(hi >= lo * (1.0 - 1e-14));
        prop_assert!(epsilon_of_lambda(l1) < epsilon_of_lambda(l1 + dl));
    }

    #[test]
    fn b_pool_is_dominated_by_the_mark_sum(seed in 0u64..10_000, eps in 1e-4f64..0.5) {
        let spec = cal(1.5, 2.0);
        let max_sum = spec.atoms().iter().map(|a| a.mark_sum()).fold(0.0, f64::max);
        let mut pool = PopulationPool::new(Target::BEps(eps), 2_000, seed);
        for _ in 0..20 {
            population_step(&mut pool, &spec);
        }
        prop_assert!(pool.samples.iter().all(|&b| b >= 0.0 && b <= max_sum * (1.0 + 1e-12)));
    }

    #[test]
    fn stable_samples_are_positive(alpha in 0.05f64..0.99, seed in 0u64..10_000) {
        let law = StableSpec::new(alpha).unwrap();
        let mut rng = RngStream::tagged(seed, &[3]);
        for _ in 0..200 {
            let s = law.sample(&mut rng);
            prop_assert!(s > 0.0 && s.is_finite());
        }
    }

    #[test]
    fn limit_constants_are_positive(kappa in 1.1f64..4.0, c_m in 0.05f64..2.0, m in 0.1f64..5.0, w in 0.05f64..0.95) {
        let spec = cal(kappa, 2.0);
        let p = predict_limits(&spec, Some(c_m), m, w).unwrap();
        for c in [p.c1, p.c2, p.c3, p.c4, p.c5].into_iter().flatten() {
            prop_assert!(c > 0.0 && c.is_finite());
        }
        prop_assert!(p.survival_prefactor() > 0.0 && p.local_time_factor() > 0.0);
        prop_assert_eq!(p.regime, treewalk::env::Regime::of(spec.kappa(DEFAULT_PROBE_BOUND).unwrap()).unwrap());
    }

    #[test]
    fn rng_streams_are_pure(seed in any::<u64>(), stream in any::<u64>(), skip in 0usize..64) {
        let mut a = RngStream::new(seed, stream);
        let first: Vec<f64> = (0..skip + 4).map(|_| a.uniform()).collect();
        let mut b = RngStream::at(seed, stream, 0);
        let again: Vec<f64> = (0..skip + 4).map(|_| b.uniform()).collect();
        prop_assert_eq!(first, again);
    }
}

#[test]
fn survival_curves_are_monotone() {
    let real = realization(&cal(1.5, 2.0), 3);
    let c = survival_curve(&real, WalkMode::Quenched, &[0, 2, 4, 10, 50, 200, 1000], 2_000, 1).unwrap();
    assert_eq!(c.survival_at(0), 1.0);
    assert!(c.survival_estimates.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn report_rows_cite_registered_claims() {
    let spec = EnvironmentSpec::binary();
    let mut cfg = RunConfig::new("binary", &spec, 1);
    cfg.params = Params {
        replicas: Some(2_000),
        ..Params::default()
    };
    let reports: Vec<_> = ["Eq2.4", "Eq2.6", "Lem3.1", "Stable"]
        .iter()
        .map(|id| verify(id, &cfg).unwrap().report)
        .collect();
    let bundle = report_bundle(&reports);
    for line in bundle.lines().skip(1) {
        let id = line.split(',').next().unwrap();
        assert!(Registry::builtin().get(id).is_ok(), "{id}");
    }
}
