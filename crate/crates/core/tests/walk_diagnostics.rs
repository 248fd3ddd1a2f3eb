//! Statistical diagnostics of the quenched walk against exact oracles.

use treewalk::arena::TreeArena;
use treewalk::birth_death::DepthChain;
use treewalk::env::{calibrate_two_point, EnvironmentSpec};
use treewalk::recursion::{beta_backward, beta_child_monte_carlo};
use treewalk::stats::{binomial_stderr, rank_trend_test};
use treewalk::walk::{realization, return_increments, reversibility_diagnostic, survival_curve, WalkMode};

#[test]
fn occupations_satisfy_detailed_balance() {
    for (spec, seed) in [(EnvironmentSpec::binary(), 1), (calibrate_two_point(2, 2.0, 1.5).unwrap(), 5)] {
        let real = realization(&spec, seed);
        let edges = reversibility_diagnostic(&real, 3, 4_000_000, 20, 9).unwrap();
        assert!(edges.len() >= 7);
        for e in &edges {
            assert!(e.z.abs() <= 3.0, "edge at depth {}: ratio {} vs {}, z {}", e.depth, e.ratio, e.predicted, e.z);
            assert!((e.ratio / e.predicted - 1.0).abs() < 0.05);
        }
    }
}

#[test]
fn return_increments_are_exchangeable() {
    for (spec, seed) in [(EnvironmentSpec::binary(), 2), (calibrate_two_point(2, 2.0, 1.5).unwrap(), 3)] {
        let inc = return_increments(&realization(&spec, seed), 10_000, 100_000, 4).unwrap();
        assert!(inc.iter().all(|t| t % 2 == 0));
        let xs: Vec<f64> = inc.iter().map(|&t| t as f64).collect();
        let (rho, p) = rank_trend_test(&xs);
        assert!(p > 0.01, "rho {rho}, p {p}");
    }
}

#[test]
fn binary_survival_matches_the_depth_chain() {
    let spec = EnvironmentSpec::binary();
    let replicas = 50_000;
    let horizons: Vec<u64> = (1..=2048).collect();
    let curve = survival_curve(&realization(&spec, 1), WalkMode::Quenched, &horizons, replicas, 3).unwrap();
    let exact = DepthChain::from_spec(&spec).unwrap().survival(2048);
    let mut worst: f64 = 0.0;
    for &n in &horizons {
        let p = exact[n as usize];
        let z = (curve.survival_at(n) - p).abs() / binomial_stderr(p, replicas);
        worst = worst.max(z);
    }
    assert!(worst <= 3.0, "worst z {worst}");
}

#[test]
fn quenched_beta_matches_monte_carlo() {
    // 1 - beta(u) = E_u exp(-lambda (1 + T)) for a child u of the root; at
    // depth 16 the truncation moves it by less than e^{-15}
    let spec = calibrate_two_point(2, 2.0, 1.5).unwrap();
    let lambda = 0.5;
    let mut arena = TreeArena::from_spec(&spec, 6);
    let field = beta_backward(&mut arena, 16, lambda).unwrap();
    for child in 0..2 {
        let u = arena.children(0).start + child as u32;
        let exact = 1.0 - field.values[u as usize];
        let (mc, se, bias) = beta_child_monte_carlo(&mut arena, child, lambda, 40_000, 2_000, 11).unwrap();
        assert!(bias < 1e-80);
        assert!((mc - exact).abs() <= 3.0 * se + 1e-6, "child {child}: {mc} +- {se} vs {exact}");
    }
}
