//! Every output is a function of the seed alone, whatever the worker count.

use treewalk::cascade::{run_to_fixpoint, Target};
use treewalk::env::{calibrate_two_point, EnvironmentSpec};
use treewalk::limits::sample_stable;
use treewalk::verify::{report_bundle, verify, Params, RunConfig};
use treewalk::walk::{local_time_profile, realization, survival_curve, WalkMode};

fn with_workers<T: Send>(w: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(w).build().unwrap().install(f)
}

#[test]
fn walks_pools_and_samplers_ignore_worker_count() {
    let spec = calibrate_two_point(2, 2.0, 1.5).unwrap();
    let real = realization(&spec, 8);
    let run = || {
        let s = survival_curve(&real, WalkMode::Quenched, &[10, 100, 1000], 3_000, 1).unwrap();
        let l = local_time_profile(&real, 2_000, &[500, 1_000, 2_000], 0.1, 600, 2).unwrap();
        let p = run_to_fixpoint(&spec, Target::BEps(1e-2), 20_000, 2_000, 1e-4, 3).unwrap();
        let z = sample_stable(0.6, 100_000, 4).unwrap();
        (s.to_csv(), l.to_csv(), p.pool.samples, z)
    };
    let one = with_workers(1, run);
    for w in [2, 4] {
        let other = with_workers(w, run);
        assert!(one == other, "outputs differ with {w} workers");
    }
}

#[test]
fn persisted_configs_rerun_to_identical_csv() {
    let spec = EnvironmentSpec::binary();
    let mut cfg = RunConfig::new("binary", &spec, 17);
    cfg.params = Params {
        replicas: Some(5_000),
        n: Some(1_000),
        ..Params::default()
    };
    let path = std::env::temp_dir().join(format!("treewalk_cfg_{}.json", std::process::id()));
    cfg.save(&path).unwrap();
    let loaded = RunConfig::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(loaded, cfg);

    let csv = |cfg: &RunConfig, w: usize| {
        with_workers(w, || {
            let v = verify("Thm1.1-case3", cfg).unwrap();
            let arts: Vec<String> = v.artifacts.iter().map(|a| a.csv.clone()).collect();
            (report_bundle(&[v.report]), arts)
        })
    };
    assert_eq!(csv(&cfg, 1), csv(&loaded, 3));
}
