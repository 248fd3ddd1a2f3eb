//! Runs a few registered claims through the verification harness and
//! prints the bundle.
//!
//! ```text
//! cargo run --release --example verify_claims
//! ```

use treewalk::env::EnvironmentSpec;
use treewalk::verify::{report_bundle, summary_text, verify, Params, Registry, RunConfig};

fn main() -> treewalk::Result<()> {
    for claim in Registry::builtin().claims().iter().take(4) {
        println!("{:<10} {}", claim.id, claim.anchor);
    }

    let spec = EnvironmentSpec::binary();
    let mut cfg = RunConfig::new("binary", &spec, 1);
    // enough replicas for the n = 1e4 survival ratio
    cfg.params = Params {
        replicas: Some(1_000_000),
        ..Params::default()
    };
    let mut reports = Vec::new();
    for id in ["Eq2.4", "Eq2.6", "Eq3.3", "Thm1.1-case3", "Stable"] {
        reports.push(verify(id, &cfg)?.report);
    }
    print!("{}", summary_text(&reports));
    print!("{}", report_bundle(&reports));

    // a run is fully described by its configuration
    let path = std::env::temp_dir().join("treewalk_run.json");
    cfg.save(&path)?;
    let again = RunConfig::load(&path)?;
    println!("config roundtrip equal: {}", again == cfg);
    Ok(())
}
