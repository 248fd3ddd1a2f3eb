//! Builds offspring laws, checks the regime hypotheses and prints the
//! exact moments the rest of the library relies on.
//!
//! ```text
//! cargo run --release --example environment
//! ```

use treewalk::env::{calibrate_two_point, Atom, EnvironmentSpec, Regime, DEFAULT_PROBE_BOUND};

fn describe(name: &str, spec: &EnvironmentSpec) -> treewalk::Result<()> {
    let rep = spec.validate_assumptions();
    let kappa = spec.kappa(DEFAULT_PROBE_BOUND)?;
    println!("{name}");
    println!("  atoms            {}", spec.atoms().len());
    println!("  E nu             {:.4}", spec.mean_nu());
    println!("  kappa            {kappa:.6}  ({})", Regime::of(kappa)?);
    println!("  psi'(1)          {:.6}", spec.psi_prime(1.0));
    println!("  c5               {:?}", spec.c5());
    println!("  E M_inf^2        {:?}", spec.m_inf_second_moment());
    println!("  regime ok        {}", rep.regime_ok());
    println!("  {}", rep.details);
    Ok(())
}

fn main() -> treewalk::Result<()> {
    describe("binary tree, marks 1/2", &EnvironmentSpec::binary())?;

    // two marks a < 1/b < c, mixed so that kappa hits the target
    for kappa in [1.5, 2.0, 3.0] {
        let spec = calibrate_two_point(2, 2.0, kappa)?;
        describe(&format!("two-point, kappa = {kappa}"), &spec)?;
    }

    // a hand-written law: 1, 2 or 3 children
    let spec = EnvironmentSpec::new(vec![
        Atom::new(0.2, vec![0.5]),
        Atom::new(0.5, vec![0.7, 0.5]),
        Atom::new(0.3, vec![0.3, 0.3, 0.4]),
    ])?;
    describe("mixed offspring", &spec)?;

    let path = std::env::temp_dir().join("treewalk_mixed.json");
    spec.to_file(Some(7)).save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
