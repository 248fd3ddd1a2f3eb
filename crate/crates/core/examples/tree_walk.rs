//! Grows one quenched tree on demand and follows a walk on it.
//!
//! ```text
//! cargo run --release --example tree_walk
//! ```

use treewalk::arena::{Site, TreeArena, ROOT};
use treewalk::env::calibrate_two_point;
use treewalk::stats::RngStream;
use treewalk::walk::{run_return_times, step};

fn main() -> treewalk::Result<()> {
    let spec = calibrate_two_point(2, 2.0, 1.5)?;
    let mut arena = TreeArena::from_spec(&spec, 11);

    // the tree is a function of the seed: a second arena agrees vertex by vertex
    arena.expand_to_depth(6)?;
    let mut other = TreeArena::from_spec(&spec, 11);
    other.expand_to_depth(6)?;
    let same = (0..arena.len() as u32).all(|id| arena.key(id) == other.key(id) && arena.mark(id) == other.mark(id));
    println!("vertices to depth 6: {}, replay identical: {same}", arena.len());
    println!("omega(root, parent) = {:.6}", arena.omega_root_parent()?);

    let mut rng = RngStream::tagged(3, &[1]);
    let rec = run_return_times(&mut arena, 2_000, 100_000_000, &mut rng)?;
    let gaps: Vec<u64> = rec.return_times.windows(2).map(|w| w[1] - w[0]).collect();
    println!("first return times: {:?}", &rec.return_times[..10]);
    println!(
        "2000 returns in {} steps, longest excursion {}, deepest vertex {}",
        rec.steps,
        gaps.iter().max().unwrap_or(&0),
        rec.max_depth
    );

    // a few raw steps from the root
    let mut site = Site::Node(ROOT);
    let mut path = Vec::new();
    for _ in 0..12 {
        site = step(&mut arena, site, &mut rng)?;
        path.push(match site {
            Site::Node(x) => format!("{}", arena.depth(x)),
            Site::RootParent => "p".to_string(),
        });
    }
    println!("depth path: {}", path.join(" "));
    Ok(())
}
