//! Annealed distributional fixed points for `B_eps` and `M_inf`.

mod checks;
mod grid;
mod pool;

pub use checks::*;
pub use grid::*;
pub use pool::*;
