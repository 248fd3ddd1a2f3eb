//! Randomly biased walks on marked Galton-Watson trees in the
//! null-recurrent sub-diffusive regime: the environment, the quenched walk,
//! the backward recursions for the return-time Laplace transform, the
//! annealed fixed points, the limit constants and a verification harness.

pub mod arena;
pub mod birth_death;
pub mod cascade;
pub mod env;
pub mod recursion;
pub mod error;
pub mod limits;
pub mod stats;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
