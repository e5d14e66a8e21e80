//! Density evolution for q-ary Potts broadcasting on trees.
//!
//! Channels are represented by their π-distribution: a finite weighted
//! population of canonical (sorted) posterior vectors. On top of that
//! substrate the crate provides the belief-propagation operator, threshold
//! constants, a Monte Carlo tree simulator used as an oracle, and the two
//! SBM recovery algorithms.

pub mod bp;
pub mod channels;
pub mod constants;
pub mod error;
pub mod linalg;
pub mod mi;
pub mod rng;
pub mod sbm;
pub mod simplex;
pub mod treesim;

pub use error::{Error, Result};
