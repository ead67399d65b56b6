//! Crossing-state hidden semi-Markov models and backward approximate dynamic
//! programming for a wind/storage/grid dispatch problem.

// Fitting and sweep code walks several parallel-indexed tables at once;
// explicit index loops read better there than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod belief;
pub mod crossing;
pub mod error;
pub mod grid;
pub mod hsmm;
pub mod io;
pub mod mdp;
pub mod policy;
pub mod process;
pub mod price;
pub mod rng;
pub mod sim;
pub mod synth;
pub mod solver;
pub mod series;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
