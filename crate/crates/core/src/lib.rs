//! Transfer Bayesian optimization by Monte Carlo tree search space
//! partitioning.
pub mod bench;
pub mod domain;
pub mod error;
pub mod io;
pub mod optimizer;
pub mod partition;
pub mod region;
pub mod similarity;
pub mod surrogate;
pub mod trace;
pub mod tree;

pub use error::{Error, Result};
