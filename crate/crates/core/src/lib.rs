//! Safe feature screening for l1-penalized quantile regression.
//!
//! The crate bundles the pinball-loss calculus ([`quantile`]), the dual
//! region and screening rule ([`dual`]), an ADMM path solver ([`solver`]),
//! a simulation generator ([`simgen`]), the benchmark harness ([`bench`]),
//! data loaders ([`io`]) and the command-line front end ([`cli`]).

pub mod bench;
pub mod cli;
pub mod dual;
pub mod error;
pub mod io;
pub mod linalg;
pub mod quantile;
pub mod simgen;
pub mod solver;

pub use error::{Error, Result};
pub use quantile::QuantileLevel;
