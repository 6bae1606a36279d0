//! Monte Carlo lab for internal DLA on `Z^d`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimate;
pub mod flashing;
pub mod idla;
pub mod lattice;
pub mod oracle;
pub mod shells;
pub mod walk;

pub use error::{Error, Result};
pub use lattice::{BallSpec, LatticePoint, Region, SiteSet};
pub use walk::SeedSpec;
