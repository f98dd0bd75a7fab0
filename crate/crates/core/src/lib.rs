//! Simultaneous confidence regions and bands for functional parameters.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bands;
pub mod ellipsoid;
pub mod error;
pub mod estimators;
pub mod fnspace;
pub mod ghost;
pub mod harness;
pub mod hyperrect;
mod numeric;
pub mod scalardist;

pub use error::{Error, Result};
pub use numeric::derive_seed;
