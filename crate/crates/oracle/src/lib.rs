//! Test-only reference implementations.
//!
//! Everything here is written independently of `mtd-core`: plain row-major
//! slices in, naive dense loops, evaluated in double-double arithmetic so
//! that central finite differences are not limited by `f64` roundoff.

pub mod dd;
pub mod graph;
pub mod intra;

pub use dd::Dd;
