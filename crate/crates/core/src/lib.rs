//! Square-ice height functions: uniform homomorphisms Z² → Z.
//!
//! Exact oracles for small domains, a heat-bath sampler for large ones, and
//! crossing, loop and variance observables.

pub mod error;
pub mod lattice;
pub mod height;
pub mod exact;
pub mod mcmc;
pub mod connect;
pub mod estimate;
pub mod verify;

pub use error::{Error, Result};
