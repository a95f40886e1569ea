#![no_std]
//! Allocation-only core: Gaussian confidence regions, ReLU surrogates,
//! quadratic-constraint reach bounds, convex action adaptation, simulated
//! vehicles and a particle-swarm baseline.

extern crate alloc;

pub mod error;
pub mod gauss;
pub mod relu;
pub mod train;
pub mod conic;
pub mod deep_sdp;
pub mod envs;
pub mod pso;
pub mod surrogate;
pub mod adapt;

pub use error::{Error, Result};
