//! Std companion of `shiftguard-core`: Clarabel conic backend, model and CSV
//! file formats, experiment configuration and runners, SVG plots.

use openblas_src as _;

pub mod backend;
pub mod config;
pub mod error;
pub mod experiment;
pub mod model;
pub mod plot;
pub mod records;
pub mod verify;

pub use error::{Error, Result};
pub use shiftguard_core as core;
