//! Sparse spiking network simulation with connectivity that changes at
//! runtime.

pub mod bitfield;
pub mod deep_r;
pub mod error;
pub mod experiments;
pub mod exec;
pub mod framework;
pub mod geometry;
pub mod neurons;
pub mod plasticity;
pub mod ragged;
pub mod rng;
pub mod topomap;

pub use error::{Error, Result};
pub use exec::Exec;
