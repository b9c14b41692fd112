//! Time-stepped neuron and input models.

pub mod alif;
pub mod lif;
pub mod poisson;

pub use alif::{AlifLayer, AlifNeuron, AlifParams, ReadoutLayer};
pub use lif::{LifCondLayer, LifCondNeuron, LifCondParams};
pub use poisson::{replicated_centers, PoissonSource, StimulusParams};

use std::io::Write;

/// Append `time_ms,neuron_id` rows for one step of spikes.
pub fn write_spikes<W: Write>(out: &mut W, time_ms: f64, spikes: &[u32]) -> std::io::Result<()> {
    for &i in spikes {
        writeln!(out, "{time_ms},{i}")?;
    }
    Ok(())
}
