//! Experiment configuration, read from and written to TOML.
//!
//! ```toml
//! kind = "classifier"
//! seed = 1
//! workers = 1
//! out_dir = "out"
//!
//! [topomap]
//! scale = 1
//! duration_ms = 60000.0
//! snapshot_every_ms = 200.0
//! time_bin_ms = 200.0
//! connectivity_snapshots = false
//!
//! [classifier]
//! num_hidden = 128
//! batch_size = 32
//! num_batches = 200
//! input_density = 1.0
//! recurrent_density = 1.0
//! deep_r = false
//! l1 = 0.005
//! learning_rate = 0.01
//!
//! [bench]
//! scales = [1, 2, 3]
//! duration_ms = 1000.0
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topomap::TopomapParams;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Topomap,
    Classifier,
    Bench,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub topomap: TopomapConfig,
    pub classifier: ClassifierConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::default(),
            seed: 1,
            workers: 1,
            out_dir: PathBuf::from("out"),
            topomap: TopomapConfig::default(),
            classifier: ClassifierConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopomapConfig {
    pub scale: usize,
    pub duration_ms: f64,
    pub snapshot_every_ms: f64,
    pub time_bin_ms: f64,
    /// Also write full connectivity snapshots at every readout.
    pub connectivity_snapshots: bool,
    pub params: TopomapParams,
}

impl Default for TopomapConfig {
    fn default() -> Self {
        Self {
            scale: 1,
            duration_ms: 60_000.0,
            snapshot_every_ms: 200.0,
            time_bin_ms: 200.0,
            connectivity_snapshots: false,
            params: TopomapParams::default(),
        }
    }
}

impl TopomapConfig {
    /// Model parameters with `scale` applied.
    pub fn model_params(&self) -> TopomapParams {
        TopomapParams { scale: self.scale, ..self.params.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub num_inputs: usize,
    pub num_hidden: usize,
    pub num_classes: usize,
    pub example_steps: usize,
    pub batch_size: usize,
    pub num_batches: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    /// Connection probability of input-to-hidden and hidden-to-hidden
    /// synapses; 1.0 is dense.
    pub input_density: f64,
    pub recurrent_density: f64,
    pub deep_r: bool,
    pub l1: f64,
    pub learning_rate: f64,
    /// Input rates of the class templates (Hz).
    pub rate_low: f64,
    pub rate_high: f64,
    pub tau_mem: f64,
    pub tau_adapt: f64,
    pub tau_out: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            num_inputs: 20,
            num_hidden: 128,
            num_classes: 3,
            example_steps: 200,
            batch_size: 32,
            num_batches: 200,
            train_examples: 960,
            test_examples: 96,
            input_density: 1.0,
            recurrent_density: 1.0,
            deep_r: false,
            l1: 0.005,
            learning_rate: 0.01,
            rate_low: 5.0,
            rate_high: 60.0,
            tau_mem: 20.0,
            tau_adapt: 2000.0,
            tau_out: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub scales: Vec<usize>,
    pub duration_ms: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { scales: vec![1, 2, 3], duration_ms: 1000.0 }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    check(x > 0.0 && x.is_finite(), || format!("{name} must be positive and finite, got {x}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Canonical TOML form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check(self.workers >= 1, || "workers must be at least 1".into())?;
        let t = &self.topomap;
        check(t.scale >= 1, || "scale must be at least 1".into())?;
        check(t.duration_ms >= 0.0 && t.duration_ms.is_finite(), || {
            format!("duration_ms must be >= 0, got {}", t.duration_ms)
        })?;
        positive("snapshot_every_ms", t.snapshot_every_ms)?;
        positive("time_bin_ms", t.time_bin_ms)?;
        t.model_params().validate()?;

        let c = &self.classifier;
        for (name, v) in [
            ("num_inputs", c.num_inputs),
            ("num_hidden", c.num_hidden),
            ("example_steps", c.example_steps),
            ("batch_size", c.batch_size),
            ("train_examples", c.train_examples),
        ] {
            check(v >= 1, || format!("{name} must be at least 1"))?;
        }
        check(c.num_classes >= 2, || "num_classes must be at least 2".into())?;
        for (name, p) in [("input_density", c.input_density), ("recurrent_density", c.recurrent_density)] {
            check(p > 0.0 && p <= 1.0, || format!("{name} must lie in (0, 1], got {p}"))?;
        }
        check(c.l1 >= 0.0 && c.l1.is_finite(), || format!("l1 must be >= 0, got {}", c.l1))?;
        positive("learning_rate", c.learning_rate)?;
        positive("tau_mem", c.tau_mem)?;
        positive("tau_adapt", c.tau_adapt)?;
        positive("tau_out", c.tau_out)?;
        check(c.rate_low >= 0.0 && c.rate_high > c.rate_low && c.rate_high < 1000.0, || {
            format!("need 0 <= rate_low < rate_high < 1000, got {} and {}", c.rate_low, c.rate_high)
        })?;

        let b = &self.bench;
        check(!b.scales.is_empty() && b.scales.iter().all(|&s| s >= 1), || {
            "bench scales must be a non-empty list of positive integers".into()
        })?;
        check(b.duration_ms > 0.0 && b.duration_ms.is_finite(), || {
            format!("bench duration_ms must be positive, got {}", b.duration_ms)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = c.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml("kind = \"bench\"\n[bench]\nscales = [1, 2]\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::Bench);
        assert_eq!(c.bench.scales, vec![1, 2]);
        assert_eq!(c.bench.duration_ms, 1000.0);
        assert_eq!(c.classifier.l1, 0.005);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("colour = 3").is_err());
        let mut c = ExperimentConfig::default();
        c.classifier.input_density = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.topomap.scale = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.bench.scales.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.classifier.l1 = f64::NAN;
        assert!(c.validate().is_err());
    }
}
