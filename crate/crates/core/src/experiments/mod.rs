//! Experiment drivers behind the command-line tool.

pub mod classifier;
pub mod config;
pub mod task;

pub use classifier::{BatchRecord, Classifier};
pub use config::{BenchConfig, ClassifierConfig, ExperimentConfig, ExperimentKind, TopomapConfig};
pub use task::{Example, SyntheticTask};

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::error::Result;
use crate::exec::Exec;
use crate::framework::PhaseTimers;
use crate::topomap::{Recorder, RecorderConfig, RunRecord, TopomapModel};

#[derive(Clone, Debug)]
pub struct TopomapOutcome {
    pub run: RunRecord,
    pub recorder: Recorder,
}

/// Build the map at the configured scale, run it with readouts and write
/// the analysis CSVs, `timing.csv` and the effective `config.toml` into the
/// output directory.
pub fn cmd_topomap(config: &ExperimentConfig) -> Result<TopomapOutcome> {
    config.validate()?;
    let t = &config.topomap;
    let mut model = TopomapModel::build(t.model_params(), config.seed, Exec::with_workers(config.workers))?;
    model.net.set_record_events(true);
    let mut recorder = Recorder::new(RecorderConfig {
        snapshot_every_ms: t.snapshot_every_ms,
        time_bin_ms: t.time_bin_ms,
        connectivity_snapshots: t.connectivity_snapshots,
        per_update_degrees: false,
    });
    recorder.start(&model)?;
    let run = model.run(t.duration_ms, &mut recorder)?;
    let dir = &config.out_dir;
    recorder.write(dir)?;
    fs::write(dir.join("timing.csv"), run.timers.to_csv(run.wall_seconds))?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    Ok(TopomapOutcome { run, recorder })
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub history: Vec<BatchRecord>,
    pub test_accuracy: f64,
    /// Whether the input and recurrent connectivity ended up as it started.
    pub connectivity_unchanged: bool,
}

/// Train the classifier and write `training.csv`, the rewiring logs, the
/// final connectivity and `summary.csv`.
pub fn cmd_classifier(config: &ExperimentConfig) -> Result<ClassifierOutcome> {
    config.validate()?;
    let mut c = Classifier::build(config.classifier.clone(), config.seed, Exec::with_workers(config.workers))?;
    let before = edge_lists(&c);
    c.train()?;
    let connectivity_unchanged = edge_lists(&c) == before;
    let test_accuracy = c.test_accuracy();
    let dir = &config.out_dir;
    c.write(dir)?;
    fs::write(
        dir.join("summary.csv"),
        format!("test_accuracy,connectivity_unchanged\n{test_accuracy},{connectivity_unchanged}\n"),
    )?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    Ok(ClassifierOutcome { history: c.history.clone(), test_accuracy, connectivity_unchanged })
}

fn edge_lists(c: &Classifier) -> Vec<Vec<(usize, usize)>> {
    [classifier::IN_HID, classifier::HID_HID]
        .iter()
        .map(|p| c.matrix(p).edges().map(|(i, _, j)| (i, j)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub scale: usize,
    pub neurons: usize,
    pub timers: PhaseTimers,
    pub total: f64,
}

impl BenchRow {
    pub fn per_neuron(&self) -> f64 {
        self.total / self.neurons as f64
    }
}

/// Time each scale for a fixed duration without readouts. Model
/// construction is not timed.
pub fn cmd_bench(config: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &scale in &config.bench.scales {
        let params = crate::topomap::TopomapParams { scale, ..config.topomap.params.clone() };
        let mut model = TopomapModel::build(params, config.seed, Exec::with_workers(config.workers))?;
        let start = Instant::now();
        let run = model.run(config.bench.duration_ms, &mut ())?;
        let total = start.elapsed().as_secs_f64();
        rows.push(BenchRow { scale, neurons: 2 * model.num_neurons(), timers: run.timers, total });
    }
    write_bench(&config.out_dir, &rows)?;
    Ok(rows)
}

/// `bench.csv` with `scale,phase,seconds` rows, six phases and `total` per
/// scale.
pub fn write_bench(dir: &Path, rows: &[BenchRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("bench.csv"))?;
    w.write_record(["scale", "phase", "seconds"])?;
    for r in rows {
        for (name, v) in PhaseTimers::PHASES.iter().zip(r.timers.values()) {
            w.write_record([r.scale.to_string(), name.to_string(), v.to_string()])?;
        }
        w.write_record([r.scale.to_string(), "total".into(), r.total.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Dispatch on the configured kind; returns a short human-readable report.
pub fn run(config: &ExperimentConfig) -> Result<String> {
    match config.kind {
        ExperimentKind::Topomap => {
            let o = cmd_topomap(config)?;
            Ok(format!(
                "topomap: {} steps, {} rewiring updates, {:.2} s wall",
                o.run.steps, o.run.rewiring_executions, o.run.wall_seconds
            ))
        }
        ExperimentKind::Classifier => {
            let o = cmd_classifier(config)?;
            let last = o.history.last();
            Ok(format!(
                "classifier: {} batches, final loss {:.4}, final batch accuracy {:.3}, test accuracy {:.3}",
                o.history.len(),
                last.map_or(f64::NAN, |r| r.loss),
                last.map_or(f64::NAN, |r| r.accuracy),
                o.test_accuracy
            ))
        }
        ExperimentKind::Bench => {
            let rows = cmd_bench(config)?;
            let mut s = String::from("bench:");
            for r in rows {
                s.push_str(&format!(" s={} {:.3} s ({:.3e} s/neuron)", r.scale, r.total, r.per_neuron()));
            }
            Ok(s)
        }
    }
}
