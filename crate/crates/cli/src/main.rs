use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rewire::experiments::{self, ExperimentConfig, ExperimentKind};

/// Spiking network simulations with connectivity that changes at runtime.
#[derive(Parser, Debug)]
#[command(name = "rewire", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Topographic map refinement with rewiring and STDP.
    Topomap(Common),
    /// Train the recurrent classifier on the synthetic task.
    Classifier(Common),
    /// Time the topographic map at several scales.
    Bench(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Domain scale (topomap); for bench, a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    scale: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Model time to simulate (ms).
    #[arg(long)]
    duration_ms: Option<f64>,
    #[arg(long)]
    snapshot_every_ms: Option<f64>,
    #[arg(long, value_enum)]
    deep_r: Option<Switch>,
    /// L1 strength of DEEP R (default 0.005).
    #[arg(long)]
    l1: Option<f64>,
    /// Connection probability of both classifier projections.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    batches: Option<usize>,
}

fn build_config(kind: ExperimentKind, a: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    c.kind = kind;
    if let Some(seed) = a.seed {
        c.seed = seed;
    }
    if let Some(out) = &a.out {
        c.out_dir = out.clone();
    }
    if let Some(w) = a.workers {
        c.workers = w;
    }
    if !a.scale.is_empty() {
        if kind == ExperimentKind::Bench {
            c.bench.scales = a.scale.clone();
        } else {
            anyhow::ensure!(a.scale.len() == 1, "--scale takes a single value for {kind:?}");
            c.topomap.scale = a.scale[0];
        }
    }
    if let Some(d) = a.duration_ms {
        if kind == ExperimentKind::Bench {
            c.bench.duration_ms = d;
        } else {
            c.topomap.duration_ms = d;
        }
    }
    if let Some(s) = a.snapshot_every_ms {
        c.topomap.snapshot_every_ms = s;
    }
    if let Some(d) = a.deep_r {
        c.classifier.deep_r = matches!(d, Switch::On);
    }
    if let Some(l1) = a.l1 {
        c.classifier.l1 = l1;
    }
    if let Some(p) = a.density {
        c.classifier.input_density = p;
        c.classifier.recurrent_density = p;
    }
    if let Some(b) = a.batches {
        c.classifier.num_batches = b;
    }
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Topomap(a) => (ExperimentKind::Topomap, a),
        Command::Classifier(a) => (ExperimentKind::Classifier, a),
        Command::Bench(a) => (ExperimentKind::Bench, a),
    };
    let result = build_config(kind, args).and_then(|c| Ok(experiments::run(&c)?));
    match result {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
