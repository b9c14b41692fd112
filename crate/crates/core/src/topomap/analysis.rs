use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::framework::{EventKind, StructuralEvent};
use crate::geometry::GridGeometry;
use crate::ragged::{write_snapshot, RaggedMatrix};
use crate::topomap::model::{Observer, TopomapModel, FF, LAT};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegreeStats {
    pub mean_in: f64,
    pub std_in: f64,
    pub mean_out: f64,
    pub std_out: f64,
}

fn mean_std(values: &[usize]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn degree_stats(matrix: &RaggedMatrix) -> DegreeStats {
    let (mean_in, std_in) = mean_std(&matrix.in_degrees());
    let (mean_out, std_out) = mean_std(&matrix.out_degrees());
    DegreeStats { mean_in, std_in, mean_out, std_out }
}

/// Mean toroidal distance between the grid positions of pre and post of
/// every synapse, plain and weighted by conductance. Since both layers share
/// the grid, this is the distance from each target's ideal source.
pub fn mean_distance(geometry: &GridGeometry, matrix: &RaggedMatrix, weights: &[f64]) -> (f64, f64) {
    let (mut n, mut sum, mut wsum, mut wd) = (0usize, 0.0, 0.0, 0.0);
    for (i, s, j) in matrix.edges() {
        let d = geometry.distance(i, j);
        let w = weights[matrix.index(i, s)];
        n += 1;
        sum += d;
        wsum += w;
        wd += w * d;
    }
    let plain = if n == 0 { 0.0 } else { sum / n as f64 };
    let weighted = if wsum == 0.0 { 0.0 } else { wd / wsum };
    (plain, weighted)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfilePoint {
    pub y_displacement: i64,
    pub conn_prob: f64,
    pub mean_weight: f64,
}

/// Connection probability and mean weight of pre neurons displaced by
/// `(0, dy)` from their post neuron, for every `dy`.
pub fn zero_x_profile(geometry: &GridGeometry, matrix: &RaggedMatrix, weights: &[f64]) -> Vec<ProfilePoint> {
    let side = geometry.side() as i64;
    let lo = -(side / 2);
    let hi = lo + side;
    let mut count = vec![0usize; side as usize];
    let mut wsum = vec![0.0; side as usize];
    for (i, s, j) in matrix.edges() {
        let (dx, dy) = geometry.displacement(j, i);
        if dx != 0.0 {
            continue;
        }
        let k = (dy as i64 - lo) as usize;
        count[k] += 1;
        wsum[k] += weights[matrix.index(i, s)];
    }
    let n = geometry.len() as f64;
    (lo..hi)
        .map(|dy| {
            let k = (dy - lo) as usize;
            ProfilePoint {
                y_displacement: dy,
                conn_prob: count[k] as f64 / n,
                mean_weight: if count[k] == 0 { 0.0 } else { wsum[k] / count[k] as f64 },
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecorderConfig {
    /// Interval of degree, distance and profile readouts (ms).
    pub snapshot_every_ms: f64,
    /// Width of the event time bins (ms).
    pub time_bin_ms: f64,
    /// Keep full connectivity snapshots at every readout.
    pub connectivity_snapshots: bool,
    /// Read degrees after every rewiring group, not only at readouts.
    pub per_update_degrees: bool,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        Self { snapshot_every_ms: 200.0, time_bin_ms: 200.0, connectivity_snapshots: false, per_update_degrees: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegreeRow {
    pub time_ms: f64,
    pub projection: &'static str,
    pub stats: DegreeStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceRow {
    pub time_ms: f64,
    pub projection: &'static str,
    pub edges: usize,
    pub mean: f64,
    pub weighted_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventSums {
    pub count: u64,
    pub distance_sum: f64,
}

/// Collects the connectivity analyses of a run.
#[derive(Clone, Debug, Default)]
pub struct Recorder {
    pub config: RecorderConfig,
    /// `(time_bin_ms, distance_bin) -> count` of feed-forward eliminations.
    pub eliminations: BTreeMap<(u64, u64), u64>,
    pub formations: BTreeMap<(u64, u64), u64>,
    /// Exact distance sums of feed-forward eliminations per time bin.
    pub elimination_sums: BTreeMap<u64, EventSums>,
    pub formation_sums: BTreeMap<u64, EventSums>,
    pub degrees: Vec<DegreeRow>,
    pub distances: Vec<DistanceRow>,
    pub profiles: Vec<(f64, &'static str, Vec<ProfilePoint>)>,
    pub snapshots: Vec<(f64, &'static str, Vec<u8>)>,
    snapshot_steps: u64,
}

impl Recorder {
    pub fn new(config: RecorderConfig) -> Self {
        Self { config, ..Default::default() }
    }

    /// Take the t = 0 readout and fix the readout cadence.
    pub fn start(&mut self, model: &TopomapModel) -> Result<()> {
        self.snapshot_steps = (self.config.snapshot_every_ms / model.params.neuron.h).round().max(1.0) as u64;
        self.readout(model)
    }

    fn projections(model: &TopomapModel) -> [(usize, &'static str); 2] {
        [(model.ff, FF), (model.lat, LAT)]
    }

    pub fn readout(&mut self, model: &TopomapModel) -> Result<()> {
        let t = model.time();
        for (p, name) in Self::projections(model) {
            let m = model.matrix(p);
            let w = model.weights(p);
            self.degrees.push(DegreeRow { time_ms: t, projection: name, stats: degree_stats(m) });
            let (mean, weighted_mean) = mean_distance(&model.geometry, m, w);
            self.distances.push(DistanceRow { time_ms: t, projection: name, edges: m.edge_count(), mean, weighted_mean });
            self.profiles.push((t, name, zero_x_profile(&model.geometry, m, w)));
            if self.config.connectivity_snapshots {
                let mut buf = Vec::new();
                write_snapshot(&mut buf, m, model.net.projection(p).vars(), "g", &[])?;
                self.snapshots.push((t, name, buf));
            }
        }
        Ok(())
    }

    fn time_bin(&self, t: f64) -> u64 {
        ((t / self.config.time_bin_ms).floor() * self.config.time_bin_ms) as u64
    }

    /// Feed-forward distance samples of eliminations with `time < until_ms`.
    pub fn elimination_mean_before(&self, until_ms: f64) -> Option<f64> {
        let (mut c, mut s) = (0u64, 0.0);
        for (&bin, e) in &self.elimination_sums {
            if (bin as f64) < until_ms {
                c += e.count;
                s += e.distance_sum;
            }
        }
        (c > 0).then(|| s / c as f64)
    }

    pub fn degree_series(&self, projection: &str) -> Vec<(f64, DegreeStats)> {
        self.degrees.iter().filter(|r| r.projection == projection).map(|r| (r.time_ms, r.stats)).collect()
    }

    pub fn distance_series(&self, projection: &str) -> Vec<&DistanceRow> {
        self.distances.iter().filter(|r| r.projection == projection).collect()
    }

    /// Write `eliminations.csv`, `formations.csv`, `degrees.csv`,
    /// `profile.csv`, `distances.csv` and any snapshots into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (file, hist) in [("eliminations.csv", &self.eliminations), ("formations.csv", &self.formations)] {
            let mut w = csv::Writer::from_path(dir.join(file))?;
            w.write_record(["time_bin_ms", "distance_bin", "count"])?;
            for (&(t, d), &c) in hist {
                w.write_record([t.to_string(), d.to_string(), c.to_string()])?;
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("degrees.csv"))?;
        w.write_record(["time_ms", "projection", "mean_in", "std_in", "mean_out", "std_out"])?;
        for r in &self.degrees {
            let s = r.stats;
            w.write_record([
                r.time_ms.to_string(),
                r.projection.to_string(),
                s.mean_in.to_string(),
                s.std_in.to_string(),
                s.mean_out.to_string(),
                s.std_out.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("profile.csv"))?;
        w.write_record(["time_ms", "projection", "y_displacement", "conn_prob", "mean_weight"])?;
        for (t, name, points) in &self.profiles {
            for p in points {
                w.write_record([
                    t.to_string(),
                    name.to_string(),
                    p.y_displacement.to_string(),
                    p.conn_prob.to_string(),
                    p.mean_weight.to_string(),
                ])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("distances.csv"))?;
        w.write_record(["time_ms", "projection", "edges", "mean_distance", "weighted_mean_distance"])?;
        for r in &self.distances {
            w.write_record([
                r.time_ms.to_string(),
                r.projection.to_string(),
                r.edges.to_string(),
                r.mean.to_string(),
                r.weighted_mean.to_string(),
            ])?;
        }
        w.flush()?;
        if !self.snapshots.is_empty() {
            let snap = dir.join("snapshots");
            fs::create_dir_all(&snap)?;
            for (t, name, buf) in &self.snapshots {
                fs::write(snap.join(format!("{name}_{t}ms.csv")), buf)?;
            }
        }
        Ok(())
    }
}

impl Observer for Recorder {
    fn after_rewiring(&mut self, model: &TopomapModel, events: &[StructuralEvent]) {
        let bin = self.time_bin(model.time());
        for e in events.iter().filter(|e| e.projection == model.ff) {
            let d = model.geometry.distance(e.pre as usize, e.post as usize);
            let (hist, sums) = match e.kind {
                EventKind::Removed => (&mut self.eliminations, &mut self.elimination_sums),
                EventKind::Added => (&mut self.formations, &mut self.formation_sums),
            };
            *hist.entry((bin, d.floor() as u64)).or_default() += 1;
            let s = sums.entry(bin).or_default();
            s.count += 1;
            s.distance_sum += d;
        }
        if self.config.per_update_degrees {
            let t = model.time();
            for (p, name) in Self::projections(model) {
                self.degrees.push(DegreeRow { time_ms: t, projection: name, stats: degree_stats(model.matrix(p)) });
            }
        }
    }

    fn after_step(&mut self, model: &TopomapModel) {
        if self.snapshot_steps > 0 && model.step_index() % self.snapshot_steps == 0 {
            self.readout(model).expect("in-memory snapshot");
        }
    }
}
