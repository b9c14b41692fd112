//! Recurrent ALIF classifier trained with e-prop and Adam, optionally with
//! DEEP R rewiring of the input and recurrent synapses.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use super::config::ClassifierConfig;
use super::task::{Example, SyntheticTask};
use crate::deep_r::DeepR;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::framework::Model;
use crate::neurons::{AlifLayer, AlifParams, ReadoutLayer};
use crate::plasticity::{
    cross_entropy, learning_signal, output_error, surrogates, Adam, AdamParams, Eligibility, EpropCoeffs, OutputGrad,
};
use crate::ragged::{pairwise_bernoulli_rows, RaggedMatrix, SynapseVars};
use crate::rng::{streams, CounterRng};

pub const INPUT: &str = "input";
pub const HIDDEN: &str = "hidden";
pub const IN_HID: &str = "in_hid";
pub const HID_HID: &str = "hid_hid";
pub const PLANES: [&str; 4] = ["g", "grad", "adam_m", "adam_v"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchRecord {
    pub batch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub rewired: u64,
    pub total: u64,
}

impl BatchRecord {
    pub fn rewiring_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.rewired as f64 / self.total as f64
        }
    }
}

/// Summed over the examples of one batch.
#[derive(Clone, Debug)]
struct ExampleResult {
    loss: f64,
    correct: bool,
    grad_in: Vec<f64>,
    grad_rec: Vec<f64>,
    out: OutputGrad,
}

/// Read-only view of the parameters shared by all replicas of a batch.
struct Weights<'a> {
    m_in: &'a RaggedMatrix,
    w_in: &'a [f64],
    m_rec: &'a RaggedMatrix,
    w_rec: &'a [f64],
    w_out: &'a [f64],
    b_out: &'a [f64],
}

pub struct Classifier {
    pub config: ClassifierConfig,
    pub task: SyntheticTask,
    pub net: Model,
    pub alif: AlifParams,
    /// Row-major `num_classes x num_hidden`.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    out_m: Vec<f64>,
    out_v: Vec<f64>,
    bias_m: Vec<f64>,
    bias_v: Vec<f64>,
    adam: Adam,
    pub deep_r: Vec<DeepR>,
    seed: u64,
    order: Vec<usize>,
    order_epoch: Option<usize>,
    pub history: Vec<BatchRecord>,
}

fn normal(rng: &mut CounterRng) -> f64 {
    StandardNormal.sample(rng)
}

fn build_projection(
    num_pre: usize,
    num_post: usize,
    density: f64,
    no_self: bool,
    seed: u64,
    stream_epoch: u64,
    exec: &Exec,
) -> Result<(RaggedMatrix, SynapseVars)> {
    let rows = pairwise_bernoulli_rows(
        num_pre,
        num_post,
        |i, j| if no_self && i == j { 0.0 } else { density },
        seed,
        streams::CONNECT_INIT + stream_epoch as u32,
        exec,
    );
    let longest = rows.iter().map(Vec::len).max().unwrap_or(0);
    let capacity = if density >= 1.0 { num_post } else { (longest + longest / 2 + 4).min(num_post) };
    let matrix = RaggedMatrix::from_rows_with_capacity(num_post, &rows, capacity)?;
    let mut vars = SynapseVars::new(&matrix, &PLANES);
    let scale = 1.0 / (num_pre as f64 * density).sqrt();
    let w = vars.plane_mut(0);
    for (i, row) in rows.iter().enumerate() {
        let mut rng = CounterRng::keyed(seed, streams::WEIGHT_INIT, stream_epoch, i as u32);
        for s in 0..row.len() {
            w[matrix.index(i, s)] = scale * normal(&mut rng);
        }
    }
    Ok((matrix, vars))
}

impl Classifier {
    pub fn build(config: ClassifierConfig, seed: u64, exec: Exec) -> Result<Self> {
        let alif = AlifParams { tau_mem: config.tau_mem, tau_adapt: config.tau_adapt, ..AlifParams::default() };
        let task = SyntheticTask::new(
            config.num_classes,
            config.num_inputs,
            config.example_steps,
            alif.dt,
            config.rate_low,
            config.rate_high,
            seed,
        );
        let (n_in, n_hid, n_out) = (config.num_inputs, config.num_hidden, config.num_classes);
        let mut net = Model::new(seed, exec.clone());
        net.add_population(INPUT, n_in)?;
        net.add_population(HIDDEN, n_hid)?;
        let (m, v) = build_projection(n_in, n_hid, config.input_density, false, seed, 0, &exec)?;
        net.add_projection(IN_HID, INPUT, HIDDEN, m, v)?;
        let (m, v) = build_projection(n_hid, n_hid, config.recurrent_density, true, seed, 1, &exec)?;
        net.add_projection(HID_HID, HIDDEN, HIDDEN, m, v)?;

        let mut rng = CounterRng::keyed(seed, streams::WEIGHT_INIT, 2, 0);
        let scale = 1.0 / (n_hid as f64).sqrt();
        let w_out = (0..n_out * n_hid).map(|_| scale * normal(&mut rng)).collect();

        let mut deep_r = Vec::new();
        if config.deep_r {
            for (proj, no_self) in [(IN_HID, false), (HID_HID, true)] {
                let d = DeepR::register(&mut net, proj, "g", config.l1, no_self)?;
                d.init(&mut net)?;
                deep_r.push(d);
            }
        }
        let adam = Adam::new(AdamParams { eta: config.learning_rate, ..AdamParams::default() });
        Ok(Self {
            config,
            task,
            net,
            alif,
            w_out,
            b_out: vec![0.0; n_out],
            out_m: vec![0.0; n_out * n_hid],
            out_v: vec![0.0; n_out * n_hid],
            bias_m: vec![0.0; n_out],
            bias_v: vec![0.0; n_out],
            adam,
            deep_r,
            seed,
            order: Vec::new(),
            order_epoch: None,
            history: Vec::new(),
        })
    }

    pub fn matrix(&self, projection: &str) -> &RaggedMatrix {
        self.net.projection_by_name(projection).expect("projection").matrix()
    }

    pub fn weights(&self, projection: &str) -> &[f64] {
        self.net.projection_by_name(projection).expect("projection").vars().by_name("g").expect("weights")
    }

    fn shared(&self) -> Weights<'_> {
        Weights {
            m_in: self.matrix(IN_HID),
            w_in: self.weights(IN_HID),
            m_rec: self.matrix(HID_HID),
            w_rec: self.weights(HID_HID),
            w_out: &self.w_out,
            b_out: &self.b_out,
        }
    }

    /// Training example index at position `k` of the shuffled stream.
    fn train_index(&mut self, k: usize) -> usize {
        let n = self.config.train_examples;
        let epoch = k / n;
        if self.order_epoch != Some(epoch) {
            let mut rng = CounterRng::keyed(self.seed, streams::TASK, 2, epoch as u32);
            self.order = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.uniform_int(i as u64 + 1) as usize;
                self.order.swap(i, j);
            }
            self.order_epoch = Some(epoch);
        }
        self.order[k % n]
    }

    /// Run one example; with `learn` the e-prop gradients are accumulated.
    fn simulate(config: &ClassifierConfig, alif: &AlifParams, w: &Weights<'_>, ex: &Example, learn: bool) -> ExampleResult {
        let serial = Exec::serial();
        let (n_in, n_hid, n_out) = (config.num_inputs, config.num_hidden, config.num_classes);
        let mut layer = AlifLayer::new(n_hid, alif);
        let kappa = (-alif.dt / config.tau_out).exp();
        let mut readout = ReadoutLayer::new(n_out, kappa);
        readout.bias.copy_from_slice(w.b_out);
        let coeffs = EpropCoeffs::from_layer(&layer);
        let mut el_in = Eligibility::new(w.m_in);
        let mut el_rec = Eligibility::new(w.m_rec);
        let mut out_grad = OutputGrad::new(n_out, n_hid);
        let mut zbar_in = vec![0.0; n_in];
        let mut zbar_hid = vec![0.0; n_hid];
        let mut zbar_out = vec![0.0; n_hid];
        let (mut ext, mut rec) = (vec![0.0; n_hid], vec![0.0; n_hid]);
        let (mut psi, mut learning) = (vec![0.0; n_hid], vec![0.0; n_hid]);
        let (mut drive, mut err, mut y_sum) = (vec![0.0; n_out], vec![0.0; n_out], vec![0.0; n_out]);
        let mut prev: Vec<u32> = Vec::new();
        let mut loss = 0.0;

        for input in &ex.spikes {
            ext.fill(0.0);
            w.m_in.propagate_spikes(w.w_in, input, &mut ext);
            rec.fill(0.0);
            w.m_rec.propagate_spikes(w.w_rec, &prev, &mut rec);
            let z = layer.step(&rec, &ext, &serial);

            drive.fill(0.0);
            for (k, d) in drive.iter_mut().enumerate() {
                let row = &w.w_out[k * n_hid..(k + 1) * n_hid];
                *d = z.iter().map(|&j| row[j as usize]).sum();
            }
            let y = readout.step(&drive);
            loss += cross_entropy(y, ex.label);
            for (s, &v) in y_sum.iter_mut().zip(y) {
                *s += v;
            }

            if learn {
                output_error(y, ex.label, &mut err);
                learning_signal(w.w_out, n_hid, &err, &mut learning);
                surrogates(&layer, &mut psi);
                for zb in &mut zbar_in {
                    *zb *= coeffs.alpha;
                }
                for &i in input {
                    zbar_in[i as usize] += 1.0;
                }
                el_in.accumulate_step(w.m_in, &zbar_in, &psi, &learning, coeffs, &serial);
                el_rec.accumulate_step(w.m_rec, &zbar_hid, &psi, &learning, coeffs, &serial);
                for zb in &mut zbar_out {
                    *zb *= kappa;
                }
                for &j in &z {
                    zbar_out[j as usize] += 1.0;
                }
                out_grad.accumulate(&err, &zbar_out, kappa);
            }
            for zb in &mut zbar_hid {
                *zb *= coeffs.alpha;
            }
            for &j in &z {
                zbar_hid[j as usize] += 1.0;
            }
            prev = z;
        }
        let predicted = argmax(&y_sum);
        ExampleResult {
            loss: loss / ex.spikes.len().max(1) as f64,
            correct: predicted == ex.label,
            grad_in: el_in.grad,
            grad_rec: el_rec.grad,
            out: out_grad,
        }
    }

    /// One training batch: simulate, sum gradients, Adam step and rewiring.
    pub fn train_batch(&mut self) -> Result<BatchRecord> {
        let batch = self.history.len();
        let bs = self.config.batch_size;
        let indices: Vec<usize> = (0..bs).map(|k| self.train_index(batch * bs + k)).collect();
        let examples: Vec<Example> = indices.iter().map(|&i| self.task.train_example(i)).collect();
        let exec = self.net.exec().clone();
        let results = {
            let w = self.shared();
            let (config, alif) = (&self.config, &self.alif);
            exec.map_range(bs, 1, |k| Self::simulate(config, alif, &w, &examples[k], true))
        };

        let mut loss = 0.0;
        let mut correct = 0usize;
        let n_hid = self.config.num_hidden;
        let mut out = OutputGrad::new(self.config.num_classes, n_hid);
        for r in &results {
            loss += r.loss;
            correct += r.correct as usize;
            for (a, b) in out.d_w.iter_mut().zip(&r.out.d_w) {
                *a += b;
            }
            for (a, b) in out.d_b.iter_mut().zip(&r.out.d_b) {
                *a += b;
            }
        }
        loss /= bs as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(batch));
        }
        for (proj, pick) in [(IN_HID, 0usize), (HID_HID, 1)] {
            let p = self.net.projection_index(proj).expect("projection");
            let grad = self.net.projection_mut(p).vars_mut().plane_mut(1);
            for r in &results {
                let g = if pick == 0 { &r.grad_in } else { &r.grad_rec };
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        drop(results);

        for d in &self.deep_r {
            d.l1_step(&mut self.net, "grad")?;
        }
        self.adam.begin_step();
        for proj in [IN_HID, HID_HID] {
            let p = self.net.projection_index(proj).expect("projection");
            let (matrix, vars, _) = self.net.projection_mut(p).parts_mut();
            let [w, g, m, v] = vars.planes_mut([0, 1, 2, 3]);
            for i in 0..matrix.num_pre() {
                let base = matrix.index(i, 0);
                let r = base..base + matrix.row_length(i);
                self.adam.apply(&mut w[r.clone()], &mut g[r.clone()], &mut m[r.clone()], &mut v[r]);
            }
        }
        self.adam.apply(&mut self.w_out, &mut out.d_w, &mut self.out_m, &mut self.out_v);
        self.adam.apply(&mut self.b_out, &mut out.d_b, &mut self.bias_m, &mut self.bias_v);

        let (mut rewired, mut total) = (0, 0);
        for d in &mut self.deep_r {
            let rec = d.rewire(&mut self.net)?;
            rewired += rec.removed;
            total += rec.total;
        }
        let record = BatchRecord { batch, loss, accuracy: correct as f64 / bs as f64, rewired, total };
        self.history.push(record);
        Ok(record)
    }

    /// Train for the configured number of batches.
    pub fn train(&mut self) -> Result<&[BatchRecord]> {
        while self.history.len() < self.config.num_batches {
            self.train_batch()?;
        }
        Ok(&self.history)
    }

    /// Accuracy on the held-out examples.
    pub fn test_accuracy(&self) -> f64 {
        let n = self.config.test_examples;
        if n == 0 {
            return f64::NAN;
        }
        let w = self.shared();
        let (config, alif, task) = (&self.config, &self.alif, &self.task);
        let correct = self
            .net
            .exec()
            .map_range(n, 1, |k| Self::simulate(config, alif, &w, &task.test_example(k), false).correct)
            .into_iter()
            .filter(|&c| c)
            .count();
        correct as f64 / n as f64
    }

    /// `batch,loss,accuracy,rewired,total,rewiring_fraction`
    pub fn history_csv(&self) -> String {
        let mut s = String::from("batch,loss,accuracy,rewired,total,rewiring_fraction\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.batch,
                r.loss,
                r.accuracy,
                r.rewired,
                r.total,
                r.rewiring_fraction()
            ));
        }
        s
    }

    /// Write `training.csv`, the DEEP R logs and the final connectivity.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("training.csv"), self.history_csv())?;
        for d in &self.deep_r {
            fs::write(dir.join(format!("deep_r_{}.csv", d.projection())), d.log_csv())?;
        }
        for proj in [IN_HID, HID_HID] {
            let mut f = fs::File::create(dir.join(format!("{proj}_final.csv")))?;
            let p = self.net.projection_by_name(proj).expect("projection");
            crate::ragged::write_snapshot(&mut f, p.matrix(), p.vars(), "g", &[])?;
        }
        Ok(())
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
