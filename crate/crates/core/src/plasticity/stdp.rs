use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::ragged::{RaggedMatrix, TransposeMap};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdpParams {
    pub tau_plus: f64,
    pub tau_minus: f64,
    /// Maximum conductance; also the upper clamp.
    pub g_max: f64,
    pub w_min: f64,
    /// Potentiation rate relative to `g_max`.
    pub a_plus_rel: f64,
    /// Depression to potentiation area ratio.
    pub b_ratio: f64,
    /// Time step (ms).
    pub h: f64,
    pub clamp: bool,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self {
            tau_plus: 20.0,
            tau_minus: 64.0,
            g_max: 0.2,
            w_min: 0.0,
            a_plus_rel: 0.1,
            b_ratio: 1.2,
            h: 0.1,
            clamp: true,
        }
    }
}

impl StdpParams {
    pub fn a_plus(&self) -> f64 {
        self.a_plus_rel * self.g_max
    }

    pub fn a_minus(&self) -> f64 {
        self.b_ratio * self.a_plus() * self.tau_plus / self.tau_minus
    }

    pub fn w_max(&self) -> f64 {
        self.g_max
    }

    #[inline]
    fn bound(&self, g: f64) -> f64 {
        if self.clamp {
            g.clamp(self.w_min, self.w_max())
        } else {
            g
        }
    }
}

/// All-to-all pairing STDP with one presynaptic and one postsynaptic trace
/// per neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct Stdp {
    pub params: StdpParams,
    /// Presynaptic traces.
    pub x: Vec<f64>,
    /// Postsynaptic traces.
    pub y: Vec<f64>,
    decay_x: f64,
    decay_y: f64,
}

impl Stdp {
    pub fn new(num_pre: usize, num_post: usize, params: StdpParams) -> Self {
        Self {
            params,
            x: vec![0.0; num_pre],
            y: vec![0.0; num_post],
            decay_x: (-params.h / params.tau_plus).exp(),
            decay_y: (-params.h / params.tau_minus).exp(),
        }
    }

    pub fn decay(&mut self) {
        let (dx, dy) = (self.decay_x, self.decay_y);
        self.x.iter_mut().for_each(|x| *x *= dx);
        self.y.iter_mut().for_each(|y| *y *= dy);
    }

    /// Depress every outgoing synapse of each spiking presynaptic neuron by
    /// `a_minus * y_post`, then bump its trace.
    pub fn on_pre_spikes(
        &mut self,
        matrix: &RaggedMatrix,
        weights: &mut [f64],
        spikes: &[u32],
        exec: &Exec,
    ) {
        let cap = matrix.max_row_length();
        if cap == 0 || spikes.is_empty() {
            for &i in spikes {
                self.x[i as usize] += 1.0;
            }
            return;
        }
        let p = self.params;
        let a_minus = p.a_minus();
        let y = &self.y;
        let mut rows: Vec<(usize, &mut [f64])> = Vec::with_capacity(spikes.len());
        let mut next = spikes.iter().peekable();
        for (i, chunk) in weights.chunks_mut(cap).enumerate() {
            if next.peek().is_some_and(|&&s| s as usize == i) {
                next.next();
                rows.push((i, chunk));
            }
        }
        debug_assert!(next.next().is_none(), "pre spikes must be ascending and in range");
        exec.for_each_mut(&mut rows, |_, (i, row)| {
            for (slot, &post) in matrix.row(*i).iter().enumerate() {
                row[slot] = p.bound(row[slot] - a_minus * y[post as usize]);
            }
        });
        for &i in spikes {
            self.x[i as usize] += 1.0;
        }
    }

    /// Potentiate every incoming synapse of each spiking postsynaptic neuron
    /// by `a_plus * x_pre`, then bump its trace.
    pub fn on_post_spikes(
        &mut self,
        matrix: &RaggedMatrix,
        transpose: &TransposeMap,
        weights: &mut [f64],
        spikes: &[u32],
    ) {
        debug_assert!(transpose.is_fresh_for(matrix), "transpose is stale");
        let a_plus = self.params.a_plus();
        for &j in spikes {
            for &(pre, slot) in transpose.column(j as usize) {
                let k = matrix.index(pre as usize, slot as usize);
                weights[k] = self.params.bound(weights[k] + a_plus * self.x[pre as usize]);
            }
            self.y[j as usize] += 1.0;
        }
    }

    /// One full step: decay, depression, potentiation.
    pub fn step(
        &mut self,
        matrix: &RaggedMatrix,
        transpose: &TransposeMap,
        weights: &mut [f64],
        pre_spikes: &[u32],
        post_spikes: &[u32],
        exec: &Exec,
    ) -> Result<()> {
        if !transpose.is_fresh_for(matrix) {
            return Err(crate::Error::StaleTranspose("stdp".into()));
        }
        self.decay();
        self.on_pre_spikes(matrix, weights, pre_spikes, exec);
        self.on_post_spikes(matrix, transpose, weights, post_spikes);
        Ok(())
    }
}
