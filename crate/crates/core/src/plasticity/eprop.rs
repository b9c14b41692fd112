use crate::exec::Exec;
use crate::neurons::AlifLayer;
use crate::ragged::RaggedMatrix;

/// Pseudo-derivative `0.3/v_thr * max(0, 1 - |(v - thr) / v_thr|)`.
#[inline]
pub fn surrogate(v: f64, a: f64, v_thr: f64, beta: f64) -> f64 {
    let x = (v - (v_thr + beta * a)) / v_thr;
    (0.3 / v_thr) * (1.0 - x.abs()).max(0.0)
}

pub fn surrogates(layer: &AlifLayer, out: &mut [f64]) {
    for (psi, n) in out.iter_mut().zip(&layer.neurons) {
        *psi = surrogate(n.v, n.a, layer.v_thr, layer.beta);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpropCoeffs {
    /// Membrane decay, also used for the trace filters.
    pub alpha: f64,
    pub rho: f64,
    pub beta: f64,
}

impl EpropCoeffs {
    pub fn from_layer(layer: &AlifLayer) -> Self {
        Self { alpha: layer.alpha, rho: layer.rho, beta: layer.beta }
    }
}

/// Per-synapse eligibility state, slot-aligned with a ragged matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Eligibility {
    pub eps: Vec<f64>,
    pub e_bar: Vec<f64>,
    pub grad: Vec<f64>,
    row_capacity: usize,
}

impl Eligibility {
    pub fn new(matrix: &RaggedMatrix) -> Self {
        let n = matrix.num_pre() * matrix.max_row_length();
        Self { eps: vec![0.0; n], e_bar: vec![0.0; n], grad: vec![0.0; n], row_capacity: matrix.max_row_length() }
    }

    /// Clear traces between examples; `grad` is kept.
    pub fn reset_traces(&mut self) {
        self.eps.fill(0.0);
        self.e_bar.fill(0.0);
    }

    pub fn reset_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One step of the eligibility recursion for every live synapse.
    ///
    /// `z_bar` is the filtered presynaptic spike train including this step's
    /// spikes, `psi` and `learning` are per postsynaptic neuron. The
    /// eligibility `e` is formed from the current `eps` before `eps` advances.
    pub fn accumulate_step(
        &mut self,
        matrix: &RaggedMatrix,
        z_bar: &[f64],
        psi: &[f64],
        learning: &[f64],
        c: EpropCoeffs,
        exec: &Exec,
    ) {
        let cap = self.row_capacity;
        assert_eq!(cap, matrix.max_row_length(), "eligibility planes out of date");
        if cap == 0 {
            return;
        }
        let row = |i: usize, eps: &mut [f64], e_bar: &mut [f64], grad: &mut [f64]| {
            let zb = z_bar[i];
            let targets = matrix.row(i);
            for (s, &j) in targets.iter().enumerate() {
                let j = j as usize;
                let p = psi[j];
                let old = eps[s];
                let e = p * (zb - c.beta * old);
                let eb = c.alpha * e_bar[s] + e;
                e_bar[s] = eb;
                grad[s] += learning[j] * eb;
                eps[s] = p * zb + (c.rho - p * c.beta) * old;
            }
        };
        if exec.is_parallel() {
            let mut rows: Vec<_> = self
                .eps
                .chunks_mut(cap)
                .zip(self.e_bar.chunks_mut(cap))
                .zip(self.grad.chunks_mut(cap))
                .map(|((a, b), g)| (a, b, g))
                .collect();
            exec.for_each_mut(&mut rows, |i, (a, b, g)| row(i, a, b, g));
        } else {
            for (i, ((a, b), g)) in self
                .eps
                .chunks_mut(cap)
                .zip(self.e_bar.chunks_mut(cap))
                .zip(self.grad.chunks_mut(cap))
                .enumerate()
            {
                row(i, a, b, g);
            }
        }
    }
}
