use serde::{Deserialize, Serialize};

use crate::exec::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlifParams {
    /// Membrane time constant (ms).
    pub tau_mem: f64,
    /// Adaptation time constant (ms).
    pub tau_adapt: f64,
    /// Adaptation strength.
    pub beta: f64,
    /// Baseline threshold.
    pub v_thr: f64,
    /// Time step (ms).
    pub dt: f64,
}

impl Default for AlifParams {
    fn default() -> Self {
        Self { tau_mem: 20.0, tau_adapt: 2000.0, beta: 0.0174, v_thr: 0.6, dt: 1.0 }
    }
}

impl AlifParams {
    pub fn alpha(&self) -> f64 {
        (-self.dt / self.tau_mem).exp()
    }

    pub fn rho(&self) -> f64 {
        (-self.dt / self.tau_adapt).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlifNeuron {
    pub v: f64,
    pub a: f64,
    /// Spike flag of the latest step, 0 or 1.
    pub z: f64,
}

/// Adaptive LIF layer in discrete time.
#[derive(Clone, Debug, PartialEq)]
pub struct AlifLayer {
    pub neurons: Vec<AlifNeuron>,
    pub alpha: f64,
    pub rho: f64,
    pub beta: f64,
    pub v_thr: f64,
}

impl AlifLayer {
    pub fn new(size: usize, params: &AlifParams) -> Self {
        Self {
            neurons: vec![AlifNeuron::default(); size],
            alpha: params.alpha(),
            rho: params.rho(),
            beta: params.beta,
            v_thr: params.v_thr,
        }
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn reset(&mut self) {
        self.neurons.fill(AlifNeuron::default());
    }

    /// Effective threshold `v_thr + beta * a`.
    #[inline]
    pub fn threshold(&self, n: &AlifNeuron) -> f64 {
        self.v_thr + self.beta * n.a
    }

    /// Advance one step; `rec_input` and `ext_input` are the summed weighted
    /// spikes of the previous step. Returns spiking indices in ascending order.
    pub fn step(&mut self, rec_input: &[f64], ext_input: &[f64], exec: &Exec) -> Vec<u32> {
        assert_eq!(rec_input.len(), self.len());
        assert_eq!(ext_input.len(), self.len());
        let (alpha, rho, beta, v_thr) = (self.alpha, self.rho, self.beta, self.v_thr);
        let fired = exec.map_mut(&mut self.neurons, |j, n| {
            n.v = alpha * (n.v - n.z * v_thr) + rec_input[j] + ext_input[j];
            n.a = rho * n.a + n.z;
            n.z = if n.v - (v_thr + beta * n.a) > 0.0 { 1.0 } else { 0.0 };
            n.z > 0.0
        });
        spikes_from_flags(&fired)
    }
}

/// Leaky integrator readout `y <- alpha y + input + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutLayer {
    pub y: Vec<f64>,
    pub bias: Vec<f64>,
    pub alpha: f64,
}

impl ReadoutLayer {
    pub fn new(size: usize, alpha: f64) -> Self {
        Self { y: vec![0.0; size], bias: vec![0.0; size], alpha }
    }

    pub fn reset(&mut self) {
        self.y.fill(0.0);
    }

    pub fn step(&mut self, input: &[f64]) -> &[f64] {
        assert_eq!(input.len(), self.y.len());
        for ((y, &x), &b) in self.y.iter_mut().zip(input).zip(&self.bias) {
            *y = self.alpha * *y + x + b;
        }
        &self.y
    }
}

pub(crate) fn spikes_from_flags(flags: &[bool]) -> Vec<u32> {
    flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i as u32).collect()
}
