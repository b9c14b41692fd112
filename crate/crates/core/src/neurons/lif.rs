use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::neurons::alif::spikes_from_flags;

/// Conductance-based LIF parameters. Times in ms, potentials in mV.
/// Conductances share the unit of `c_m / tau_m`, so `g_leak = 1` with the
/// defaults and a synaptic conductance of 0.2 doubles as `g / g_leak`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifCondParams {
    pub c_m: f64,
    pub tau_m: f64,
    pub v_rest: f64,
    pub e_exc: f64,
    pub v_thresh: f64,
    pub v_reset: f64,
    pub tau_ref: f64,
    pub tau_syn: f64,
    pub h: f64,
}

impl Default for LifCondParams {
    fn default() -> Self {
        Self {
            c_m: 20.0,
            tau_m: 20.0,
            v_rest: -70.0,
            e_exc: 0.0,
            v_thresh: -54.0,
            v_reset: -70.0,
            tau_ref: 5.0,
            tau_syn: 5.0,
            h: 0.1,
        }
    }
}

impl LifCondParams {
    pub fn g_leak(&self) -> f64 {
        self.c_m / self.tau_m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifCondNeuron {
    pub v: f64,
    pub g: f64,
    /// End of the current refractory period (ms); `-inf` when never fired.
    pub refractory_until: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifCondLayer {
    pub neurons: Vec<LifCondNeuron>,
    pub params: LifCondParams,
    syn_decay: f64,
}

impl LifCondLayer {
    pub fn new(size: usize, params: LifCondParams) -> Self {
        let n = LifCondNeuron { v: params.v_rest, g: 0.0, refractory_until: f64::NEG_INFINITY };
        Self { neurons: vec![n; size], params, syn_decay: (-params.h / params.tau_syn).exp() }
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    /// Advance from `t` to `t + h`. `incoming` holds conductance from spikes
    /// emitted one step earlier. Returns spiking indices in ascending order.
    pub fn step(&mut self, incoming: &[f64], t: f64, exec: &Exec) -> Vec<u32> {
        assert_eq!(incoming.len(), self.len());
        let p = self.params;
        let g_leak = p.g_leak();
        let decay = self.syn_decay;
        let half = 0.5 * p.h;
        let t_next = t + p.h;
        let fired = exec.map_mut(&mut self.neurons, |i, n| {
            n.g = (n.g + incoming[i]) * decay;
            if t_next < n.refractory_until + half {
                n.v = p.v_reset;
                return false;
            }
            let r = n.g / g_leak;
            let v_inf = (p.v_rest + r * p.e_exc) / (1.0 + r);
            n.v = v_inf + (n.v - v_inf) * (-p.h * (1.0 + r) / p.tau_m).exp();
            if n.v >= p.v_thresh {
                n.v = p.v_reset;
                n.refractory_until = t_next + p.tau_ref;
                true
            } else {
                false
            }
        });
        spikes_from_flags(&fired)
    }
}
