use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::geometry::GridGeometry;
use crate::rng::{streams, CounterRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusParams {
    /// Background rate (Hz).
    pub f_base: f64,
    /// Peak rate added at a stimulus center (Hz).
    pub f_peak: f64,
    /// Width of the rate bump (grid units).
    pub sigma_stim: f64,
    /// Interval between center changes (ms).
    pub t_stim: f64,
}

impl Default for StimulusParams {
    fn default() -> Self {
        Self { f_base: 5.0, f_peak: 152.8, sigma_stim: 2.0, t_stim: 20.0 }
    }
}

/// Independent Poisson spike generators, one per node.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonSource {
    rates: Vec<f64>,
    pub params: StimulusParams,
    seed: u64,
    stream: u32,
    /// Firing probability per node for step width `prob_h`; NaN when stale.
    probs: Vec<f64>,
    prob_h: f64,
}

impl PoissonSource {
    pub fn new(size: usize, params: StimulusParams, seed: u64) -> Self {
        Self {
            rates: vec![params.f_base; size],
            params,
            seed,
            stream: streams::POISSON,
            probs: vec![0.0; size],
            prob_h: f64::NAN,
        }
    }

    pub fn with_stream(mut self, stream: u32) -> Self {
        self.stream = stream;
        self
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Rates in Hz.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rates_mut(&mut self) -> &mut [f64] {
        self.prob_h = f64::NAN;
        &mut self.rates
    }

    /// Gaussian rate bumps around `centers`, summed with toroidal distance.
    pub fn set_correlated_rates(&mut self, centers: &[(f64, f64)], geometry: &GridGeometry) {
        assert!(!centers.is_empty(), "at least one stimulus center required");
        assert_eq!(geometry.len(), self.len());
        let p = self.params;
        let two_s2 = 2.0 * p.sigma_stim * p.sigma_stim;
        for (i, rate) in self.rates.iter_mut().enumerate() {
            let bump: f64 =
                centers.iter().map(|&c| (-geometry.point_distance_sq(c, i) / two_s2).exp()).sum();
            *rate = p.f_base + p.f_peak * bump;
        }
        self.prob_h = f64::NAN;
    }

    /// Same rates as [`set_correlated_rates`](Self::set_correlated_rates)
    /// for centers that repeat every `tile` nodes along both axes: the base
    /// tile is evaluated once and copied.
    pub fn set_tiled_rates(&mut self, centers: &[(f64, f64)], geometry: &GridGeometry, tile: usize) {
        assert!(!centers.is_empty(), "at least one stimulus center required");
        assert_eq!(geometry.len(), self.len());
        let side = geometry.side();
        assert!(tile > 0 && side % tile == 0, "grid side {side} is not a multiple of tile {tile}");
        let p = self.params;
        let two_s2 = 2.0 * p.sigma_stim * p.sigma_stim;
        let mut base = vec![0.0; tile * tile];
        for y in 0..tile {
            for x in 0..tile {
                let i = geometry.index(x, y);
                let bump: f64 = centers.iter().map(|&c| (-geometry.point_distance_sq(c, i) / two_s2).exp()).sum();
                base[y * tile + x] = p.f_base + p.f_peak * bump;
            }
        }
        for (i, rate) in self.rates.iter_mut().enumerate() {
            let (x, y) = geometry.position(i);
            *rate = base[(y % tile) * tile + x % tile];
        }
        self.prob_h = f64::NAN;
    }

    /// Draw spikes for step `step` with width `h` ms. Node `i` fires with
    /// probability `1 - exp(-rate h)`; the draw depends only on the seed,
    /// the step and `i`.
    pub fn step(&mut self, step: u64, h: f64, exec: &Exec) -> Vec<u32> {
        if self.prob_h != h {
            for (p, &r) in self.probs.iter_mut().zip(&self.rates) {
                *p = -(-r * h * 1e-3).exp_m1();
            }
            self.prob_h = h;
        }
        let (seed, stream) = (self.seed, self.stream);
        let probs = &self.probs;
        let fired = exec.map_range(probs.len(), 256, |i| {
            let p = probs[i];
            p > 0.0 && CounterRng::keyed(seed, stream, step, i as u32).uniform01() < p
        });
        crate::neurons::alif::spikes_from_flags(&fired)
    }
}

/// Uniform stimulus center in the base tile plus its copies in every tile.
pub fn replicated_centers(rng: &mut CounterRng, base_side: usize, scale: usize) -> Vec<(f64, f64)> {
    let l0 = base_side as f64;
    let cx = rng.uniform01() * l0;
    let cy = rng.uniform01() * l0;
    let mut out = Vec::with_capacity(scale * scale);
    for ty in 0..scale {
        for tx in 0..scale {
            out.push((cx + tx as f64 * l0, cy + ty as f64 * l0));
        }
    }
    out
}
