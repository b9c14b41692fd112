use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::framework::{Model, PhaseTimers, RuleHandle, StructuralEvent};
use crate::geometry::GridGeometry;
use crate::neurons::{replicated_centers, LifCondLayer, LifCondParams, PoissonSource, StimulusParams};
use crate::plasticity::{Stdp, StdpParams};
use crate::ragged::{pairwise_bernoulli_rows, RaggedMatrix, SynapseVars};
use crate::rng::{streams, CounterRng};
use crate::topomap::{rewiring_rule, EliminationParams, FormationParams, BASE_SIDE};

pub const FF: &str = "ff";
pub const LAT: &str = "lat";
pub const REWIRING_GROUP: &str = "rewiring";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopomapParams {
    /// Domain length multiplier; 0 is treated as 1.
    pub scale: usize,
    pub neuron: LifCondParams,
    pub stimulus: StimulusParams,
    pub stdp: StdpParams,
    pub ff: FormationParams,
    pub lat: FormationParams,
    pub elimination: EliminationParams,
    /// Rewiring attempts per base tile and rewiring interval.
    pub attempts_per_tile: u64,
    pub t_rewiring: f64,
    /// Synapse slots per presynaptic row.
    pub row_capacity: usize,
}

impl Default for TopomapParams {
    fn default() -> Self {
        Self {
            scale: 1,
            neuron: LifCondParams::default(),
            stimulus: StimulusParams::default(),
            stdp: StdpParams::default(),
            ff: FormationParams::FEED_FORWARD,
            lat: FormationParams::LATERAL,
            elimination: EliminationParams::default(),
            attempts_per_tile: 10,
            t_rewiring: 1.0,
            row_capacity: 64,
        }
    }
}

impl TopomapParams {
    pub fn with_scale(scale: usize) -> Self {
        Self { scale, ..Default::default() }
    }

    pub fn effective_scale(&self) -> usize {
        self.scale.max(1)
    }

    pub fn side(&self) -> usize {
        BASE_SIDE * self.effective_scale()
    }

    pub fn steps_per_rewiring(&self) -> u64 {
        (self.t_rewiring / self.neuron.h).round() as u64
    }

    pub fn steps_per_stimulus(&self) -> u64 {
        (self.stimulus.t_stim / self.neuron.h).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale > 7 {
            return bad(format!("scale must be in 0..=7, got {}", self.scale));
        }
        if !(self.neuron.h > 0.0) {
            return bad("time step must be positive".into());
        }
        for (name, f) in [("ff", self.ff), ("lat", self.lat)] {
            if !(f.sigma_form > 0.0) || !(0.0..=1.0).contains(&f.p_form) {
                return bad(format!("{name}: need sigma_form > 0 and p_form in [0, 1]"));
            }
        }
        let e = self.elimination;
        if !(e.p_elim_pot <= e.p_elim_dep) || e.p_elim_pot < 0.0 {
            return bad("need 0 <= p_elim_pot <= p_elim_dep".into());
        }
        if self.steps_per_rewiring() == 0 || self.steps_per_stimulus() == 0 {
            return bad("rewiring and stimulus intervals must be at least one step".into());
        }
        if self.row_capacity == 0 {
            return bad("row capacity must be positive".into());
        }
        Ok(())
    }
}

/// Callbacks invoked while a simulation runs.
pub trait Observer {
    /// After every rewiring group, with the structural events it produced
    /// (empty unless event recording is on).
    fn after_rewiring(&mut self, _model: &TopomapModel, _events: &[StructuralEvent]) {}

    /// After every simulation step.
    fn after_step(&mut self, _model: &TopomapModel) {}
}

impl Observer for () {}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    pub steps: u64,
    pub rewiring_executions: u64,
    pub stimulus_changes: u64,
    pub timers: PhaseTimers,
    pub wall_seconds: f64,
}

pub struct TopomapModel {
    pub params: TopomapParams,
    pub geometry: GridGeometry,
    pub net: Model,
    pub source: PoissonSource,
    pub target: LifCondLayer,
    pub stdp_ff: Stdp,
    pub stdp_lat: Stdp,
    pub ff: usize,
    pub lat: usize,
    pub rules: [RuleHandle; 2],
    seed: u64,
    step: u64,
    stimulus_epoch: u64,
    centers: Vec<(f64, f64)>,
    prev_source: Vec<u32>,
    prev_target: Vec<u32>,
    incoming: Vec<f64>,
    rewiring_executions: u64,
}

impl TopomapModel {
    pub fn build(params: TopomapParams, seed: u64, exec: Exec) -> Result<Self> {
        params.validate()?;
        let geometry = GridGeometry::new(params.side());
        let n = geometry.len();
        let mut net = Model::new(seed, exec);
        net.add_population("source", n)?;
        net.add_population("target", n)?;
        let g_max = params.stdp.g_max;
        for (name, pre, form, stream) in [
            (FF, "source", params.ff, streams::CONNECT_INIT),
            (LAT, "target", params.lat, streams::CONNECT_INIT + 1),
        ] {
            let rows = pairwise_bernoulli_rows(
                n,
                n,
                |i, j| form.probability_sq(geometry.distance_sq(i, j)),
                seed,
                stream,
                net.exec(),
            );
            let longest = rows.iter().map(Vec::len).max().unwrap_or(0);
            let matrix = RaggedMatrix::from_rows_with_capacity(n, &rows, params.row_capacity.max(longest))?;
            let mut vars = SynapseVars::new(&matrix, &["g"]);
            vars.plane_mut(0).fill(g_max);
            net.add_projection(name, pre, "target", matrix, vars)?;
            net.enable_transpose(name)?;
        }
        let attempts = params.attempts_per_tile * (params.effective_scale() * params.effective_scale()) as u64;
        let mut rules = Vec::new();
        for (name, form) in [(FF, params.ff), (LAT, params.lat)] {
            let rule = rewiring_rule(&format!("{name}.rewire"), attempts, form, params.elimination, geometry, g_max);
            rules.push(net.register_rule(REWIRING_GROUP, name, rule)?);
        }
        let ff = net.projection_index(FF).expect("ff");
        let lat = net.projection_index(LAT).expect("lat");
        Ok(Self {
            geometry,
            source: PoissonSource::new(n, params.stimulus, seed),
            target: LifCondLayer::new(n, params.neuron),
            stdp_ff: Stdp::new(n, n, StdpParams { h: params.neuron.h, ..params.stdp }),
            stdp_lat: Stdp::new(n, n, StdpParams { h: params.neuron.h, ..params.stdp }),
            ff,
            lat,
            rules: [rules[0], rules[1]],
            net,
            params,
            seed,
            step: 0,
            stimulus_epoch: 0,
            centers: Vec::new(),
            prev_source: Vec::new(),
            prev_target: Vec::new(),
            incoming: vec![0.0; n],
            rewiring_executions: 0,
        })
    }

    pub fn num_neurons(&self) -> usize {
        self.geometry.len()
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Model time in ms.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.neuron.h
    }

    pub fn centers(&self) -> &[(f64, f64)] {
        &self.centers
    }

    pub fn rewiring_executions(&self) -> u64 {
        self.rewiring_executions
    }

    pub fn matrix(&self, projection: usize) -> &RaggedMatrix {
        self.net.projection(projection).matrix()
    }

    pub fn weights(&self, projection: usize) -> &[f64] {
        self.net.projection(projection).vars().plane(0)
    }

    /// Advance one time step. Returns true when the rewiring group ran.
    pub fn step(&mut self) -> Result<bool> {
        let p = &self.params;
        let h = p.neuron.h;
        let n = self.step;
        let exec = self.net.exec().clone();

        let t0 = Instant::now();
        if n % p.steps_per_stimulus() == 0 {
            let mut rng = CounterRng::keyed(self.seed, streams::STIMULUS, self.stimulus_epoch, 0);
            self.centers = replicated_centers(&mut rng, BASE_SIDE, p.effective_scale());
            self.source.set_tiled_rates(&self.centers, &self.geometry, BASE_SIDE);
            self.stimulus_epoch += 1;
        }
        let src = self.source.step(n, h, &exec);
        self.net.timers_mut().neuron_update += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        self.incoming.fill(0.0);
        for (proj, spikes) in [(self.ff, &self.prev_source), (self.lat, &self.prev_target)] {
            let pr = self.net.projection(proj);
            pr.matrix().propagate_spikes(pr.vars().plane(0), spikes, &mut self.incoming);
        }
        self.net.timers_mut().presynaptic_update += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let tgt = self.target.step(&self.incoming, n as f64 * h, &exec);
        self.net.timers_mut().neuron_update += t0.elapsed().as_secs_f64();

        let mut pre_time = 0.0;
        let mut post_time = 0.0;
        for (proj, stdp, pre_spikes) in [(self.ff, &mut self.stdp_ff, &src), (self.lat, &mut self.stdp_lat, &tgt)] {
            let pr = self.net.projection_mut(proj);
            let (matrix, vars, transpose) = pr.parts_mut();
            let transpose = transpose.ok_or_else(|| Error::StaleTranspose("transpose disabled".into()))?;
            if !transpose.is_fresh_for(matrix) {
                return Err(Error::StaleTranspose(pr_name(proj, self.ff)));
            }
            let t0 = Instant::now();
            stdp.decay();
            stdp.on_pre_spikes(matrix, vars.plane_mut(0), pre_spikes, &exec);
            let t1 = Instant::now();
            stdp.on_post_spikes(matrix, transpose, vars.plane_mut(0), &tgt);
            pre_time += (t1 - t0).as_secs_f64();
            post_time += t1.elapsed().as_secs_f64();
        }
        let timers = self.net.timers_mut();
        timers.presynaptic_update += pre_time;
        timers.postsynaptic_update += post_time;

        self.prev_source = src;
        self.prev_target = tgt;
        self.step += 1;
        if self.step % self.params.steps_per_rewiring() == 0 {
            self.net.run_update_group(REWIRING_GROUP)?;
            self.rewiring_executions += 1;
            return Ok(true);
        }
        Ok(false)
    }

    /// Run for `duration_ms` of model time.
    pub fn run<O: Observer>(&mut self, duration_ms: f64, observer: &mut O) -> Result<RunRecord> {
        let steps = (duration_ms / self.params.neuron.h).round() as u64;
        let start = Instant::now();
        let timers0 = *self.net.timers();
        let rewiring0 = self.rewiring_executions;
        let epoch0 = self.stimulus_epoch;
        for _ in 0..steps {
            if self.step()? {
                let events = self.net.take_events();
                observer.after_rewiring(self, &events);
            }
            observer.after_step(self);
        }
        let t = *self.net.timers();
        let v0 = timers0.values();
        let v = t.values();
        let d = |k: usize| v[k] - v0[k];
        Ok(RunRecord {
            steps,
            rewiring_executions: self.rewiring_executions - rewiring0,
            stimulus_changes: self.stimulus_epoch - epoch0,
            timers: PhaseTimers {
                neuron_update: d(0),
                presynaptic_update: d(1),
                postsynaptic_update: d(2),
                host_update: d(3),
                row_update: d(4),
                remap: d(5),
            },
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Bit pattern of the full dynamic state, for determinism checks.
    pub fn state_fingerprint(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for proj in [self.ff, self.lat] {
            let m = self.matrix(proj);
            let w = self.weights(proj);
            for (i, s, j) in m.edges() {
                out.push(((i as u64) << 32) | j as u64);
                out.push(w[m.index(i, s)].to_bits());
            }
        }
        for n in &self.target.neurons {
            out.extend([n.v.to_bits(), n.g.to_bits(), n.refractory_until.to_bits()]);
        }
        for s in [&self.stdp_ff, &self.stdp_lat] {
            out.extend(s.x.iter().chain(&s.y).map(|v| v.to_bits()));
        }
        out
    }
}

fn pr_name(proj: usize, ff: usize) -> String {
    if proj == ff { FF.into() } else { LAT.into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_sizes() {
        assert_eq!(TopomapParams::with_scale(1).side(), 16);
        assert_eq!(TopomapParams::with_scale(0).side(), 16);
        let s7 = TopomapParams::with_scale(7);
        assert_eq!(s7.side() * s7.side(), 12544);
        assert!(TopomapParams::with_scale(8).validate().is_err());
    }

    #[test]
    fn schedule_for_twenty_ms() {
        let mut m = TopomapModel::build(TopomapParams::default(), 3, Exec::serial()).unwrap();
        let r = m.run(20.0, &mut ()).unwrap();
        assert_eq!(r.steps, 200);
        assert_eq!(r.rewiring_executions, 20);
        assert_eq!(r.stimulus_changes, 1);
        assert!(r.timers.sum() <= r.wall_seconds);
    }

    #[test]
    fn zero_duration_is_a_no_op() {
        let mut m = TopomapModel::build(TopomapParams::default(), 5, Exec::serial()).unwrap();
        let before = m.state_fingerprint();
        let r = m.run(0.0, &mut ()).unwrap();
        assert_eq!(r.steps, 0);
        assert_eq!(before, m.state_fingerprint());
    }

    #[test]
    fn same_seed_same_state() {
        let run = || {
            let mut m = TopomapModel::build(TopomapParams::default(), 9, Exec::serial()).unwrap();
            m.run(50.0, &mut ()).unwrap();
            m.state_fingerprint()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rewiring_keeps_rows_valid_and_bits_clean() {
        let mut m = TopomapModel::build(TopomapParams::default(), 2, Exec::serial()).unwrap();
        m.run(100.0, &mut ()).unwrap();
        for proj in [m.ff, m.lat] {
            let pr = m.net.projection(proj);
            pr.matrix().check_invariants().unwrap();
            let bits = pr.bitfield(&format!("{}.rewire.marks", pr.name())).unwrap();
            assert_eq!(bits.count_ones(), 0);
            let stats = m.net.rule_stats(m.rules[if proj == m.ff { 0 } else { 1 }]);
            let t = stats.total;
            use crate::topomap::counters::*;
            assert_eq!(t[ELIM_CANDIDATES] + t[FORM_CANDIDATES], 10 * stats.executions);
            assert!(t[REMOVED] <= t[ELIM_CANDIDATES] && t[FORMED] + t[ROW_FULL] <= t[FORM_CANDIDATES]);
        }
    }
}
