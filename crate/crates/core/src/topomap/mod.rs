//! Topographic map refinement: two toroidal grids, Poisson sources feeding
//! conductance LIF targets, STDP on feed-forward and lateral synapses and
//! continuous distance- and weight-dependent rewiring.

pub mod analysis;
pub mod model;

pub use analysis::{Recorder, RecorderConfig};
pub use model::{Observer, RunRecord, TopomapModel, TopomapParams};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::framework::{Flow, RuleDescriptor, VarDecl};
use crate::geometry::GridGeometry;

/// Base domain length.
pub const BASE_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormationParams {
    pub p_form: f64,
    pub sigma_form: f64,
}

impl FormationParams {
    pub const FEED_FORWARD: Self = Self { p_form: 0.16, sigma_form: 2.5 };
    pub const LATERAL: Self = Self { p_form: 1.0, sigma_form: 1.0 };

    #[inline]
    pub fn probability(&self, d: f64) -> f64 {
        self.p_form * (-d * d / (2.0 * self.sigma_form * self.sigma_form)).exp()
    }

    #[inline]
    pub fn probability_sq(&self, d2: f64) -> f64 {
        self.p_form * (-d2 / (2.0 * self.sigma_form * self.sigma_form)).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EliminationParams {
    /// Conductance below which a synapse counts as depressed.
    pub g_theta: f64,
    pub p_elim_dep: f64,
    pub p_elim_pot: f64,
}

impl Default for EliminationParams {
    fn default() -> Self {
        Self { g_theta: 0.1, p_elim_dep: 2.45e-2 * 50.0, p_elim_pot: 1.36e-4 * 50.0 }
    }
}

impl EliminationParams {
    #[inline]
    pub fn probability(&self, g: f64) -> f64 {
        if g < self.g_theta {
            self.p_elim_dep
        } else {
            self.p_elim_pot
        }
    }
}

/// Sum of the formation probability over every offset of a `side x side`
/// torus: the mean number of synapses a neuron receives at initialisation.
pub fn expected_initial_degree(params: &FormationParams, side: usize) -> f64 {
    let g = GridGeometry::new(side);
    (0..g.len()).map(|j| params.probability_sq(g.distance_sq(0, j))).sum()
}

/// Row counters of the rewiring rule.
pub mod counters {
    pub const ELIM_CANDIDATES: usize = 0;
    pub const REMOVED: usize = 1;
    pub const FORM_CANDIDATES: usize = 2;
    pub const FORMED: usize = 3;
    /// Formations dropped because the row was at capacity.
    pub const ROW_FULL: usize = 4;
}

/// Rewiring rule for one projection.
///
/// The host phase spreads `attempts` draws uniformly, with replacement, over
/// the presynaptic neurons. Each row marks that many distinct postsynaptic
/// slots in the `marks` bitfield; marked existing synapses are
/// elimination candidates, marked empty slots formation candidates. Every
/// bit is cleared again before the row finishes.
pub fn rewiring_rule(
    name: &str,
    attempts: u64,
    formation: FormationParams,
    elimination: EliminationParams,
    geometry: GridGeometry,
    g_max: f64,
) -> RuleDescriptor {
    use counters::*;
    RuleDescriptor::new(name)
        .var_ref("g", "g")
        .pre_var(VarDecl::count("attempts"))
        .bitfield("marks")
        .active_rows("attempts")
        .host(move |h| {
            let n = h.num_pre() as u64;
            let mut picks = vec![0.0; n as usize];
            for _ in 0..attempts {
                picks[h.rng().uniform_int(n) as usize] += 1.0;
            }
            h.pre_var_mut("attempts")?.copy_from_slice(&picks);
            Ok(())
        })
        .row(move |ctx| {
            let k = (ctx.pre("attempts")? as usize).min(ctx.num_post());
            if k == 0 {
                return Ok(());
            }
            let mut rng = ctx.rng().clone();
            let mut picks = rng.sample_k_distinct(k, ctx.num_post())?;
            picks.sort_unstable();
            let marks = ctx.bits("marks")?;
            for &j in &picks {
                marks.set(j as usize);
            }
            ctx.for_each_synapse(|c| {
                let j = c.id_post()?;
                if !c.bits("marks")?.test(j) {
                    return Ok(Flow::Continue);
                }
                c.bits("marks")?.clear(j);
                c.count(ELIM_CANDIDATES, 1);
                if rng.uniform01() < elimination.probability(c.syn("g")?) {
                    c.remove_synapse()?;
                    c.count(REMOVED, 1);
                }
                Ok(Flow::Continue)
            })?;
            let marks = ctx.bits("marks")?;
            let free: SmallVec<[usize; 16]> = picks.iter().map(|&j| j as usize).filter(|&j| marks.test(j)).collect();
            for &j in &free {
                marks.clear(j);
            }
            let i = ctx.id_pre();
            for j in free {
                ctx.count(FORM_CANDIDATES, 1);
                if rng.uniform01() < formation.probability_sq(geometry.distance_sq(i, j)) {
                    if ctx.row_length() >= ctx.capacity() {
                        ctx.count(ROW_FULL, 1);
                    } else {
                        ctx.add_synapse(j, &[g_max])?;
                        ctx.count(FORMED, 1);
                    }
                }
            }
            Ok(())
        })
}
