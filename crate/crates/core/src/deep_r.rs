//! DEEP R rewiring on top of the update framework.
//!
//! Two bitfields sit next to the ragged matrix: `deep_r_conn` mirrors which
//! synapses exist and `deep_r_sign` fixes the sign of every potential
//! synapse (set = positive). After each optimizer step, synapses whose
//! weight has crossed to the wrong sign are removed and the same number of
//! zero-weight synapses are formed at random free positions.

use crate::error::{Error, Result};
use crate::framework::{Flow, Model, RuleDescriptor, RuleHandle, VarDecl};

pub const CONN_BITS: &str = "deep_r_conn";
pub const SIGN_BITS: &str = "deep_r_sign";

const FORMED: usize = 0;
const FAILED: usize = 1;

/// Per-update record of the rewiring log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewireRecord {
    pub update_index: u64,
    pub removed: u64,
    pub total: u64,
}

impl RewireRecord {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.removed as f64 / self.total as f64
        }
    }
}

/// Rules registered on one projection.
#[derive(Clone, Debug)]
pub struct DeepR {
    projection: String,
    weight: String,
    l1_strength: f64,
    init: RuleHandle,
    eliminate: RuleHandle,
    form: RuleHandle,
    pending_global: String,
    updates: u64,
    /// Activations moved to another row because their row was full.
    pub retries: u64,
    pub log: Vec<RewireRecord>,
}

#[inline]
fn opposes(weight: f64, positive: bool) -> bool {
    if positive {
        weight < 0.0
    } else {
        weight > 0.0
    }
}

impl DeepR {
    /// Register the init, eliminate and form rules on `projection`, whose
    /// synaptic plane `weight` holds signed weights. With `exclude_diagonal`
    /// formation never creates `i -> i` synapses.
    pub fn register(
        model: &mut Model,
        projection: &str,
        weight: &str,
        l1_strength: f64,
        exclude_diagonal: bool,
    ) -> Result<Self> {
        if !(l1_strength >= 0.0 && l1_strength.is_finite()) {
            return Err(Error::Config(format!("l1 strength must be finite and >= 0, got {l1_strength}")));
        }
        model.add_bitfield(projection, CONN_BITS)?;
        model.add_bitfield(projection, SIGN_BITS)?;
        let group = |g: &str| format!("{projection}.deep_r_{g}");

        let init = RuleDescriptor::new(&group("init"))
            .var_ref("w", weight)
            .bitfield_ref("conn", CONN_BITS)
            .bitfield_ref("sign", SIGN_BITS)
            .row(|ctx| {
                let mut rng = ctx.rng().clone();
                ctx.bits("sign")?.randomize(&mut rng);
                ctx.bits("conn")?.clear_all();
                ctx.for_each_synapse(|c| {
                    let j = c.id_post()?;
                    let wv = c.syn("w")?;
                    c.bits("conn")?.set(j);
                    if wv != 0.0 {
                        c.bits("sign")?.assign(j, wv > 0.0);
                    }
                    Ok(Flow::Continue)
                })
            });
        let init = model.register_rule(&group("init"), projection, init)?;

        let eliminate = RuleDescriptor::new(&group("eliminate"))
            .var_ref("w", weight)
            .bitfield_ref("conn", CONN_BITS)
            .bitfield_ref("sign", SIGN_BITS)
            .pre_var(VarDecl::count("dormant"))
            .row(|ctx| {
                *ctx.pre_mut("dormant")? = 0.0;
                ctx.for_each_synapse(|c| {
                    let j = c.id_post()?;
                    let positive = c.bits("sign")?.test(j);
                    if opposes(c.syn("w")?, positive) {
                        c.remove_synapse()?;
                        c.bits("conn")?.clear(j);
                        *c.pre_mut("dormant")? += 1.0;
                    }
                    Ok(Flow::Continue)
                })
            });
        let eliminate_name = group("eliminate");
        let eliminate = model.register_rule(&group("rewire"), projection, eliminate)?;

        let dormant = format!("{eliminate_name}.dormant");
        let pending_global = format!("{}.pending", group("form"));
        let pending = pending_global.clone();
        let form = RuleDescriptor::new(&group("form"))
            .var_ref("w", weight)
            .bitfield_ref("conn", CONN_BITS)
            .bitfield_ref("sign", SIGN_BITS)
            .pre_var(VarDecl::count("activations"))
            .active_rows("activations")
            .host(move |h| {
                let retry = h.global(&pending).unwrap_or(0.0);
                let total = if retry > 0.0 {
                    retry as u64
                } else {
                    h.pre_var(&dormant)?.iter().sum::<f64>() as u64
                };
                let n = h.num_pre() as u64;
                let mut picks = vec![0.0; n as usize];
                for _ in 0..total {
                    picks[h.rng().uniform_int(n) as usize] += 1.0;
                }
                h.pre_var_mut("activations")?.copy_from_slice(&picks);
                Ok(())
            })
            .row(move |ctx| {
                let k = ctx.pre("activations")? as u64;
                *ctx.pre_mut("activations")? = 0.0;
                let i = ctx.id_pre();
                let n = ctx.num_post();
                for _ in 0..k {
                    if ctx.row_length() >= ctx.capacity() {
                        ctx.count(FAILED, 1);
                        continue;
                    }
                    let mut placed = false;
                    for _ in 0..n.max(1) * 4 {
                        let j = ctx.rng().uniform_int(n as u64) as usize;
                        if (exclude_diagonal && j == i) || ctx.bits("conn")?.test(j) {
                            continue;
                        }
                        ctx.add_synapse(j, &[0.0])?;
                        ctx.bits("conn")?.set(j);
                        placed = true;
                        break;
                    }
                    ctx.count(if placed { FORMED } else { FAILED }, 1);
                }
                Ok(())
            });
        let form = model.register_rule(&group("rewire"), projection, form)?;

        Ok(Self {
            projection: projection.into(),
            weight: weight.into(),
            l1_strength,
            init,
            eliminate,
            form,
            pending_global,
            updates: 0,
            retries: 0,
            log: Vec::new(),
        })
    }

    pub fn projection(&self) -> &str {
        &self.projection
    }

    pub fn l1_strength(&self) -> f64 {
        self.l1_strength
    }

    /// Set `conn` from the current synapses and draw random signs, keeping
    /// the sign of every existing nonzero weight.
    pub fn init(&self, model: &mut Model) -> Result<()> {
        model.run_rule(self.init)
    }

    /// Add the L1 push toward zero to `grad` for every live synapse with a
    /// nonzero weight. A freshly formed synapse sits at zero and is left to
    /// the task gradient until it has moved.
    pub fn l1_step(&self, model: &mut Model, grad: &str) -> Result<()> {
        if self.l1_strength == 0.0 {
            return Ok(());
        }
        let p = model.projection_index(&self.projection).ok_or_else(|| Error::UnresolvedReference(self.projection.clone()))?;
        let proj = model.projection_mut(p);
        let gi = proj.vars().index_of(grad).ok_or_else(|| Error::UnresolvedReference(grad.into()))?;
        let wi = proj.vars().index_of(&self.weight).ok_or_else(|| Error::UnresolvedReference(self.weight.clone()))?;
        let signs = proj.bitfield(SIGN_BITS).expect("sign bitfield").clone();
        let (matrix, vars, _) = proj.parts_mut();
        let (w, g) = vars.pair_mut(wi, gi);
        for (pre, slot, post) in matrix.edges() {
            let k = matrix.index(pre, slot);
            if w[k] == 0.0 {
                continue;
            }
            g[k] += if signs.test_bit(pre, post) { self.l1_strength } else { -self.l1_strength };
        }
        Ok(())
    }

    /// Eliminate sign-flipped synapses and form the same number anew.
    pub fn rewire(&mut self, model: &mut Model) -> Result<RewireRecord> {
        model.set_global(&self.pending_global, 0.0);
        model.run_rule(self.eliminate)?;
        let removed = model.rule_stats(self.eliminate).last_removed;
        let num_pre = model.projection_by_name(&self.projection).map_or(0, |p| p.matrix().num_pre()) as u64;
        let mut streak = 0u64;
        loop {
            model.run_rule(self.form)?;
            let failed = model.rule_stats(self.form).last[FAILED];
            if failed == 0 {
                break;
            }
            streak += 1;
            self.retries += failed;
            if streak > num_pre {
                model.set_global(&self.pending_global, 0.0);
                return Err(Error::Rule {
                    rule: model.rule_name(self.form).to_string(),
                    message: format!("could not place {failed} synapses after {streak} retries"),
                });
            }
            model.set_global(&self.pending_global, failed as f64);
        }
        model.set_global(&self.pending_global, 0.0);
        let total = model.projection_by_name(&self.projection).map_or(0, |p| p.matrix().edge_count()) as u64;
        let rec = RewireRecord { update_index: self.updates, removed, total };
        self.updates += 1;
        self.log.push(rec);
        Ok(rec)
    }

    /// `update_index,removed,total,fraction_rewired`
    pub fn log_csv(&self) -> String {
        let mut s = String::from("update_index,removed,total,fraction_rewired\n");
        for r in &self.log {
            s.push_str(&format!("{},{},{},{}\n", r.update_index, r.removed, r.total, r.fraction()));
        }
        s
    }
}

/// Count live synapses whose weight opposes their sign bit.
pub fn sign_violations(model: &Model, projection: &str, weight: &str) -> usize {
    let proj = model.projection_by_name(projection).expect("projection");
    let signs = proj.bitfield(SIGN_BITS).expect("sign bitfield");
    let w = proj.vars().by_name(weight).expect("weight plane");
    let m = proj.matrix();
    m.edges().filter(|&(i, s, j)| opposes(w[m.index(i, s)], signs.test_bit(i, j))).count()
}

/// Whether the connectivity bitfield matches the matrix exactly.
pub fn mirror_is_coherent(model: &Model, projection: &str) -> bool {
    let proj = model.projection_by_name(projection).expect("projection");
    let conn = proj.bitfield(CONN_BITS).expect("conn bitfield");
    let m = proj.matrix();
    conn.count_ones() == m.edge_count() && m.edges().all(|(i, _, j)| conn.test_bit(i, j))
}
