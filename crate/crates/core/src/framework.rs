//! Custom connectivity updates.
//!
//! A rule is a serial host phase followed by a row phase that runs once per
//! presynaptic row of its target projection, possibly in parallel. Row phases
//! only see their own row of connectivity, bitfields and per-pre variables;
//! postsynaptic variables are a read-only snapshot taken before the phase.
//! Rules are grouped, and a group runs its rules in registration order, each
//! one completely (host, rows, transpose remap) before the next starts.

use std::time::Instant;

use smallvec::SmallVec;

use crate::bitfield::{Bitfield, BitRowMut};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ragged::{RaggedMatrix, RowMut, SynapseVars, TransposeMap};
use crate::rng::{streams, CounterRng};

pub const NUM_COUNTERS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Count,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
}

impl VarDecl {
    pub fn scalar(name: &str) -> Self {
        Self { name: name.to_string(), kind: VarKind::Scalar }
    }

    pub fn count(name: &str) -> Self {
        Self { name: name.to_string(), kind: VarKind::Count }
    }
}

pub type HostFn = Box<dyn FnMut(&mut HostContext<'_>) -> Result<()> + Send>;
pub type RowFn = Box<dyn Fn(&mut RowContext<'_, '_>) -> Result<()> + Send + Sync>;

/// Declaration of a structural plasticity rule.
///
/// References are `(local name, target name)` pairs; owned variables are
/// allocated zeroed at registration under `"<rule>.<name>"`.
#[derive(Default)]
pub struct RuleDescriptor {
    pub name: String,
    pub pre_vars: Vec<VarDecl>,
    pub post_vars: Vec<VarDecl>,
    pub syn_vars: Vec<VarDecl>,
    pub bitfields: Vec<String>,
    pub var_refs: Vec<(String, String)>,
    pub pre_var_refs: Vec<(String, String)>,
    pub post_var_refs: Vec<(String, String)>,
    pub bitfield_refs: Vec<(String, String)>,
    pub host_phase: Option<HostFn>,
    pub row_phase: Option<RowFn>,
    /// Local pre variable gating the row phase; see [`active_rows`](Self::active_rows).
    pub active_when: Option<String>,
}

impl RuleDescriptor {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), ..Default::default() }
    }

    pub fn var_ref(mut self, local: &str, target: &str) -> Self {
        self.var_refs.push((local.into(), target.into()));
        self
    }

    pub fn pre_var_ref(mut self, local: &str, target: &str) -> Self {
        self.pre_var_refs.push((local.into(), target.into()));
        self
    }

    pub fn post_var_ref(mut self, local: &str, target: &str) -> Self {
        self.post_var_refs.push((local.into(), target.into()));
        self
    }

    pub fn bitfield_ref(mut self, local: &str, target: &str) -> Self {
        self.bitfield_refs.push((local.into(), target.into()));
        self
    }

    pub fn pre_var(mut self, decl: VarDecl) -> Self {
        self.pre_vars.push(decl);
        self
    }

    pub fn post_var(mut self, decl: VarDecl) -> Self {
        self.post_vars.push(decl);
        self
    }

    pub fn syn_var(mut self, decl: VarDecl) -> Self {
        self.syn_vars.push(decl);
        self
    }

    pub fn bitfield(mut self, name: &str) -> Self {
        self.bitfields.push(name.into());
        self
    }

    /// Skip the row phase of every row whose pre variable `local` is zero.
    pub fn active_rows(mut self, local: &str) -> Self {
        self.active_when = Some(local.into());
        self
    }

    pub fn host<F>(mut self, f: F) -> Self
    where
        F: FnMut(&mut HostContext<'_>) -> Result<()> + Send + 'static,
    {
        self.host_phase = Some(Box::new(f));
        self
    }

    pub fn row<F>(mut self, f: F) -> Self
    where
        F: Fn(&mut RowContext<'_, '_>) -> Result<()> + Send + Sync + 'static,
    {
        self.row_phase = Some(Box::new(f));
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimers {
    pub neuron_update: f64,
    pub presynaptic_update: f64,
    pub postsynaptic_update: f64,
    pub host_update: f64,
    pub row_update: f64,
    pub remap: f64,
}

impl PhaseTimers {
    pub const PHASES: [&'static str; 6] = [
        "neuron_update",
        "presynaptic_update",
        "postsynaptic_update",
        "host_update",
        "row_update",
        "remap",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.neuron_update,
            self.presynaptic_update,
            self.postsynaptic_update,
            self.host_update,
            self.row_update,
            self.remap,
        ]
    }

    pub fn sum(&self) -> f64 {
        self.values().iter().sum()
    }

    /// `phase,seconds` lines for the six phases followed by `total`.
    pub fn to_csv(&self, total: f64) -> String {
        let mut s = String::from("phase,seconds\n");
        for (name, v) in Self::PHASES.iter().zip(self.values()) {
            s.push_str(&format!("{name},{v}\n"));
        }
        s.push_str(&format!("total,{total}\n"));
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Added,
    Removed,
}

/// A synapse added or removed by a row phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuralEvent {
    pub rule: usize,
    pub projection: usize,
    pub pre: u32,
    pub post: u32,
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RuleStats {
    pub executions: u64,
    /// Row counters summed over rows, last execution only.
    pub last: [u64; NUM_COUNTERS],
    /// Row counters summed over all executions.
    pub total: [u64; NUM_COUNTERS],
    pub last_added: u64,
    pub last_removed: u64,
}

#[derive(Clone, Debug)]
pub struct Population {
    name: String,
    size: usize,
    vars: Vec<(String, Vec<f64>)>,
}

impl Population {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|(n, _)| n == name)
    }

    pub fn var(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.vars[i].1.as_slice())
    }

    pub fn var_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.index_of(name).map(move |i| self.vars[i].1.as_mut_slice())
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    name: String,
    pre: usize,
    post: usize,
    pub(crate) matrix: RaggedMatrix,
    pub(crate) vars: SynapseVars,
    bitfields: Vec<(String, Bitfield)>,
    transpose: Option<TransposeMap>,
}

impl Projection {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pre_population(&self) -> usize {
        self.pre
    }

    pub fn post_population(&self) -> usize {
        self.post
    }

    pub fn matrix(&self) -> &RaggedMatrix {
        &self.matrix
    }

    pub fn vars(&self) -> &SynapseVars {
        &self.vars
    }

    /// Synaptic variables only; the structure stays read-only.
    pub fn vars_mut(&mut self) -> &mut SynapseVars {
        &mut self.vars
    }

    pub fn bitfield(&self, name: &str) -> Option<&Bitfield> {
        self.bitfields.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn bitfield_mut(&mut self, name: &str) -> Option<&mut Bitfield> {
        self.bitfields.iter_mut().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    /// Fresh transpose, if this projection has one registered.
    pub fn transpose(&self) -> Result<&TransposeMap> {
        match &self.transpose {
            Some(t) if t.is_fresh_for(&self.matrix) => Ok(t),
            _ => Err(Error::StaleTranspose(self.name.clone())),
        }
    }

    /// Structure, mutable variables and the transpose at once.
    pub fn parts_mut(&mut self) -> (&RaggedMatrix, &mut SynapseVars, Option<&TransposeMap>) {
        (&self.matrix, &mut self.vars, self.transpose.as_ref())
    }

    /// Direct structural access. Marks the transpose stale.
    pub fn structure_mut(&mut self) -> (&mut RaggedMatrix, &mut SynapseVars) {
        (&mut self.matrix, &mut self.vars)
    }
}

struct Resolved {
    /// local name -> plane index; `var_refs` first, in declaration order.
    syn: Vec<(String, usize)>,
    num_syn_refs: usize,
    /// local name -> index in pre population vars.
    pre: Vec<(String, usize)>,
    post: Vec<(String, usize)>,
    bits: Vec<(String, usize)>,
    /// Position in `pre` of the gating variable.
    active: Option<usize>,
}

struct RegisteredRule {
    name: String,
    projection: usize,
    stream: u32,
    update_count: u64,
    host: Option<HostFn>,
    row: Option<RowFn>,
    resolved: Resolved,
    stats: RuleStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RuleHandle(pub usize);

/// Populations, projections and the rules that restructure them.
pub struct Model {
    seed: u64,
    exec: Exec,
    populations: Vec<Population>,
    projections: Vec<Projection>,
    rules: Vec<RegisteredRule>,
    groups: Vec<(String, Vec<usize>)>,
    globals: Vec<(String, f64)>,
    timers: PhaseTimers,
    force_remap: bool,
    record_events: bool,
    events: Vec<StructuralEvent>,
}

impl Model {
    pub fn new(seed: u64, exec: Exec) -> Self {
        Self {
            seed,
            exec,
            populations: Vec::new(),
            projections: Vec::new(),
            rules: Vec::new(),
            groups: Vec::new(),
            globals: Vec::new(),
            timers: PhaseTimers::default(),
            force_remap: false,
            record_events: true,
            events: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn exec(&self) -> &Exec {
        &self.exec
    }

    pub fn timers(&self) -> &PhaseTimers {
        &self.timers
    }

    pub fn timers_mut(&mut self) -> &mut PhaseTimers {
        &mut self.timers
    }

    /// Remap transposes after every rule, even if nothing changed.
    pub fn set_force_remap(&mut self, on: bool) {
        self.force_remap = on;
    }

    pub fn set_record_events(&mut self, on: bool) {
        self.record_events = on;
    }

    pub fn add_population(&mut self, name: &str, size: usize) -> Result<usize> {
        if self.population_index(name).is_some() {
            return Err(Error::DuplicateName(name.into()));
        }
        self.populations.push(Population { name: name.into(), size, vars: Vec::new() });
        Ok(self.populations.len() - 1)
    }

    pub fn add_population_var(&mut self, pop: &str, var: &str) -> Result<()> {
        let p = self.population_index(pop).ok_or_else(|| Error::UnresolvedReference(pop.into()))?;
        let pop = &mut self.populations[p];
        if pop.index_of(var).is_some() {
            return Err(Error::DuplicateName(var.into()));
        }
        pop.vars.push((var.into(), vec![0.0; pop.size]));
        Ok(())
    }

    pub fn population_index(&self, name: &str) -> Option<usize> {
        self.populations.iter().position(|p| p.name == name)
    }

    pub fn population(&self, idx: usize) -> &Population {
        &self.populations[idx]
    }

    pub fn population_mut(&mut self, idx: usize) -> &mut Population {
        &mut self.populations[idx]
    }

    pub fn add_projection(&mut self, name: &str, pre: &str, post: &str, matrix: RaggedMatrix, vars: SynapseVars) -> Result<usize> {
        if self.projection_index(name).is_some() {
            return Err(Error::DuplicateName(name.into()));
        }
        let pre_i = self.population_index(pre).ok_or_else(|| Error::UnresolvedReference(pre.into()))?;
        let post_i = self.population_index(post).ok_or_else(|| Error::UnresolvedReference(post.into()))?;
        if matrix.num_pre() != self.populations[pre_i].size || matrix.num_post() != self.populations[post_i].size {
            return Err(Error::ShapeMismatch(format!("projection `{name}` does not match {pre} -> {post}")));
        }
        self.projections.push(Projection {
            name: name.into(),
            pre: pre_i,
            post: post_i,
            matrix,
            vars,
            bitfields: Vec::new(),
            transpose: None,
        });
        Ok(self.projections.len() - 1)
    }

    pub fn add_bitfield(&mut self, projection: &str, name: &str) -> Result<()> {
        let p = self.projection_index(projection).ok_or_else(|| Error::UnresolvedReference(projection.into()))?;
        let proj = &mut self.projections[p];
        if proj.bitfield(name).is_some() {
            return Err(Error::DuplicateName(name.into()));
        }
        let b = Bitfield::new(proj.matrix.num_pre(), proj.matrix.num_post());
        proj.bitfields.push((name.into(), b));
        Ok(())
    }

    /// Keep a transpose of `projection`, rebuilt after mutating updates.
    pub fn enable_transpose(&mut self, projection: &str) -> Result<()> {
        let p = self.projection_index(projection).ok_or_else(|| Error::UnresolvedReference(projection.into()))?;
        let proj = &mut self.projections[p];
        proj.transpose = Some(proj.matrix.remap_transpose());
        Ok(())
    }

    pub fn projection_index(&self, name: &str) -> Option<usize> {
        self.projections.iter().position(|p| p.name == name)
    }

    pub fn projection(&self, idx: usize) -> &Projection {
        &self.projections[idx]
    }

    pub fn projection_mut(&mut self, idx: usize) -> &mut Projection {
        &mut self.projections[idx]
    }

    pub fn projection_by_name(&self, name: &str) -> Option<&Projection> {
        self.projection_index(name).map(|i| &self.projections[i])
    }

    pub fn projections(&self) -> &[Projection] {
        &self.projections
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    pub fn set_global(&mut self, name: &str, value: f64) {
        match self.globals.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = value,
            None => self.globals.push((name.into(), value)),
        }
    }

    pub fn global(&self, name: &str) -> Option<f64> {
        self.globals.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn rule_stats(&self, handle: RuleHandle) -> &RuleStats {
        &self.rules[handle.0].stats
    }

    pub fn rule_name(&self, handle: RuleHandle) -> &str {
        &self.rules[handle.0].name
    }

    pub fn group_rules(&self, group: &str) -> Option<Vec<RuleHandle>> {
        self.groups.iter().find(|(g, _)| g == group).map(|(_, r)| r.iter().map(|&i| RuleHandle(i)).collect())
    }

    /// Events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<StructuralEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn register_rule(&mut self, group: &str, projection: &str, rule: RuleDescriptor) -> Result<RuleHandle> {
        let p = self.projection_index(projection).ok_or_else(|| Error::UnresolvedReference(projection.into()))?;
        if rule.name.is_empty() || self.rules.iter().any(|r| r.name == rule.name) {
            return Err(Error::DuplicateName(rule.name.clone()));
        }
        let ns = |n: &str| format!("{}.{}", rule.name, n);
        let (pre_i, post_i) = (self.projections[p].pre, self.projections[p].post);

        // Resolve every reference before allocating anything.
        let mut locals: Vec<String> = Vec::new();
        let mut claim = |local: &str| -> Result<()> {
            if locals.iter().any(|l| l == local) {
                return Err(Error::DuplicateName(local.into()));
            }
            locals.push(local.to_string());
            Ok(())
        };
        let proj = &self.projections[p];
        let mut syn = Vec::new();
        for (local, target) in &rule.var_refs {
            claim(local)?;
            let idx = proj.vars.index_of(target).ok_or_else(|| Error::UnresolvedReference(target.clone()))?;
            syn.push((local.clone(), idx));
        }
        let mut pre = Vec::new();
        for (local, target) in &rule.pre_var_refs {
            claim(local)?;
            let idx = self.populations[pre_i].index_of(target).ok_or_else(|| Error::UnresolvedReference(target.clone()))?;
            pre.push((local.clone(), idx));
        }
        let mut post = Vec::new();
        for (local, target) in &rule.post_var_refs {
            claim(local)?;
            let idx = self.populations[post_i].index_of(target).ok_or_else(|| Error::UnresolvedReference(target.clone()))?;
            post.push((local.clone(), idx));
        }
        let mut bits = Vec::new();
        for (local, target) in &rule.bitfield_refs {
            claim(local)?;
            let idx = proj.bitfields.iter().position(|(n, _)| n == target).ok_or_else(|| Error::UnresolvedReference(target.clone()))?;
            bits.push((local.clone(), idx));
        }
        for d in rule.syn_vars.iter().chain(&rule.pre_vars).chain(&rule.post_vars) {
            claim(&d.name)?;
        }
        for b in &rule.bitfields {
            claim(b)?;
        }
        if pre_i == post_i {
            for a in &rule.pre_vars {
                if rule.post_vars.iter().any(|b| b.name == a.name) {
                    return Err(Error::DuplicateName(a.name.clone()));
                }
            }
        }
        for d in &rule.pre_vars {
            if self.populations[pre_i].index_of(&ns(&d.name)).is_some() {
                return Err(Error::DuplicateName(ns(&d.name)));
            }
        }
        for d in &rule.post_vars {
            if self.populations[post_i].index_of(&ns(&d.name)).is_some() {
                return Err(Error::DuplicateName(ns(&d.name)));
            }
        }
        let num_syn_refs = syn.len();

        // Allocate owned state.
        let proj = &mut self.projections[p];
        for d in &rule.syn_vars {
            let idx = proj.vars.add_plane(&proj.matrix, &ns(&d.name))?;
            syn.push((d.name.clone(), idx));
        }
        for b in &rule.bitfields {
            proj.bitfields.push((ns(b), Bitfield::new(proj.matrix.num_pre(), proj.matrix.num_post())));
            bits.push((b.clone(), proj.bitfields.len() - 1));
        }
        for d in &rule.pre_vars {
            let pop = &mut self.populations[pre_i];
            pop.vars.push((ns(&d.name), vec![0.0; pop.size]));
            pre.push((d.name.clone(), pop.vars.len() - 1));
        }
        for d in &rule.post_vars {
            let pop = &mut self.populations[post_i];
            pop.vars.push((ns(&d.name), vec![0.0; pop.size]));
            post.push((d.name.clone(), pop.vars.len() - 1));
        }

        let active = match &rule.active_when {
            Some(local) => {
                Some(pre.iter().position(|(n, _)| n == local).ok_or_else(|| Error::UnresolvedReference(local.clone()))?)
            }
            None => None,
        };

        let id = self.rules.len();
        self.rules.push(RegisteredRule {
            name: rule.name,
            projection: p,
            stream: streams::RULE_BASE + id as u32,
            update_count: 0,
            host: rule.host_phase,
            row: rule.row_phase,
            resolved: Resolved { syn, num_syn_refs, pre, post, bits, active },
            stats: RuleStats::default(),
        });
        match self.groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, members)) => members.push(id),
            None => self.groups.push((group.into(), vec![id])),
        }
        Ok(RuleHandle(id))
    }

    /// Run every rule of `group` in registration order.
    pub fn run_update_group(&mut self, group: &str) -> Result<()> {
        let members = self
            .groups
            .iter()
            .find(|(g, _)| g == group)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::UnknownGroup(group.into()))?;
        for id in members {
            self.run_rule(RuleHandle(id))?;
        }
        Ok(())
    }

    /// Run a single rule: host phase, row phase, then remap if needed.
    pub fn run_rule(&mut self, handle: RuleHandle) -> Result<()> {
        let id = handle.0;
        let seed = self.seed;
        let (stream, update) = (self.rules[id].stream, self.rules[id].update_count);
        let p = self.rules[id].projection;
        let (pre_i, post_i) = (self.projections[p].pre, self.projections[p].post);
        let rule_name = self.rules[id].name.clone();
        let wrap = |e: Error| match e {
            Error::Rule { .. } => e,
            other => Error::Rule { rule: rule_name.clone(), message: other.to_string() },
        };

        // Host phase.
        let t0 = Instant::now();
        if let Some(mut host) = self.rules[id].host.take() {
            let (pre_pop, post_pop) = two_mut(&mut self.populations, pre_i, post_i);
            let mut ctx = HostContext {
                rng: CounterRng::keyed(seed, stream, update, streams::HOST_ROW),
                resolved: &self.rules[id].resolved,
                pre: pre_pop,
                post: post_pop,
                matrix: &self.projections[p].matrix,
                globals: &mut self.globals,
                last: &self.rules[id].stats.last,
            };
            let r = host(&mut ctx);
            self.rules[id].host = Some(host);
            r.map_err(wrap)?;
        }
        self.timers.host_update += t0.elapsed().as_secs_f64();

        // Row phase.
        let t0 = Instant::now();
        let mut mutated = false;
        let mut first_err = None;
        let mut counters = [0u64; NUM_COUNTERS];
        let (mut added, mut removed) = (0u64, 0u64);
        if let Some(row_fn) = self.rules[id].row.take() {
            let resolved = &self.rules[id].resolved;
            let post_snapshot: Vec<(String, Vec<f64>)> = resolved
                .post
                .iter()
                .map(|(local, idx)| (local.clone(), self.populations[post_i].vars[*idx].1.clone()))
                .collect();
            let mut pre_arrays: Vec<(String, Vec<f64>)> = resolved
                .pre
                .iter()
                .map(|(local, idx)| (local.clone(), std::mem::take(&mut self.populations[pre_i].vars[*idx].1)))
                .collect();
            let globals = self.globals.clone();
            let num_syn_refs = resolved.num_syn_refs;

            let proj = &mut self.projections[p];
            let num_pre = proj.matrix.num_pre();
            let selected: Vec<usize> = match resolved.active {
                Some(k) => pre_arrays[k].1.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect(),
                None => (0..num_pre).collect(),
            };
            let rows = proj.matrix.rows_mut_select(&mut proj.vars, selected.iter().copied());
            let mut bit_rows: SmallVec<[_; 2]> = SmallVec::new();
            {
                // Hand out rows of the referenced bitfields in `resolved.bits` order.
                let mut slots: Vec<Option<&mut Bitfield>> = proj.bitfields.iter_mut().map(|(_, b)| Some(b)).collect();
                for (_, idx) in &resolved.bits {
                    let bf = slots[*idx].take().expect("bitfield referenced twice");
                    bit_rows.push(bf.rows_mut_select(selected.iter().copied()));
                }
            }
            let mut pre_iters: SmallVec<[std::slice::IterMut<'_, f64>; 4]> =
                pre_arrays.iter_mut().map(|(_, v)| v.iter_mut()).collect();
            let mut next_pre = 0usize;
            let work_iter = rows.map(|row| {
                let skip = row.id_pre() - next_pre;
                next_pre = row.id_pre() + 1;
                RowWork {
                    pre: pre_iters.iter_mut().map(|it| it.nth(skip).expect("pre var row")).collect(),
                    bits: bit_rows.iter_mut().map(|it| it.next().expect("bitfield row")).collect(),
                    row,
                }
            });
            let shared = RowShared {
                seed,
                stream,
                update,
                syn: &resolved.syn,
                num_syn_refs,
                pre_names: &resolved.pre,
                post: &post_snapshot,
                bit_names: &resolved.bits,
                globals: &globals,
                projection: p,
                rule: id,
                record: self.record_events,
            };
            let run_row = |_: usize, w: &mut RowWork<'_>| {
                let i = w.row.id_pre();
                let mut ctx = RowContext {
                    id_pre: i,
                    rng: CounterRng::keyed(shared.seed, shared.stream, shared.update, i as u32),
                    work: w,
                    shared: &shared,
                    cursor: None,
                    counters: [0; NUM_COUNTERS],
                    events: Vec::new(),
                    added: 0,
                    removed: 0,
                };
                let result = row_fn(&mut ctx);
                RowOutcome {
                    result,
                    counters: ctx.counters,
                    events: ctx.events,
                    added: ctx.added,
                    removed: ctx.removed,
                }
            };
            let mut absorb = |o: RowOutcome| {
                for (c, v) in counters.iter_mut().zip(o.counters) {
                    *c += v;
                }
                added += o.added;
                removed += o.removed;
                self.events.extend(o.events);
                if first_err.is_none() {
                    if let Err(e) = o.result {
                        first_err = Some(e);
                    }
                }
            };
            if self.exec.is_parallel() {
                let mut work: Vec<RowWork<'_>> = Vec::with_capacity(selected.len());
                work.extend(work_iter);
                let outcomes = self.exec.map_mut(&mut work, run_row);
                mutated = work.iter().any(|w| w.row.is_dirty());
                outcomes.into_iter().for_each(&mut absorb);
            } else {
                for (i, mut w) in work_iter.enumerate() {
                    let o = run_row(i, &mut w);
                    mutated |= w.row.is_dirty();
                    absorb(o);
                }
            }
            drop(pre_iters);
            for ((_, idx), (_, arr)) in self.rules[id].resolved.pre.iter().zip(pre_arrays) {
                self.populations[pre_i].vars[*idx].1 = arr;
            }
            self.rules[id].row = Some(row_fn);
        }
        if mutated {
            self.projections[p].matrix.bump_revision();
        }
        self.timers.row_update += t0.elapsed().as_secs_f64();

        // Remap.
        let proj = &mut self.projections[p];
        if proj.transpose.is_some() && (mutated || self.force_remap) {
            let t0 = Instant::now();
            proj.transpose = Some(proj.matrix.remap_transpose());
            self.timers.remap += t0.elapsed().as_secs_f64();
        }

        let rule = &mut self.rules[id];
        rule.update_count += 1;
        rule.stats.executions += 1;
        rule.stats.last = counters;
        for (t, c) in rule.stats.total.iter_mut().zip(counters) {
            *t += c;
        }
        rule.stats.last_added = added;
        rule.stats.last_removed = removed;
        match first_err {
            Some(e) => Err(wrap(e)),
            None => Ok(()),
        }
    }
}

fn two_mut(pops: &mut [Population], a: usize, b: usize) -> (&mut Population, Option<&mut Population>) {
    if a == b {
        (&mut pops[a], None)
    } else if a < b {
        let (lo, hi) = pops.split_at_mut(b);
        (&mut lo[a], Some(&mut hi[0]))
    } else {
        let (lo, hi) = pops.split_at_mut(a);
        (&mut hi[0], Some(&mut lo[b]))
    }
}

/// What the host phase can see: whole per-neuron arrays, globals and the
/// (read-only) connectivity.
pub struct HostContext<'a> {
    rng: CounterRng,
    resolved: &'a Resolved,
    pre: &'a mut Population,
    post: Option<&'a mut Population>,
    matrix: &'a RaggedMatrix,
    globals: &'a mut Vec<(String, f64)>,
    last: &'a [u64; NUM_COUNTERS],
}

impl HostContext<'_> {
    pub fn rng(&mut self) -> &mut CounterRng {
        &mut self.rng
    }

    pub fn num_pre(&self) -> usize {
        self.matrix.num_pre()
    }

    pub fn num_post(&self) -> usize {
        self.matrix.num_post()
    }

    pub fn matrix(&self) -> &RaggedMatrix {
        self.matrix
    }

    /// Row counters of this rule's previous execution.
    pub fn last_counters(&self) -> &[u64; NUM_COUNTERS] {
        self.last
    }

    fn pre_index(&self, name: &str) -> Result<usize> {
        self.resolved
            .pre
            .iter()
            .find(|(l, _)| l == name)
            .map(|&(_, i)| i)
            .or_else(|| self.pre.index_of(name))
            .ok_or_else(|| Error::UnresolvedReference(name.into()))
    }

    fn post_pop(&self) -> &Population {
        self.post.as_deref().unwrap_or(self.pre)
    }

    fn post_index(&self, name: &str) -> Result<usize> {
        self.resolved
            .post
            .iter()
            .find(|(l, _)| l == name)
            .map(|&(_, i)| i)
            .or_else(|| self.post_pop().index_of(name))
            .ok_or_else(|| Error::UnresolvedReference(name.into()))
    }

    pub fn pre_var(&self, name: &str) -> Result<&[f64]> {
        let i = self.pre_index(name)?;
        Ok(&self.pre.vars[i].1)
    }

    pub fn pre_var_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let i = self.pre_index(name)?;
        Ok(&mut self.pre.vars[i].1)
    }

    pub fn post_var(&self, name: &str) -> Result<&[f64]> {
        let i = self.post_index(name)?;
        Ok(&self.post_pop().vars[i].1)
    }

    pub fn post_var_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let i = self.post_index(name)?;
        let pop = match self.post.as_deref_mut() {
            Some(p) => p,
            None => &mut *self.pre,
        };
        Ok(&mut pop.vars[i].1)
    }

    pub fn global(&self, name: &str) -> Option<f64> {
        self.globals.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn set_global(&mut self, name: &str, value: f64) {
        match self.globals.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = value,
            None => self.globals.push((name.into(), value)),
        }
    }
}

struct RowWork<'a> {
    row: RowMut<'a>,
    pre: SmallVec<[&'a mut f64; 4]>,
    bits: SmallVec<[BitRowMut<'a>; 2]>,
}

struct RowShared<'s> {
    seed: u64,
    stream: u32,
    update: u64,
    syn: &'s [(String, usize)],
    num_syn_refs: usize,
    pre_names: &'s [(String, usize)],
    post: &'s [(String, Vec<f64>)],
    bit_names: &'s [(String, usize)],
    globals: &'s [(String, f64)],
    projection: usize,
    rule: usize,
    record: bool,
}

struct RowOutcome {
    result: Result<()>,
    counters: [u64; NUM_COUNTERS],
    events: Vec<StructuralEvent>,
    added: u64,
    removed: u64,
}


/// Loop control for [`RowContext::for_each_synapse`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Break,
}

#[derive(Clone, Copy, Debug)]
struct Cursor {
    slot: usize,
    removed: bool,
}

/// Everything a row phase may touch for presynaptic row `id_pre`.
pub struct RowContext<'w, 'a> {
    id_pre: usize,
    rng: CounterRng,
    work: &'w mut RowWork<'a>,
    shared: &'w RowShared<'w>,
    cursor: Option<Cursor>,
    counters: [u64; NUM_COUNTERS],
    events: Vec<StructuralEvent>,
    added: u64,
    removed: u64,
}

impl<'a> RowContext<'_, 'a> {
    pub fn id_pre(&self) -> usize {
        self.id_pre
    }

    pub fn num_post(&self) -> usize {
        self.work.row.num_post()
    }

    pub fn row_length(&self) -> usize {
        self.work.row.len()
    }

    pub fn capacity(&self) -> usize {
        self.work.row.capacity()
    }

    pub fn targets(&self) -> &[u32] {
        self.work.row.targets()
    }

    pub fn rng(&mut self) -> &mut CounterRng {
        &mut self.rng
    }

    /// Add `n` to row counter `idx`; summed over rows into [`RuleStats`].
    pub fn count(&mut self, idx: usize, n: u64) {
        self.counters[idx] += n;
    }

    fn syn_plane(&self, name: &str) -> Result<usize> {
        self.shared
            .syn
            .iter()
            .find(|(l, _)| l == name)
            .map(|&(_, i)| i)
            .ok_or_else(|| Error::UnresolvedReference(name.into()))
    }

    fn pre_slot(&self, name: &str) -> Result<usize> {
        self.shared
            .pre_names
            .iter()
            .position(|(l, _)| l == name)
            .ok_or_else(|| Error::UnresolvedReference(name.into()))
    }

    /// This row's element of a per-pre variable.
    pub fn pre(&self, name: &str) -> Result<f64> {
        let k = self.pre_slot(name)?;
        Ok(*self.work.pre[k])
    }

    pub fn pre_mut(&mut self, name: &str) -> Result<&mut f64> {
        let k = self.pre_slot(name)?;
        Ok(&mut *self.work.pre[k])
    }

    /// Read-only snapshot of a per-post variable.
    pub fn post(&self, name: &str) -> Result<&[f64]> {
        self.shared
            .post
            .iter()
            .find(|(l, _)| l == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::UnresolvedReference(name.into()))
    }

    pub fn global(&self, name: &str) -> Option<f64> {
        self.shared.globals.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// This row of a referenced or owned bitfield.
    pub fn bits(&mut self, name: &str) -> Result<&mut BitRowMut<'a>> {
        let k = self
            .shared
            .bit_names
            .iter()
            .position(|(l, _)| l == name)
            .ok_or_else(|| Error::UnresolvedReference(name.into()))?;
        Ok(&mut self.work.bits[k])
    }

    /// Append a synapse. `init` follows the order of the rule's `var_refs`;
    /// every other plane starts at zero.
    pub fn add_synapse(&mut self, post: usize, init: &[f64]) -> Result<usize> {
        if self.cursor.is_some() {
            return Err(Error::Rule {
                rule: String::new(),
                message: "add_synapse inside for_each_synapse".into(),
            });
        }
        if init.len() > self.shared.num_syn_refs {
            return Err(Error::ShapeMismatch(format!(
                "{} initial values for {} variable references",
                init.len(),
                self.shared.num_syn_refs
            )));
        }
        let pairs: SmallVec<[(usize, f64); 6]> =
            init.iter().enumerate().map(|(k, &v)| (self.shared.syn[k].1, v)).collect();
        let slot = self.work.row.add(post, &pairs)?;
        self.added += 1;
        if self.shared.record {
            self.events.push(self.event(post, EventKind::Added));
        }
        Ok(slot)
    }

    fn event(&self, post: usize, kind: EventKind) -> StructuralEvent {
        StructuralEvent {
            rule: self.shared.rule,
            projection: self.shared.projection,
            pre: self.id_pre as u32,
            post: post as u32,
            kind,
        }
    }

    /// Visit every synapse of the row once. Inside the callback the current
    /// synapse is reachable through [`id_post`](Self::id_post),
    /// [`syn`](Self::syn) and [`remove_synapse`](Self::remove_synapse).
    pub fn for_each_synapse<F>(&mut self, mut f: F) -> Result<()>
    where
        F: FnMut(&mut Self) -> Result<Flow>,
    {
        let mut slot = 0;
        while slot < self.work.row.len() {
            self.cursor = Some(Cursor { slot, removed: false });
            let flow = f(self);
            let cur = self.cursor.take().expect("cursor");
            let flow = flow?;
            if !cur.removed {
                slot += 1;
            }
            if flow == Flow::Break {
                break;
            }
        }
        Ok(())
    }

    fn current(&self) -> Result<Cursor> {
        match self.cursor {
            Some(c) if !c.removed => Ok(c),
            Some(_) => Err(Error::Rule { rule: String::new(), message: "synapse already removed".into() }),
            None => Err(Error::Rule { rule: String::new(), message: "no current synapse outside for_each_synapse".into() }),
        }
    }

    pub fn id_post(&self) -> Result<usize> {
        let c = self.current()?;
        Ok(self.work.row.target(c.slot))
    }

    pub fn slot(&self) -> Result<usize> {
        Ok(self.current()?.slot)
    }

    /// Value of a synaptic variable of the current synapse.
    pub fn syn(&self, name: &str) -> Result<f64> {
        let c = self.current()?;
        let plane = self.syn_plane(name)?;
        Ok(self.work.row.var(plane, c.slot))
    }

    pub fn set_syn(&mut self, name: &str, value: f64) -> Result<()> {
        let c = self.current()?;
        let plane = self.syn_plane(name)?;
        *self.work.row.var_mut(plane, c.slot) = value;
        Ok(())
    }

    /// Remove the current synapse; the last synapse of the row moves into
    /// its slot and is visited next.
    pub fn remove_synapse(&mut self) -> Result<()> {
        let c = self.current()?;
        let post = self.work.row.target(c.slot);
        self.work.row.remove(c.slot)?;
        self.cursor = Some(Cursor { slot: c.slot, removed: true });
        self.removed += 1;
        if self.shared.record {
            self.events.push(self.event(post, EventKind::Removed));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_4x4(rows: &[Vec<u32>], cap: usize, workers: usize) -> Model {
        let mut m = Model::new(42, Exec::with_workers(workers));
        m.add_population("pre", 4).unwrap();
        m.add_population("post", 4).unwrap();
        let mut mat = RaggedMatrix::with_capacity(4, 4, cap);
        let mut vars = SynapseVars::new(&mat, &["g"]);
        for (i, r) in rows.iter().enumerate() {
            for &j in r {
                mat.add_synapse(&mut vars, i, j as usize, &[(0, 0.5)]).unwrap();
            }
        }
        m.add_projection("sg", "pre", "post", mat, vars).unwrap();
        m
    }

    fn add_diagonal() -> RuleDescriptor {
        RuleDescriptor::new("add_diagonal").var_ref("g", "g").row(|ctx| {
            let i = ctx.id_pre();
            ctx.add_synapse(i, &[1.0])?;
            Ok(())
        })
    }

    #[test]
    fn diagonal_adder() {
        let mut m = model_4x4(&[vec![], vec![], vec![], vec![]], 2, 1);
        let h = m.register_rule("update_connectivity", "sg", add_diagonal()).unwrap();
        m.run_update_group("update_connectivity").unwrap();
        let p = m.projection(0);
        let g = p.vars().by_name("g").unwrap();
        for i in 0..4 {
            assert_eq!(p.matrix().row(i), &[i as u32]);
            assert_eq!(g[p.matrix().index(i, 0)], 1.0);
        }
        assert_eq!(m.rule_stats(h).last_added, 4);
        assert_eq!(m.take_events().len(), 4);
    }

    #[test]
    fn unresolved_and_duplicate() {
        let mut m = model_4x4(&[vec![], vec![], vec![], vec![]], 2, 1);
        let r = RuleDescriptor::new("bad").var_ref("w", "missing");
        assert!(matches!(m.register_rule("g", "sg", r), Err(Error::UnresolvedReference(_))));
        let r = RuleDescriptor::new("bad").pre_var_ref("x", "missing");
        assert!(matches!(m.register_rule("g", "sg", r), Err(Error::UnresolvedReference(_))));
        assert!(matches!(
            m.register_rule("g", "nope", RuleDescriptor::new("x")),
            Err(Error::UnresolvedReference(_))
        ));
        m.register_rule("g", "sg", add_diagonal()).unwrap();
        assert!(matches!(m.register_rule("g", "sg", add_diagonal()), Err(Error::DuplicateName(_))));
        let r = RuleDescriptor::new("dup_local").var_ref("g", "g").pre_var(VarDecl::scalar("g"));
        assert!(matches!(m.register_rule("g", "sg", r), Err(Error::DuplicateName(_))));
        assert!(matches!(m.run_update_group("nope"), Err(Error::UnknownGroup(_))));
    }

    #[test]
    fn rules_run_in_registration_order() {
        let mut m = model_4x4(&[vec![], vec![], vec![], vec![]], 2, 1);
        m.register_rule("grp", "sg", add_diagonal()).unwrap();
        // Second rule sees the first rule's synapse and doubles its weight.
        let r = RuleDescriptor::new("double").var_ref("g", "g").row(|ctx| {
            ctx.for_each_synapse(|c| {
                let g = c.syn("g")?;
                c.set_syn("g", 2.0 * g)?;
                Ok(Flow::Continue)
            })
        });
        m.register_rule("grp", "sg", r).unwrap();
        m.run_update_group("grp").unwrap();
        let p = m.projection(0);
        assert!(p.vars().by_name("g").unwrap().iter().step_by(2).all(|&g| g == 2.0));
    }

    fn remove_random() -> RuleDescriptor {
        RuleDescriptor::new("remove_random")
            .pre_var(VarDecl::count("postInd"))
            .host(|ctx| {
                let n = ctx.num_post() as u64;
                let picks: Vec<f64> = (0..ctx.num_pre()).map(|_| ctx.rng().uniform_int(n) as f64).collect();
                ctx.pre_var_mut("postInd")?.copy_from_slice(&picks);
                Ok(())
            })
            .row(|ctx| {
                let target = ctx.pre("postInd")? as usize;
                ctx.for_each_synapse(|c| {
                    if c.id_post()? == target {
                        c.remove_synapse()?;
                        return Ok(Flow::Break);
                    }
                    Ok(Flow::Continue)
                })
            })
    }

    #[test]
    fn remove_random_follows_host_choice() {
        let full = vec![vec![0, 1, 2, 3]; 4];
        let mut m = model_4x4(&full, 4, 1);
        m.register_rule("u", "sg", remove_random()).unwrap();
        m.run_update_group("u").unwrap();
        let chosen = m.population(0).var("remove_random.postInd").unwrap().to_vec();
        let p = m.projection(0);
        for i in 0..4 {
            assert_eq!(p.matrix().row_length(i), 3);
            assert!(!p.matrix().row(i).contains(&(chosen[i] as u32)));
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let full = vec![vec![0, 1, 2, 3]; 4];
        let run = |workers| {
            let mut m = model_4x4(&full, 4, workers);
            m.register_rule("u", "sg", remove_random()).unwrap();
            for _ in 0..3 {
                m.run_update_group("u").unwrap();
            }
            m.projection(0).matrix().clone()
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn active_rows_gate_the_row_phase() {
        let mut m = model_4x4(&[vec![], vec![], vec![], vec![]], 2, 1);
        let r = RuleDescriptor::new("gated")
            .var_ref("g", "g")
            .pre_var(VarDecl::count("on"))
            .active_rows("on")
            .host(|h| {
                h.pre_var_mut("on")?.copy_from_slice(&[1.0, 0.0, 2.0, 0.0]);
                Ok(())
            })
            .row(|ctx| {
                ctx.count(0, 1);
                let i = ctx.id_pre();
                ctx.add_synapse(i, &[1.0]).map(|_| ())
            });
        let h = m.register_rule("u", "sg", r).unwrap();
        m.run_update_group("u").unwrap();
        assert_eq!(m.rule_stats(h).last[0], 2);
        assert_eq!(m.projection(0).matrix().row_lengths(), &[1, 0, 1, 0]);
        let r = RuleDescriptor::new("bad_gate").active_rows("missing");
        assert!(matches!(m.register_rule("u", "sg", r), Err(Error::UnresolvedReference(_))));
    }

    #[test]
    fn remove_outside_iteration_is_an_error() {
        let mut m = model_4x4(&[vec![1], vec![], vec![], vec![]], 2, 1);
        let r = RuleDescriptor::new("bad").row(|ctx| ctx.remove_synapse());
        m.register_rule("u", "sg", r).unwrap();
        assert!(matches!(m.run_update_group("u"), Err(Error::Rule { .. })));
    }

    #[test]
    fn row_full_error_aborts_group_and_restores_vars() {
        let mut m = model_4x4(&[vec![1], vec![], vec![], vec![]], 1, 1);
        let r = RuleDescriptor::new("fill")
            .pre_var(VarDecl::count("seen"))
            .row(|ctx| {
                *ctx.pre_mut("seen")? = 1.0;
                ctx.add_synapse(0, &[])?;
                Ok(())
            });
        m.register_rule("u", "sg", r).unwrap();
        let err = m.run_update_group("u").unwrap_err();
        assert!(matches!(err, Error::Rule { .. }));
        assert!(err.to_string().contains("row 0 is full"));
        assert_eq!(m.population(0).var("fill.seen").unwrap(), &[1.0; 4]);
    }

    #[test]
    fn transpose_refreshed_only_when_mutated() {
        let mut m = model_4x4(&[vec![], vec![], vec![], vec![]], 2, 1);
        m.enable_transpose("sg").unwrap();
        m.register_rule("u", "sg", add_diagonal()).unwrap();
        m.register_rule("noop", "sg", RuleDescriptor::new("noop").row(|_| Ok(()))).unwrap();
        m.run_update_group("u").unwrap();
        let t = m.projection(0).transpose().unwrap();
        assert!((0..4).all(|j| t.column(j) == [(j as u32, 0)]));
        let remap_before = m.timers().remap;
        m.run_update_group("noop").unwrap();
        assert_eq!(m.timers().remap, remap_before);
        m.set_force_remap(true);
        m.run_update_group("noop").unwrap();
        assert!(m.timers().remap > remap_before);
    }

    #[test]
    fn row_sees_only_its_own_pre_element() {
        let mut m = model_4x4(&[vec![], vec![], vec![], vec![]], 1, 4);
        m.add_population_var("post", "rate").unwrap();
        m.population_mut(1).var_mut("rate").unwrap().copy_from_slice(&[0.0, 1.0, 2.0, 3.0]);
        let r = RuleDescriptor::new("probe")
            .pre_var(VarDecl::scalar("tag"))
            .post_var_ref("rate", "rate")
            .row(|ctx| {
                let i = ctx.id_pre();
                let rate = ctx.post("rate")?[i];
                *ctx.pre_mut("tag")? = 10.0 * i as f64 + rate;
                Ok(())
            });
        m.register_rule("u", "sg", r).unwrap();
        m.run_update_group("u").unwrap();
        assert_eq!(m.population(0).var("probe.tag").unwrap(), &[0.0, 11.0, 22.0, 33.0]);
    }
}
