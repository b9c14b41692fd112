//! Reference models shared by the integration tests and the acceptance
//! suite. Nothing here calls the code under test to compute an expected
//! value.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rewire::deep_r::{mirror_is_coherent, sign_violations, DeepR};
use rewire::exec::Exec;
use rewire::framework::{EventKind, Model};
use rewire::plasticity::{output_error, EpropCoeffs, Eligibility, OutputGrad, Stdp, StdpParams};
use rewire::ragged::{RaggedMatrix, SynapseVars, TransposeMap};
use rewire::rng::CounterRng;
use rewire::Error;

/// Apply `ops` random add/remove calls to an empty `n x n` matrix with row
/// capacity `cap`, mirroring every call in a map `(pre, post) -> value`.
/// Checks the edge set, the planes and the error kind after every call.
pub fn set_oracle_run(n: usize, cap: usize, ops: usize, seed: u64) -> std::result::Result<(), String> {
    let mut m = RaggedMatrix::with_capacity(n, n, cap);
    let mut vars = SynapseVars::new(&m, &["a", "b"]);
    let mut reference: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rng = CounterRng::keyed(seed, 99, 0, 0);
    for op in 0..ops {
        let pre = rng.uniform_int(n as u64) as usize;
        let len = reference.range((pre, 0)..(pre + 1, 0)).count();
        if rng.uniform01() < 0.55 {
            let post = rng.uniform_int(n as u64) as usize;
            let value = op as f64 + 0.5;
            let r = m.add_synapse(&mut vars, pre, post, &[(0, value), (1, -value)]);
            match (reference.contains_key(&(pre, post)), len >= cap, r) {
                (true, _, Err(Error::DuplicateEdge { .. })) => {}
                (_, true, Err(Error::RowFull { .. })) => {}
                (false, false, Ok(_)) => {
                    reference.insert((pre, post), value);
                }
                (dup, full, r) => return Err(format!("op {op}: add ({pre},{post}) dup={dup} full={full} gave {r:?}")),
            }
        } else {
            let slot = rng.uniform_int(cap as u64 + 1) as usize;
            let target = m.row(pre).get(slot).map(|&j| j as usize);
            let r = m.remove_synapse(&mut vars, pre, slot);
            match (target, r) {
                (Some(j), Ok(())) if reference.remove(&(pre, j)).is_some() => {}
                (None, Err(Error::SlotOutOfRange { .. })) if slot >= len => {}
                (t, r) => return Err(format!("op {op}: remove ({pre}, slot {slot}) target {t:?} gave {r:?}")),
            }
        }
        compare(&m, &vars, &reference).map_err(|e| format!("op {op}: {e}"))?;
    }
    Ok(())
}

fn compare(m: &RaggedMatrix, vars: &SynapseVars, reference: &BTreeMap<(usize, usize), f64>) -> Result<(), String> {
    if m.edge_count() != reference.len() {
        return Err(format!("{} edges, reference has {}", m.edge_count(), reference.len()));
    }
    let (a, b) = (vars.plane(0), vars.plane(1));
    for (i, s, j) in m.edges() {
        let Some(&v) = reference.get(&(i, j)) else {
            return Err(format!("unexpected edge ({i},{j})"));
        };
        let k = m.index(i, s);
        if a[k] != v || b[k] != -v {
            return Err(format!("planes misaligned at ({i},{j}): {} {} vs {v}", a[k], b[k]));
        }
    }
    m.check_invariants().map_err(|e| e.to_string())
}

/// Random matrix with unsorted rows.
pub fn random_matrix(n_pre: usize, n_post: usize, density: f64, seed: u64) -> RaggedMatrix {
    let mut rng = CounterRng::keyed(seed, 98, 0, 0);
    let rows: Vec<Vec<u32>> = (0..n_pre)
        .map(|_| (0..n_post as u32).filter(|_| rng.uniform01() < density).collect())
        .collect();
    let mut m = RaggedMatrix::from_rows(n_post, &rows, 1.5).unwrap();
    // Shuffle slot order with swap-removals and re-adds so rows are not sorted.
    let mut vars = SynapseVars::new(&m, &[]);
    for i in 0..n_pre {
        let len = m.row_length(i);
        if len > 1 {
            let s = rng.uniform_int(len as u64) as usize;
            let j = m.row(i)[s] as usize;
            m.remove_synapse(&mut vars, i, s).unwrap();
            m.add_synapse(&mut vars, i, j, &[]).unwrap();
        }
    }
    m
}

/// The transpose lists every synapse exactly once, in its target column,
/// with a `(pre, slot)` that points back at it; and the dense masks agree.
pub fn transpose_is_inverse(m: &RaggedMatrix, t: &TransposeMap) -> Result<(), String> {
    let mut seen = vec![vec![false; m.max_row_length()]; m.num_pre()];
    let mut total = 0;
    let mut dense_t = vec![vec![false; m.num_pre()]; m.num_post()];
    for j in 0..m.num_post() {
        let col = t.column(j);
        if col.len() != t.col_length(j) {
            return Err(format!("column {j} length mismatch"));
        }
        for &(pre, slot) in col {
            let (pre, slot) = (pre as usize, slot as usize);
            if slot >= m.row_length(pre) || m.row(pre)[slot] as usize != j {
                return Err(format!("column {j} entry ({pre},{slot}) does not point back"));
            }
            if std::mem::replace(&mut seen[pre][slot], true) {
                return Err(format!("({pre},{slot}) listed twice"));
            }
            dense_t[j][pre] = true;
            total += 1;
        }
    }
    if total != m.edge_count() {
        return Err(format!("{total} transpose entries for {} edges", m.edge_count()));
    }
    let mask = m.to_dense_mask();
    for i in 0..m.num_pre() {
        for j in 0..m.num_post() {
            if mask[i][j] != dense_t[j][i] {
                return Err(format!("dense mismatch at ({i},{j})"));
            }
        }
    }
    Ok(())
}

/// Brute-force all-pairs STDP change of synapse `pre -> post` for spike
/// step lists, with the per-step order depression (pre) then potentiation
/// (post): a pre and post spike in the same step count as pre-before-post.
pub fn stdp_all_pairs(
    pre_steps: &[usize],
    post_steps: &[usize],
    h: f64,
    a_plus: f64,
    a_minus: f64,
    tau_plus: f64,
    tau_minus: f64,
) -> f64 {
    let mut dw = 0.0;
    for &tp in pre_steps {
        for &tq in post_steps {
            if tp <= tq {
                dw += a_plus * (-((tq - tp) as f64) * h / tau_plus).exp();
            } else {
                dw -= a_minus * (-((tp - tq) as f64) * h / tau_minus).exp();
            }
        }
    }
    dw
}

/// Unrolled e-prop for one synapse: inputs per step are the presynaptic
/// trace `zbar`, the postsynaptic pseudo-derivative `psi` and the learning
/// signal `l`. Returns `(eps after the last step, e_bar at the last step,
/// accumulated gradient)`.
pub fn eprop_unrolled(zbar: &[f64], psi: &[f64], l: &[f64], alpha: f64, rho: f64, beta: f64) -> (f64, f64, f64) {
    let t_len = zbar.len();
    // eps^t = sum_{s<t} psi^s zbar^s prod_{u=s+1}^{t-1} (rho - psi^u beta)
    let eps_at = |t: usize| -> f64 {
        (0..t)
            .map(|s| {
                let prod: f64 = (s + 1..t).map(|u| rho - psi[u] * beta).product();
                psi[s] * zbar[s] * prod
            })
            .sum()
    };
    let e_at = |t: usize| psi[t] * (zbar[t] - beta * eps_at(t));
    let e_values: Vec<f64> = (0..t_len).map(e_at).collect();
    let e_bar_at = |t: usize| -> f64 { (0..=t).map(|s| alpha.powi((t - s) as i32) * e_values[s]).sum() };
    let grad = (0..t_len).map(|t| l[t] * e_bar_at(t)).sum();
    (eps_at(t_len), e_bar_at(t_len - 1), grad)
}

/// Cross-entropy summed over time of a leaky readout
/// `y^t = kappa y^{t-1} + W z^t + b` driven by fixed spike vectors.
pub fn readout_loss(w: &[f64], b: &[f64], z: &[Vec<f64>], kappa: f64, label: usize) -> f64 {
    let (k_out, n) = (b.len(), z[0].len());
    let mut y = vec![0.0; k_out];
    let mut loss = 0.0;
    for zt in z {
        for k in 0..k_out {
            let drive: f64 = (0..n).map(|j| w[k * n + j] * zt[j]).sum();
            y[k] = kappa * y[k] + drive + b[k];
        }
        let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - y[label];
    }
    loss
}

/// Pearson chi-square statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    let e = total / counts.len() as f64;
    counts.iter().map(|c| (c - e) * (c - e) / e).sum()
}

/// Loose upper bound for a chi-square variable with `df` degrees of
/// freedom: mean plus six standard deviations.
pub fn chi_square_bound(df: usize) -> f64 {
    df as f64 + 6.0 * (2.0 * df as f64).sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn full_matrix(n_pre: usize, n_post: usize) -> RaggedMatrix {
    let rows: Vec<Vec<u32>> = (0..n_pre).map(|_| (0..n_post as u32).collect()).collect();
    RaggedMatrix::from_rows(n_post, &rows, 1.0).unwrap()
}

pub fn spike_trains(n: usize, steps: usize, p: f64, rng: &mut CounterRng) -> Vec<Vec<u32>> {
    (0..steps).map(|_| (0..n as u32).filter(|_| rng.uniform01() < p).collect()).collect()
}

/// Largest relative error between the trace-based weight changes and the
/// all-pairs sums, for one random draw.
pub fn stdp_max_error(n: usize, steps: usize, seed: u64, exec: &Exec) -> f64 {
    let params = StdpParams { clamp: false, ..StdpParams::default() };
    let m = full_matrix(n, n);
    let t = m.remap_transpose();
    let mut vars = SynapseVars::new(&m, &["g"]);
    let mut stdp = Stdp::new(n, n, params);
    let mut rng = CounterRng::keyed(seed, 11, 0, 0);
    let pre = spike_trains(n, steps, 0.05, &mut rng);
    let post = spike_trains(n, steps, 0.05, &mut rng);
    for k in 0..steps {
        stdp.step(&m, &t, vars.plane_mut(0), &pre[k], &post[k], exec).unwrap();
    }
    let times = |trains: &[Vec<u32>], i: usize| -> Vec<usize> {
        (0..steps).filter(|&k| trains[k].contains(&(i as u32))).collect()
    };
    let mut worst: f64 = 0.0;
    for (i, s, j) in m.edges() {
        let expected = stdp_all_pairs(
            &times(&pre, i),
            &times(&post, j),
            params.h,
            params.a_plus(),
            params.a_minus(),
            params.tau_plus,
            params.tau_minus,
        );
        worst = worst.max(rel_err(vars.plane(0)[m.index(i, s)], expected));
    }
    worst
}


/// Largest relative error of eps, e_bar and the gradient against the
/// unrolled sums, over every synapse of a random 3x4 matrix.
pub fn eprop_max_error(steps: usize, seed: u64) -> f64 {
    let rows = vec![vec![0, 2, 3], vec![1], vec![3, 0, 1, 2]];
    let m = RaggedMatrix::from_rows(4, &rows, 1.5).unwrap();
    let c = EpropCoeffs { alpha: (-1.0f64 / 20.0).exp(), rho: (-1.0f64 / 200.0).exp(), beta: 1.7 };
    let mut rng = CounterRng::keyed(seed, 13, 0, 0);
    let mut draw = |n: usize, scale: f64| -> Vec<Vec<f64>> {
        (0..steps).map(|_| (0..n).map(|_| scale * rng.uniform01()).collect()).collect()
    };
    let zbar = draw(3, 3.0);
    let psi = draw(4, 0.5);
    let learning: Vec<Vec<f64>> = draw(4, 2.0).into_iter().map(|v| v.into_iter().map(|x| x - 1.0).collect()).collect();
    let mut el = Eligibility::new(&m);
    for t in 0..steps {
        el.accumulate_step(&m, &zbar[t], &psi[t], &learning[t], c, &Exec::serial());
    }
    let mut worst: f64 = 0.0;
    for (i, s, j) in m.edges() {
        let zb: Vec<f64> = zbar.iter().map(|v| v[i]).collect();
        let ps: Vec<f64> = psi.iter().map(|v| v[j]).collect();
        let l: Vec<f64> = learning.iter().map(|v| v[j]).collect();
        let (eps, e_bar, grad) = eprop_unrolled(&zb, &ps, &l, c.alpha, c.rho, c.beta);
        let k = m.index(i, s);
        for (got, want) in [(el.eps[k], eps), (el.e_bar[k], e_bar), (el.grad[k], grad)] {
            worst = worst.max(rel_err(got, want));
        }
    }
    worst
}


/// Largest relative gap between the delta-rule output gradients and central
/// finite differences of the summed cross-entropy.
pub fn output_grad_fd_error(seed: u64) -> f64 {
    let (k_out, n, steps, label) = (3, 6, 40, 1);
    let kappa = (-1.0f64 / 20.0).exp();
    let mut rng = CounterRng::keyed(seed, 14, 0, 0);
    let z: Vec<Vec<f64>> =
        (0..steps).map(|_| (0..n).map(|_| if rng.uniform01() < 0.2 { 1.0 } else { 0.0 }).collect()).collect();
    let w: Vec<f64> = (0..k_out * n).map(|_| rng.uniform01() - 0.5).collect();
    let b: Vec<f64> = (0..k_out).map(|_| 0.2 * (rng.uniform01() - 0.5)).collect();

    let mut grad = OutputGrad::new(k_out, n);
    let mut y = vec![0.0; k_out];
    let mut z_bar = vec![0.0; n];
    let mut err = vec![0.0; k_out];
    for zt in &z {
        for k in 0..k_out {
            y[k] = kappa * y[k] + (0..n).map(|j| w[k * n + j] * zt[j]).sum::<f64>() + b[k];
        }
        for (zb, &zj) in z_bar.iter_mut().zip(zt) {
            *zb = kappa * *zb + zj;
        }
        output_error(&y, label, &mut err);
        grad.accumulate(&err, &z_bar, kappa);
    }

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for idx in 0..k_out * n {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[idx] += h;
        wm[idx] -= h;
        let fd = (readout_loss(&wp, &b, &z, kappa, label) - readout_loss(&wm, &b, &z, kappa, label))
            / (2.0 * h);
        worst = worst.max(rel_err(grad.d_w[idx], fd));
    }
    for k in 0..k_out {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[k] += h;
        bm[k] -= h;
        let fd = (readout_loss(&w, &bp, &z, kappa, label) - readout_loss(&w, &bm, &z, kappa, label))
            / (2.0 * h);
        worst = worst.max(rel_err(grad.d_b[k], fd));
    }
    worst
}

/// Outcome of [`deep_r_cycles`].
pub struct DeepRRun {
    pub edges: usize,
    /// Synapses added per presynaptic row over all cycles.
    pub added_per_pre: Vec<f64>,
    pub removed: u64,
}

/// Random `n x n` projection `p` at `density` with random signed weights.
pub fn deep_r_model(n: usize, density: f64, seed: u64, exec: Exec) -> Model {
    let mut rng = CounterRng::keyed(seed, 15, 0, 0);
    let rows: Vec<Vec<u32>> = (0..n).map(|_| (0..n as u32).filter(|_| rng.uniform01() < density).collect()).collect();
    let matrix = RaggedMatrix::from_rows(n, &rows, 2.0).unwrap();
    let mut vars = SynapseVars::new(&matrix, &["w"]);
    for w in vars.plane_mut(0) {
        *w = rng.uniform01() - 0.5;
    }
    let mut model = Model::new(seed, exec);
    model.add_population("pre", n).unwrap();
    model.add_population("post", n).unwrap();
    model.add_projection("p", "pre", "post", matrix, vars).unwrap();
    model
}

/// Run `cycles` eliminate+form cycles, each after a random kick to every
/// weight large enough to flip about half the signs. Checks the synapse
/// count, sign coherence and the connectivity mirror after every cycle.
pub fn deep_r_cycles(model: &mut Model, cycles: usize, seed: u64) -> Result<DeepRRun, String> {
    let mut d = DeepR::register(model, "p", "w", 0.0, false).map_err(|e| e.to_string())?;
    d.init(model).map_err(|e| e.to_string())?;
    model.set_record_events(true);
    let edges = model.projection_by_name("p").unwrap().matrix().edge_count();
    let n = model.projection_by_name("p").unwrap().matrix().num_pre();
    let mut added_per_pre = vec![0.0; n];
    let mut removed = 0;
    let mut rng = CounterRng::keyed(seed, 16, 0, 0);
    let p = model.projection_index("p").unwrap();
    for cycle in 0..cycles {
        for w in model.projection_mut(p).vars_mut().plane_mut(0) {
            *w += 2.0 * (rng.uniform01() - 0.5);
        }
        let rec = d.rewire(model).map_err(|e| e.to_string())?;
        removed += rec.removed;
        for ev in model.take_events() {
            if ev.kind == EventKind::Added {
                added_per_pre[ev.pre as usize] += 1.0;
            }
        }
        let now = model.projection_by_name("p").unwrap().matrix().edge_count();
        if now != edges || rec.total as usize != edges {
            return Err(format!("cycle {cycle}: {now} synapses, started with {edges}"));
        }
        let bad = sign_violations(model, "p", "w");
        if bad != 0 {
            return Err(format!("cycle {cycle}: {bad} synapses oppose their sign"));
        }
        if !mirror_is_coherent(model, "p") {
            return Err(format!("cycle {cycle}: connectivity bits disagree with the matrix"));
        }
    }
    Ok(DeepRRun { edges, added_per_pre, removed })
}

/// Grid sum of `p_form exp(-d^2 / 2 sigma^2)` over every node of a
/// `side x side` torus seen from node 0, with the per-axis wrapped
/// distance. Returns the expected degree and the binomial variance of one
/// neuron's degree.
pub fn grid_sum_degree(p_form: f64, sigma: f64, side: usize) -> (f64, f64) {
    let wrap = |d: usize| -> f64 {
        let d = d.min(side - d) as f64;
        d * d
    };
    let (mut mean, mut var) = (0.0, 0.0);
    for x in 0..side {
        for y in 0..side {
            let p = p_form * (-(wrap(x) + wrap(y)) / (2.0 * sigma * sigma)).exp();
            mean += p;
            var += p * (1.0 - p);
        }
    }
    (mean, var)
}

/// Measured mean in-degree of a projection and its distance from the grid
/// sum in units of the binomial standard deviation of that mean.
pub fn initial_degree_z(m: &RaggedMatrix, p_form: f64, sigma: f64, side: usize) -> (f64, f64, f64) {
    let (expected, var) = grid_sum_degree(p_form, sigma, side);
    let measured = m.edge_count() as f64 / m.num_post() as f64;
    let sd = (var / m.num_post() as f64).sqrt();
    (measured, expected, (measured - expected).abs() / sd)
}
