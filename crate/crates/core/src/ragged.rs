//! Ragged-matrix sparse connectivity.
//!
//! Row `i` holds the postsynaptic targets of presynaptic neuron `i` in its
//! first `row_length[i]` slots. Every row is padded to the same capacity, so
//! synapses are added at the end of a row and removed by moving the last
//! synapse into the hole. Synaptic variables live in planes with the same
//! padded shape and are moved together with the targets.

use std::io::{Read, Write};

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::CounterRng;

#[derive(Clone, Debug, PartialEq)]
pub struct RaggedMatrix {
    num_pre: usize,
    num_post: usize,
    max_row_length: usize,
    row_length: Vec<u32>,
    target: Vec<u32>,
    multapse_free: bool,
    revision: u64,
}

impl RaggedMatrix {
    /// Empty matrix with `capacity` slots per row, multapse-free.
    pub fn with_capacity(num_pre: usize, num_post: usize, capacity: usize) -> Self {
        Self {
            num_pre,
            num_post,
            max_row_length: capacity,
            row_length: vec![0; num_pre],
            target: vec![0; num_pre * capacity],
            multapse_free: true,
            revision: 0,
        }
    }

    /// Build from explicit rows. Capacity is the longest row times
    /// `headroom`, rounded up.
    pub fn from_rows(num_post: usize, rows: &[Vec<u32>], headroom: f64) -> Result<Self> {
        let longest = rows.iter().map(Vec::len).max().unwrap_or(0);
        let capacity = (longest as f64 * headroom.max(1.0)).ceil() as usize;
        Self::from_rows_with_capacity(num_post, rows, capacity)
    }

    /// Build from explicit rows with a fixed row capacity.
    pub fn from_rows_with_capacity(num_post: usize, rows: &[Vec<u32>], capacity: usize) -> Result<Self> {
        let mut m = Self::with_capacity(rows.len(), num_post, capacity);
        for (i, row) in rows.iter().enumerate() {
            for &j in row {
                m.push_target(i, j as usize)?;
            }
        }
        Ok(m)
    }

    /// Connect every pair `(i, j)` independently with probability
    /// `prob(i, j)`. Row `i` draws from its own stream keyed by `(seed,
    /// stream, 0, i)`, so the result is independent of `exec`.
    pub fn init_pairwise_bernoulli<F>(
        num_pre: usize,
        num_post: usize,
        prob: F,
        headroom: f64,
        seed: u64,
        stream: u32,
        exec: &Exec,
    ) -> Self
    where
        F: Fn(usize, usize) -> f64 + Send + Sync,
    {
        assert!(headroom >= 1.0, "capacity headroom must be >= 1");
        let rows = pairwise_bernoulli_rows(num_pre, num_post, prob, seed, stream, exec);
        Self::from_rows(num_post, &rows, headroom).expect("rows fit by construction")
    }

    fn push_target(&mut self, pre: usize, post: usize) -> Result<usize> {
        let mut row = self.row_view(pre);
        let slot = row.push(post)?;
        Ok(slot)
    }

    fn row_view(&mut self, pre: usize) -> RowMut<'_> {
        let cap = self.max_row_length;
        RowMut {
            id_pre: pre,
            num_post: self.num_post,
            multapse_free: self.multapse_free,
            len: &mut self.row_length[pre],
            targets: &mut self.target[pre * cap..(pre + 1) * cap],
            planes: SmallVec::new(),
            dirty: false,
        }
    }

    pub fn set_multapse_free(&mut self, on: bool) {
        self.multapse_free = on;
    }

    pub fn multapse_free(&self) -> bool {
        self.multapse_free
    }

    pub fn num_pre(&self) -> usize {
        self.num_pre
    }

    pub fn num_post(&self) -> usize {
        self.num_post
    }

    pub fn max_row_length(&self) -> usize {
        self.max_row_length
    }

    pub fn row_length(&self, pre: usize) -> usize {
        self.row_length[pre] as usize
    }

    pub fn row_lengths(&self) -> &[u32] {
        &self.row_length
    }

    /// Valid targets of row `pre`.
    pub fn row(&self, pre: usize) -> &[u32] {
        let cap = self.max_row_length;
        &self.target[pre * cap..pre * cap + self.row_length[pre] as usize]
    }

    /// Flat index of `(pre, slot)` into synaptic variable planes.
    #[inline]
    pub fn index(&self, pre: usize, slot: usize) -> usize {
        pre * self.max_row_length + slot
    }

    /// Incremented by every structural mutation.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn bump_revision(&mut self) {
        self.revision += 1;
    }

    pub fn edge_count(&self) -> usize {
        self.row_length.iter().map(|&l| l as usize).sum()
    }

    /// `(pre, slot, post)` for every valid synapse in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.num_pre).flat_map(move |i| {
            self.row(i).iter().enumerate().map(move |(s, &j)| (i, s, j as usize))
        })
    }

    pub fn find(&self, pre: usize, post: usize) -> Option<usize> {
        self.row(pre).iter().position(|&j| j as usize == post)
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.row_length.iter().map(|&l| l as usize).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_post];
        for (_, _, j) in self.edges() {
            deg[j] += 1;
        }
        deg
    }

    pub fn add_synapse(
        &mut self,
        vars: &mut SynapseVars,
        pre: usize,
        post: usize,
        init: &[(usize, f64)],
    ) -> Result<usize> {
        self.check_pre(pre)?;
        let slot = {
            let mut row = row_mut_of(self, vars, pre);
            row.add(post, init)?
        };
        self.bump_revision();
        Ok(slot)
    }

    pub fn remove_synapse(&mut self, vars: &mut SynapseVars, pre: usize, slot: usize) -> Result<()> {
        self.check_pre(pre)?;
        {
            let mut row = row_mut_of(self, vars, pre);
            row.remove(slot)?;
        }
        self.bump_revision();
        Ok(())
    }

    fn check_pre(&self, pre: usize) -> Result<()> {
        if pre >= self.num_pre {
            return Err(Error::IndexOutOfRange { index: pre, size: self.num_pre });
        }
        Ok(())
    }

    /// `out[j] += w` for every synapse of every spiking row, in spike order
    /// then slot order.
    pub fn propagate_spikes(&self, weights: &[f64], spikes: &[u32], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.num_post);
        debug_assert_eq!(weights.len(), self.num_pre * self.max_row_length);
        let cap = self.max_row_length;
        for &i in spikes {
            let i = i as usize;
            let len = self.row_length[i] as usize;
            let base = i * cap;
            let targets = &self.target[base..base + len];
            let w = &weights[base..base + len];
            for (&j, &wij) in targets.iter().zip(w) {
                out[j as usize] += wij;
            }
        }
    }

    /// Build the postsynaptically indexed view.
    pub fn remap_transpose(&self) -> TransposeMap {
        let mut col_length = vec![0u32; self.num_post];
        for (_, _, j) in self.edges() {
            col_length[j] += 1;
        }
        let max_col_length = col_length.iter().copied().max().unwrap_or(0) as usize;
        let mut source = vec![(0u32, 0u32); self.num_post * max_col_length];
        let mut fill = vec![0u32; self.num_post];
        for (i, s, j) in self.edges() {
            source[j * max_col_length + fill[j] as usize] = (i as u32, s as u32);
            fill[j] += 1;
        }
        TransposeMap { num_post: self.num_post, max_col_length, col_length, source, revision: self.revision }
    }

    /// Dense `num_pre x num_post` presence mask. Test and debug helper.
    pub fn to_dense_mask(&self) -> Vec<Vec<bool>> {
        let mut mask = vec![vec![false; self.num_post]; self.num_pre];
        for (i, _, j) in self.edges() {
            mask[i][j] = true;
        }
        mask
    }

    /// Dense weight matrix summing multapses. Test and debug helper.
    pub fn to_dense_weights(&self, weights: &[f64]) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.num_post]; self.num_pre];
        for (i, s, j) in self.edges() {
            dense[i][j] += weights[self.index(i, s)];
        }
        dense
    }

    /// Text grid of 0/1, one line per presynaptic row.
    pub fn dense_mask_text(&self) -> String {
        let mut out = String::with_capacity(self.num_pre * (self.num_post + 1));
        for row in self.to_dense_mask() {
            out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
            out.push('\n');
        }
        out
    }

    /// Checks capacity, target range and (when enabled) multapse freedom.
    pub fn check_invariants(&self) -> Result<()> {
        for i in 0..self.num_pre {
            let len = self.row_length[i] as usize;
            if len > self.max_row_length {
                return Err(Error::RowFull { pre: i, capacity: self.max_row_length });
            }
            let row = self.row(i);
            for (s, &j) in row.iter().enumerate() {
                if j as usize >= self.num_post {
                    return Err(Error::IndexOutOfRange { index: j as usize, size: self.num_post });
                }
                if self.multapse_free && row[..s].contains(&j) {
                    return Err(Error::DuplicateEdge { pre: i, post: j as usize });
                }
            }
        }
        Ok(())
    }

    /// Disjoint mutable views of every row with their variable planes.
    pub fn rows_mut<'a>(&'a mut self, vars: &'a mut SynapseVars) -> Vec<RowMut<'a>> {
        self.rows_mut_iter(vars).collect()
    }

    /// Lazy form of [`rows_mut`](Self::rows_mut).
    pub fn rows_mut_iter<'a>(&'a mut self, vars: &'a mut SynapseVars) -> impl Iterator<Item = RowMut<'a>> + 'a {
        let n = self.num_pre;
        self.rows_mut_select(vars, 0..n)
    }

    /// Disjoint mutable views of the rows in `rows`, which must be strictly
    /// ascending. Skipped rows cost nothing.
    pub fn rows_mut_select<'a, I>(&'a mut self, vars: &'a mut SynapseVars, rows: I) -> impl Iterator<Item = RowMut<'a>> + 'a
    where
        I: IntoIterator<Item = usize>,
        I::IntoIter: 'a,
    {
        assert_eq!(vars.stride, self.max_row_length, "variable planes do not match matrix");
        let cap = self.max_row_length;
        let num_post = self.num_post;
        let multapse_free = self.multapse_free;
        let mut plane_rows: SmallVec<[std::slice::ChunksMut<'a, f64>; 6]> =
            vars.planes.iter_mut().map(|p| p.chunks_mut(cap.max(1))).collect();
        let mut target_rows = self.target.chunks_mut(cap.max(1));
        let mut lengths = self.row_length.iter_mut();
        let mut next = 0usize;
        rows.into_iter().map(move |i| {
            assert!(i >= next, "rows must be strictly ascending");
            let skip = i - next;
            next = i + 1;
            RowMut {
                id_pre: i,
                num_post,
                multapse_free,
                len: lengths.nth(skip).expect("row in range"),
                targets: if cap == 0 { &mut [] } else { target_rows.nth(skip).expect("target row") },
                planes: plane_rows
                    .iter_mut()
                    .map(|it| if cap == 0 { &mut [][..] } else { it.nth(skip).expect("plane row") })
                    .collect(),
                dirty: false,
            }
        })
    }
}

fn row_mut_of<'a>(m: &'a mut RaggedMatrix, vars: &'a mut SynapseVars, pre: usize) -> RowMut<'a> {
    assert_eq!(vars.stride, m.max_row_length, "variable planes do not match matrix");
    let cap = m.max_row_length;
    RowMut {
        id_pre: pre,
        num_post: m.num_post,
        multapse_free: m.multapse_free,
        len: &mut m.row_length[pre],
        targets: &mut m.target[pre * cap..(pre + 1) * cap],
        planes: vars.planes.iter_mut().map(|p| &mut p[pre * cap..(pre + 1) * cap]).collect(),
        dirty: false,
    }
}

/// Target lists of a pairwise Bernoulli draw; see
/// [`RaggedMatrix::init_pairwise_bernoulli`].
pub fn pairwise_bernoulli_rows<F>(
    num_pre: usize,
    num_post: usize,
    prob: F,
    seed: u64,
    stream: u32,
    exec: &Exec,
) -> Vec<Vec<u32>>
where
    F: Fn(usize, usize) -> f64 + Send + Sync,
{
    exec.map_range(num_pre, 16, |i| {
        let mut rng = CounterRng::keyed(seed, stream, 0, i as u32);
        (0..num_post)
            .filter(|&j| {
                let p = prob(i, j);
                debug_assert!((0.0..=1.0).contains(&p));
                rng.uniform01() < p
            })
            .map(|j| j as u32)
            .collect()
    })
}

/// Mutable view of one row: its length, target slots and the matching
/// slice of every variable plane.
#[derive(Debug)]
pub struct RowMut<'a> {
    id_pre: usize,
    num_post: usize,
    multapse_free: bool,
    len: &'a mut u32,
    targets: &'a mut [u32],
    planes: SmallVec<[&'a mut [f64]; 6]>,
    dirty: bool,
}

impl RowMut<'_> {
    pub fn id_pre(&self) -> usize {
        self.id_pre
    }

    pub fn len(&self) -> usize {
        *self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        *self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.targets.len()
    }

    pub fn num_post(&self) -> usize {
        self.num_post
    }

    pub fn targets(&self) -> &[u32] {
        &self.targets[..self.len()]
    }

    #[inline]
    pub fn target(&self, slot: usize) -> usize {
        self.targets[slot] as usize
    }

    #[inline]
    pub fn var(&self, plane: usize, slot: usize) -> f64 {
        self.planes[plane][slot]
    }

    #[inline]
    pub fn var_mut(&mut self, plane: usize, slot: usize) -> &mut f64 {
        &mut self.planes[plane][slot]
    }

    pub fn plane(&self, plane: usize) -> &[f64] {
        &self.planes[plane][..self.len()]
    }

    pub fn plane_mut(&mut self, plane: usize) -> &mut [f64] {
        let len = self.len();
        &mut self.planes[plane][..len]
    }

    /// True once the row has been structurally modified through this view.
    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn contains(&self, post: usize) -> bool {
        self.targets().iter().any(|&j| j as usize == post)
    }

    fn push(&mut self, post: usize) -> Result<usize> {
        if post >= self.num_post {
            return Err(Error::IndexOutOfRange { index: post, size: self.num_post });
        }
        let len = self.len();
        if len >= self.capacity() {
            return Err(Error::RowFull { pre: self.id_pre, capacity: self.capacity() });
        }
        if self.multapse_free && self.contains(post) {
            return Err(Error::DuplicateEdge { pre: self.id_pre, post });
        }
        self.targets[len] = post as u32;
        *self.len += 1;
        self.dirty = true;
        Ok(len)
    }

    /// Append a synapse. Planes listed in `init` as `(plane, value)` get that
    /// value; all other planes start at zero.
    pub fn add(&mut self, post: usize, init: &[(usize, f64)]) -> Result<usize> {
        let slot = self.push(post)?;
        for p in self.planes.iter_mut() {
            p[slot] = 0.0;
        }
        for &(plane, value) in init {
            self.planes[plane][slot] = value;
        }
        Ok(slot)
    }

    /// Remove the synapse in `slot`, moving the last synapse into it.
    pub fn remove(&mut self, slot: usize) -> Result<()> {
        let len = self.len();
        if slot >= len {
            return Err(Error::SlotOutOfRange { pre: self.id_pre, slot, len });
        }
        let last = len - 1;
        if slot != last {
            self.targets[slot] = self.targets[last];
            for p in self.planes.iter_mut() {
                p[slot] = p[last];
            }
        }
        *self.len -= 1;
        self.dirty = true;
        Ok(())
    }
}

/// Named synaptic variable planes, slot-aligned with one [`RaggedMatrix`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynapseVars {
    names: Vec<String>,
    planes: Vec<Vec<f64>>,
    stride: usize,
}

impl SynapseVars {
    pub fn new(matrix: &RaggedMatrix, names: &[&str]) -> Self {
        let mut v = Self { names: Vec::new(), planes: Vec::new(), stride: matrix.max_row_length };
        for n in names {
            v.add_plane(matrix, n).expect("distinct plane names");
        }
        v
    }

    /// Allocate a zeroed plane.
    pub fn add_plane(&mut self, matrix: &RaggedMatrix, name: &str) -> Result<usize> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        self.names.push(name.to_string());
        self.planes.push(vec![0.0; matrix.num_pre * matrix.max_row_length]);
        Ok(self.planes.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn plane(&self, idx: usize) -> &[f64] {
        &self.planes[idx]
    }

    pub fn plane_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.planes[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.planes[i].as_slice())
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.index_of(name).map(move |i| self.planes[i].as_mut_slice())
    }

    /// Two distinct planes, both mutable.
    pub fn pair_mut(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a, b);
        if a < b {
            let (lo, hi) = self.planes.split_at_mut(b);
            (&mut lo[a], &mut hi[0])
        } else {
            let (lo, hi) = self.planes.split_at_mut(a);
            (&mut hi[0], &mut lo[b])
        }
    }

    /// Several distinct planes, all mutable.
    pub fn planes_mut<const N: usize>(&mut self, idx: [usize; N]) -> [&mut [f64]; N] {
        self.planes.get_disjoint_mut(idx).expect("distinct plane indices").map(|p| p.as_mut_slice())
    }
}

/// Postsynaptically indexed view: column `j` lists `(pre, slot)` of every
/// synapse targeting `j`, in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposeMap {
    num_post: usize,
    max_col_length: usize,
    col_length: Vec<u32>,
    source: Vec<(u32, u32)>,
    revision: u64,
}

impl TransposeMap {
    pub fn num_post(&self) -> usize {
        self.num_post
    }

    pub fn max_col_length(&self) -> usize {
        self.max_col_length
    }

    pub fn col_length(&self, post: usize) -> usize {
        self.col_length[post] as usize
    }

    pub fn column(&self, post: usize) -> &[(u32, u32)] {
        let base = post * self.max_col_length;
        &self.source[base..base + self.col_length[post] as usize]
    }

    /// Revision of the matrix this map was built from.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn is_fresh_for(&self, matrix: &RaggedMatrix) -> bool {
        self.revision == matrix.revision()
    }
}

/// Write `pre,post,weight[,extra...]`, one line per synapse sorted by
/// `(pre, post)`.
pub fn write_snapshot<W: Write>(
    out: W,
    matrix: &RaggedMatrix,
    vars: &SynapseVars,
    weight: &str,
    extra: &[&str],
) -> Result<()> {
    let mut planes = Vec::with_capacity(1 + extra.len());
    for name in std::iter::once(&weight).chain(extra) {
        let idx = vars.index_of(name).ok_or_else(|| Error::UnresolvedReference(name.to_string()))?;
        planes.push(vars.plane(idx));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["pre", "post", "weight"];
    header.extend_from_slice(extra);
    w.write_record(&header)?;
    let mut edges: Vec<(usize, usize, usize)> = matrix.edges().map(|(i, s, j)| (i, j, s)).collect();
    edges.sort_unstable();
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (i, j, s) in edges {
        record.clear();
        record.push(i.to_string());
        record.push(j.to_string());
        let idx = matrix.index(i, s);
        record.extend(planes.iter().map(|p| p[idx].to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// One synapse read back from a snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub pre: usize,
    pub post: usize,
    pub values: Vec<f64>,
}

pub fn read_snapshot<R: Read>(input: R) -> Result<(Vec<String>, Vec<SnapshotRow>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "pre" || header[1] != "post" || header[2] != "weight" {
        return Err(Error::ShapeMismatch(format!("bad snapshot header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |f: &str| Error::ShapeMismatch(format!("bad snapshot field `{f}`"));
        let pre = rec[0].parse().map_err(|_| parse_err(&rec[0]))?;
        let post = rec[1].parse().map_err(|_| parse_err(&rec[1]))?;
        let values = rec
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(f)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SnapshotRow { pre, post, values });
    }
    Ok((header, rows))
}
