//! Embedding-bag lookup and gradient accumulation on a [`TtTable`].
//!
//! A row is the left-to-right chain `G_1(i_1) * G_2(i_2) * ... * G_d(i_d)`.
//! After `k` cores the partial product `w^(k)` is a
//! `(n_1 * .. * n_k) x R_k` matrix; multiplying by the next slice
//! (`R_k x n_{k+1} R_{k+1}`) and reading the result row-major as
//! `(n_1 * .. * n_{k+1}) x R_{k+1}` gives `w^(k+1)`. Lookups are processed
//! in micro-batches; within a micro-batch every chain step is one batched
//! GEMM over the distinct rows, so a row looked up several times in one
//! micro-batch is reconstructed once and its gradient pushed back once.

mod backward;
mod forward;

pub use backward::backward_bags;
pub use forward::forward_bags;

use std::collections::HashMap;
use std::ops::Range;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::gemm::gemm_nn;
use crate::shape::ShapePlan;
use crate::table::TtTable;

pub const DEFAULT_MICRO_BATCH: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingBagConfig {
    /// Lookups per micro-batch.
    pub micro_batch: usize,
    /// Worker threads; `1` runs on the calling thread and is bit-deterministic.
    pub threads: usize,
}

impl Default for EmbeddingBagConfig {
    fn default() -> Self {
        Self {
            micro_batch: DEFAULT_MICRO_BATCH,
            threads: 1,
        }
    }
}

impl EmbeddingBagConfig {
    pub fn with_micro_batch(micro_batch: usize) -> Self {
        Self {
            micro_batch,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.micro_batch == 0 {
            return Err(Error::InvalidBatch("micro-batch size must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidBatch("thread count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-core gradient buffers, shaped like the table cores.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreGradients<T> {
    cores: Vec<Vec<T>>,
}

impl<T: Element> CoreGradients<T> {
    pub fn zeros(plan: &ShapePlan) -> Self {
        Self {
            cores: (0..plan.tt_dim())
                .map(|k| vec![T::zero(); plan.core_len(k)])
                .collect(),
        }
    }

    pub fn cores(&self) -> &[Vec<T>] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &[T] {
        &self.cores[k]
    }

    pub(crate) fn core_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.cores[k]
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.cores.len() != other.cores.len()
            || self
                .cores
                .iter()
                .zip(&other.cores)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ShapeMismatch("core gradient shapes differ".into()));
        }
        for (a, b) in self.cores.iter_mut().zip(&other.cores) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.cores.iter_mut().flatten().for_each(|x| *x *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.cores.iter().flatten().all(|x| x.is_zero())
    }
}

/// State carried from [`forward_bags`] to [`backward_bags`].
#[derive(Debug, Clone)]
pub struct ForwardContext<T> {
    pub(crate) table_id: u64,
    pub(crate) generation: u64,
    pub(crate) batch_digest: u64,
    pub(crate) num_lookups: usize,
    pub(crate) micro_batch: usize,
    pub(crate) saved: Option<Saved<T>>,
}

/// Partial products kept by the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Saved<T> {
    /// Level `k` holds `w^(k+1)` for the distinct rows of every forward
    /// micro-batch, in micro-batch order.
    pub levels: Vec<Vec<T>>,
    /// Forward micro-batches: lookup positions and the slot of their first
    /// distinct row in `levels`.
    pub chunks: Vec<(Range<usize>, usize)>,
}

impl<T: Element> ForwardContext<T> {
    pub fn has_intermediates(&self) -> bool {
        self.saved.is_some()
    }

    pub fn micro_batch(&self) -> usize {
        self.micro_batch
    }

    /// Saved partial products `w^(level+1)`, one row per distinct row of
    /// each micro-batch.
    pub fn intermediate(&self, level: usize) -> Option<&[T]> {
        self.saved
            .as_ref()
            .and_then(|s| s.levels.get(level))
            .map(|v| v.as_slice())
    }

    /// Drop saved intermediates so backward recomputes them.
    pub fn discard_intermediates(&mut self) {
        self.saved = None;
    }

    pub(crate) fn check(
        &self,
        table: &TtTable<T>,
        batch_digest: u64,
        num_lookups: usize,
    ) -> Result<()> {
        if self.table_id != table.id() {
            return Err(Error::StaleContext(
                "context belongs to a different table".into(),
            ));
        }
        if self.generation != table.generation() {
            return Err(Error::StaleContext(format!(
                "table was modified after forward (generation {} -> {})",
                self.generation,
                table.generation()
            )));
        }
        if self.batch_digest != batch_digest || self.num_lookups != num_lookups {
            return Err(Error::StaleContext(
                "context was produced for a different batch".into(),
            ));
        }
        Ok(())
    }
}

/// Widths of the per-lookup partial products.
#[derive(Debug, Clone)]
pub(crate) struct ChainDims {
    pub d: usize,
    /// `prod_{j<=k} n_j * R_{k+1}`, the size of `w^(k+1)`.
    pub widths: Vec<usize>,
    /// `prod_{j<=k} n_j`
    pub partial_cols: Vec<usize>,
    pub emb_dim: usize,
    /// `m_2 * .. * m_d`
    pub inner_rows: u64,
}

impl ChainDims {
    pub fn new(plan: &ShapePlan) -> Self {
        let d = plan.tt_dim();
        let partial_cols: Vec<usize> = (0..d).map(|k| plan.partial_cols(k)).collect();
        let widths = (0..d)
            .map(|k| partial_cols[k] * plan.ranks[k + 1])
            .collect();
        Self {
            d,
            widths,
            partial_cols,
            emb_dim: plan.emb_dim,
            inner_rows: plan.row_factors[1..].iter().map(|&m| m as u64).product(),
        }
    }
}

/// Reusable buffers for one micro-batch.
pub(crate) struct ChainWorkspace<T> {
    pub digits: Vec<usize>,
    /// `levels[k]`: `w^(k+1)` for the rows of the current tile, `k < d - 1`.
    pub levels: Vec<Vec<T>>,
    /// Full rows, `micro_batch x emb_dim`.
    pub rows: Vec<T>,
}

impl<T: Element> ChainWorkspace<T> {
    pub fn new(dims: &ChainDims, micro_batch: usize) -> Self {
        let tile = CHAIN_TILE.min(micro_batch);
        Self {
            digits: vec![0; micro_batch * dims.d],
            levels: (0..dims.d - 1)
                .map(|k| vec![T::zero(); tile * dims.widths[k]])
                .collect(),
            rows: vec![T::zero(); micro_batch * dims.emb_dim],
        }
    }
}

/// Distinct indices of one micro-batch. They are ordered by their digits
/// `(i_2, .., i_d, i_1)` so consecutive rows tend to share slices of the
/// inner cores.
#[derive(Default)]
pub(crate) struct ChunkRows {
    seen: HashMap<u64, usize>,
    order: Vec<(u64, usize)>,
    remap: Vec<usize>,
    pub unique: Vec<u64>,
    /// Chunk-local position of each distinct row's first lookup.
    pub first: Vec<usize>,
    /// `slots[l]`: index into `unique` of the chunk's `l`-th lookup.
    pub slots: Vec<usize>,
}

impl ChunkRows {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            seen: HashMap::with_capacity(n),
            order: Vec::with_capacity(n),
            remap: Vec::with_capacity(n),
            unique: Vec::with_capacity(n),
            first: Vec::with_capacity(n),
            slots: Vec::with_capacity(n),
        }
    }

    /// `inner` is the product of all row factors but the first.
    pub fn fill(&mut self, indices: &[u64], inner: u64) {
        self.seen.clear();
        self.order.clear();
        self.slots.clear();
        for (l, &i) in indices.iter().enumerate() {
            let next = self.order.len();
            let slot = *self.seen.entry(i).or_insert(next);
            if slot == next {
                self.order.push((i, l));
            }
            self.slots.push(slot);
        }
        let key = |i: u64| (i % inner, i / inner);
        let mut by_key: Vec<usize> = (0..self.order.len()).collect();
        by_key.sort_unstable_by_key(|&u| key(self.order[u].0));
        self.remap.clear();
        self.remap.resize(by_key.len(), 0);
        self.unique.clear();
        self.first.clear();
        for (sorted, &u) in by_key.iter().enumerate() {
            self.remap[u] = sorted;
            self.unique.push(self.order[u].0);
            self.first.push(self.order[u].1);
        }
        for s in &mut self.slots {
            *s = self.remap[*s];
        }
    }
}

/// Fill `ws.digits` for a chunk of lookups.
pub(crate) fn chunk_digits<T: Element>(
    table: &TtTable<T>,
    dims: &ChainDims,
    indices: &[u64],
    ws: &mut ChainWorkspace<T>,
) -> Result<()> {
    for (l, &idx) in indices.iter().enumerate() {
        table.digits_into(idx, &mut ws.digits[l * dims.d..(l + 1) * dims.d])?;
    }
    Ok(())
}

/// Rows pushed through all chain levels together, small enough that their
/// partial products stay in cache between levels.
pub(crate) const CHAIN_TILE: usize = 32;

/// Compute `w^(1) .. w^(d-1)` into `ws.levels` (tile-local rows) for the
/// rows `tile` of the chunk, whose digits are already in `ws.digits`; with
/// `full_rows`, also their final rows into `ws.rows`.
pub(crate) fn tile_chain<T: Element>(
    table: &TtTable<T>,
    dims: &ChainDims,
    tile: Range<usize>,
    ws: &mut ChainWorkspace<T>,
    full_rows: bool,
) {
    let plan = table.plan();
    let d = dims.d;
    // level 0: the first core's slice, 1 x (n_1 R_1), contiguous because R_0 = 1
    let w0 = dims.widths[0];
    let core0 = table.core(0);
    for (t, l) in tile.clone().enumerate() {
        let (off, _) = table.slice_offset(0, ws.digits[l * d]);
        ws.levels[0][t * w0..(t + 1) * w0].copy_from_slice(&core0[off..off + w0]);
    }
    let last = if full_rows { d } else { d - 1 };
    for k in 1..last {
        let rows_in = dims.partial_cols[k - 1];
        let r_in = plan.ranks[k];
        let cols_out = plan.col_factors[k] * plan.ranks[k + 1];
        let w_in = dims.widths[k - 1];
        let w_out = dims.widths[k];
        let core = table.core(k);
        let (before, after) = ws.levels.split_at_mut(k);
        let src = &before[k - 1];
        for (t, l) in tile.clone().enumerate() {
            let (off, stride) = table.slice_offset(k, ws.digits[l * d + k]);
            // the last level lands in the chunk-wide row buffer
            let dst = if k == d - 1 {
                &mut ws.rows[l * w_out..(l + 1) * w_out]
            } else {
                &mut after[0][t * w_out..(t + 1) * w_out]
            };
            gemm_nn(
                rows_in,
                cols_out,
                r_in,
                &src[t * w_in..(t + 1) * w_in],
                r_in,
                &core[off..],
                stride,
                dst,
                cols_out,
                false,
            );
        }
    }
}

impl<T: Element> TtTable<T> {
    /// Row `flat_index` of the represented matrix, length `emb_dim`.
    pub fn lookup_row(&self, flat_index: u64) -> Result<Vec<T>> {
        let dims = ChainDims::new(self.plan());
        let mut ws = ChainWorkspace::new(&dims, 1);
        chunk_digits(self, &dims, &[flat_index], &mut ws)?;
        tile_chain(self, &dims, 0..1, &mut ws, true);
        Ok(ws.rows)
    }
}

/// `core <- core - lr * grad` for every core.
pub fn sgd_step<T: Element>(table: &mut TtTable<T>, grads: &CoreGradients<T>, lr: T) -> Result<()> {
    let congruent = grads.cores.len() == table.tt_dim()
        && grads
            .cores
            .iter()
            .zip(table.cores())
            .all(|(g, c)| g.len() == c.len());
    if !congruent {
        return Err(Error::ShapeMismatch(
            "gradients do not match table cores".into(),
        ));
    }
    for (core, grad) in table.cores_mut().iter_mut().zip(&grads.cores) {
        for (w, &g) in core.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
    Ok(())
}
