use std::collections::{BTreeMap, HashMap, HashSet};

use super::freq::FreqTable;
use crate::batch::{IndexBatch, Pooling};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::table::TtTable;

/// Share of a table's rows cached by default (0.01%).
pub const DEFAULT_CAPACITY_FRACTION: f64 = 1e-4;

/// `ceil(0.01% of num_rows)`, at least one row.
pub fn default_capacity(num_rows: u64) -> usize {
    ((num_rows as f64 * DEFAULT_CAPACITY_FRACTION).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheState {
    WarmUp,
    Active,
}

/// Lookups served from the row store, in the bag layout of the source batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedBatch {
    pub slots: Vec<usize>,
    /// `num_bags + 1` offsets into `slots`.
    pub offsets: Vec<usize>,
    /// Weight times the mean-pooling factor of the original bag.
    pub coefficients: Vec<f64>,
    /// Position of each lookup in the source batch.
    pub positions: Vec<usize>,
}

impl CachedBatch {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_bags(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// A batch split into cache hits and lookups that go through the TT-cores.
///
/// Both halves keep the full bag structure, and their coefficients already
/// include mean pooling, so `cached output + tt output = full output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub cached: CachedBatch,
    /// Sum-pooled, weighted by the original coefficients.
    pub tt: IndexBatch,
    pub tt_positions: Vec<usize>,
}

/// Sparse per-slot gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotGradients<T> {
    pub rows: BTreeMap<usize, Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RefreshReport {
    pub admitted: Vec<u64>,
    pub evicted: Vec<u64>,
    pub retained: usize,
}

#[derive(Debug, Clone)]
pub struct LfuCache<T> {
    capacity: usize,
    emb_dim: usize,
    rows: Vec<T>,
    slot_rows: Vec<Option<u64>>,
    slot_of: HashMap<u64, usize>,
    freq: FreqTable,
    state: CacheState,
    decay: Option<f64>,
    hits: u64,
    lookups: u64,
}

impl<T: Element> LfuCache<T> {
    pub fn new(capacity: usize, emb_dim: usize) -> Self {
        Self {
            capacity,
            emb_dim,
            rows: vec![T::zero(); capacity * emb_dim],
            slot_rows: vec![None; capacity],
            slot_of: HashMap::with_capacity(capacity),
            freq: FreqTable::new(),
            state: CacheState::WarmUp,
            decay: None,
            hits: 0,
            lookups: 0,
        }
    }

    /// Scale counts by `factor` after every refresh; off by default.
    pub fn with_decay(mut self, factor: f64) -> Self {
        self.decay = Some(factor);
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn state(&self) -> CacheState {
        self.state
    }

    pub fn frequencies(&self) -> &FreqTable {
        &self.freq
    }

    pub fn len(&self) -> usize {
        self.slot_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_of.is_empty()
    }

    pub fn contains(&self, row: u64) -> bool {
        self.slot_of.contains_key(&row)
    }

    pub fn slot_of(&self, row: u64) -> Option<usize> {
        self.slot_of.get(&row).copied()
    }

    /// Cached rows in ascending order.
    pub fn cached_rows(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.slot_of.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn row(&self, slot: usize) -> Result<&[T]> {
        self.resident(slot)?;
        Ok(&self.rows[slot * self.emb_dim..(slot + 1) * self.emb_dim])
    }

    /// Dense value of a cached row.
    pub fn cached_value(&self, row: u64) -> Option<&[T]> {
        self.slot_of(row)
            .map(|s| &self.rows[s * self.emb_dim..(s + 1) * self.emb_dim])
    }

    fn resident(&self, slot: usize) -> Result<()> {
        match self.slot_rows.get(slot) {
            Some(Some(_)) => Ok(()),
            _ => Err(Error::SlotNotResident(slot)),
        }
    }

    /// Count every lookup and route each to the row store or the TT path.
    pub fn record_and_partition(&mut self, batch: &IndexBatch) -> Partition {
        for &idx in batch.indices() {
            self.freq.increment(idx);
        }
        let part = self.partition(batch);
        if self.state == CacheState::Active {
            self.lookups += batch.len() as u64;
            self.hits += part.cached.len() as u64;
        }
        part
    }

    /// Route lookups without touching frequencies or hit counters.
    pub fn partition(&self, batch: &IndexBatch) -> Partition {
        let active = self.state == CacheState::Active;
        let nb = batch.num_bags();
        let mut cached = CachedBatch {
            slots: Vec::new(),
            offsets: Vec::with_capacity(nb + 1),
            coefficients: Vec::new(),
            positions: Vec::new(),
        };
        let mut tt_indices = Vec::with_capacity(batch.len());
        let mut tt_offsets = Vec::with_capacity(nb + 1);
        let mut tt_weights = Vec::with_capacity(batch.len());
        let mut tt_positions = Vec::with_capacity(batch.len());
        cached.offsets.push(0);
        tt_offsets.push(0);
        for bag in 0..nb {
            for p in batch.bag_range(bag) {
                let idx = batch.indices()[p];
                let coef = batch.coefficient(bag, p);
                match self.slot_of.get(&idx).filter(|_| active) {
                    Some(&slot) => {
                        cached.slots.push(slot);
                        cached.coefficients.push(coef);
                        cached.positions.push(p);
                    }
                    None => {
                        tt_indices.push(idx);
                        tt_weights.push(coef);
                        tt_positions.push(p);
                    }
                }
            }
            cached.offsets.push(cached.slots.len());
            tt_offsets.push(tt_indices.len());
        }
        let tt = IndexBatch::new(tt_indices, tt_offsets, Some(tt_weights), Pooling::Sum)
            .expect("partition preserves batch structure");
        Partition {
            cached,
            tt,
            tt_positions,
        }
    }

    /// Cache the most frequent rows seen so far, initialized from `table`.
    pub fn warmup_finalize(&mut self, table: &TtTable<T>) -> Result<()> {
        if self.state != CacheState::WarmUp {
            return Err(Error::CacheState("warm-up already finalized".into()));
        }
        self.check_table(table)?;
        self.state = CacheState::Active;
        self.install_top(table)?;
        Ok(())
    }

    /// Recompute the hot set. Retained rows keep their learned values,
    /// admitted rows start from the TT-cores, evicted values are dropped.
    pub fn refresh(&mut self, table: &TtTable<T>) -> Result<RefreshReport> {
        if self.state != CacheState::Active {
            return Err(Error::CacheState("refresh before warm-up finalized".into()));
        }
        self.check_table(table)?;
        let report = self.install_top(table)?;
        if let Some(f) = self.decay {
            self.freq.decay(f);
        }
        Ok(report)
    }

    fn check_table(&self, table: &TtTable<T>) -> Result<()> {
        if table.emb_dim() != self.emb_dim {
            return Err(Error::ShapeMismatch(format!(
                "cache rows have {} columns, table has {}",
                self.emb_dim,
                table.emb_dim()
            )));
        }
        Ok(())
    }

    fn install_top(&mut self, table: &TtTable<T>) -> Result<RefreshReport> {
        let top: Vec<u64> = self
            .freq
            .top_k(self.capacity)
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let keep: HashSet<u64> = top.iter().copied().collect();
        let mut report = RefreshReport::default();
        for slot in 0..self.capacity {
            if let Some(row) = self.slot_rows[slot] {
                if keep.contains(&row) {
                    report.retained += 1;
                } else {
                    self.slot_rows[slot] = None;
                    self.slot_of.remove(&row);
                    report.evicted.push(row);
                }
            }
        }
        let free_slots: Vec<usize> = (0..self.capacity)
            .filter(|&s| self.slot_rows[s].is_none())
            .collect();
        let mut free = free_slots.into_iter();
        for row in top {
            if self.slot_of.contains_key(&row) {
                continue;
            }
            let slot = free.next().expect("top-k never exceeds capacity");
            let value = table.lookup_row(row)?;
            self.rows[slot * self.emb_dim..(slot + 1) * self.emb_dim].copy_from_slice(&value);
            self.slot_rows[slot] = Some(row);
            self.slot_of.insert(row, slot);
            report.admitted.push(row);
        }
        Ok(report)
    }

    /// Pooled contribution of the cached lookups, `num_bags x emb_dim`.
    pub fn forward_cached(&self, cached: &CachedBatch) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(cached.num_bags(), self.emb_dim);
        for bag in 0..cached.num_bags() {
            for i in cached.offsets[bag]..cached.offsets[bag + 1] {
                let row = self.row(cached.slots[i])?;
                let coef = T::from_f64(cached.coefficients[i]);
                for (o, &v) in out.row_mut(bag).iter_mut().zip(row) {
                    *o += coef * v;
                }
            }
        }
        Ok(out)
    }

    /// Per-slot gradients for the cached lookups, summed over bags.
    pub fn slot_gradients(
        &self,
        cached: &CachedBatch,
        grad_output: &Matrix<T>,
    ) -> Result<SlotGradients<T>> {
        if grad_output.rows() != cached.num_bags() || grad_output.cols() != self.emb_dim {
            return Err(Error::ShapeMismatch(format!(
                "grad_output is {}x{}, expected {}x{}",
                grad_output.rows(),
                grad_output.cols(),
                cached.num_bags(),
                self.emb_dim
            )));
        }
        let mut grads = SlotGradients::default();
        for bag in 0..cached.num_bags() {
            for i in cached.offsets[bag]..cached.offsets[bag + 1] {
                let coef = T::from_f64(cached.coefficients[i]);
                let acc = grads
                    .rows
                    .entry(cached.slots[i])
                    .or_insert_with(|| vec![T::zero(); self.emb_dim]);
                for (a, &g) in acc.iter_mut().zip(grad_output.row(bag)) {
                    *a += coef * g;
                }
            }
        }
        Ok(grads)
    }

    /// `row <- row - lr * grad` for every touched slot.
    pub fn cached_sgd_update(&mut self, grads: &SlotGradients<T>, lr: T) -> Result<()> {
        if self.state != CacheState::Active {
            return Err(Error::CacheState("update before warm-up finalized".into()));
        }
        for (&slot, g) in &grads.rows {
            self.resident(slot)?;
            if g.len() != self.emb_dim {
                return Err(Error::ShapeMismatch(format!(
                    "slot gradient has {} entries, expected {}",
                    g.len(),
                    self.emb_dim
                )));
            }
        }
        for (&slot, g) in &grads.rows {
            let row = &mut self.rows[slot * self.emb_dim..(slot + 1) * self.emb_dim];
            for (w, &gv) in row.iter_mut().zip(g) {
                *w -= lr * gv;
            }
        }
        Ok(())
    }

    /// Fraction of lookups since activation that hit the cache.
    pub fn hit_rate(&self) -> Result<f64> {
        if self.lookups == 0 {
            return Err(Error::CacheState(
                "no lookups recorded since activation".into(),
            ));
        }
        Ok(self.hits as f64 / self.lookups as f64)
    }

    pub fn hit_counts(&self) -> (u64, u64) {
        (self.hits, self.lookups)
    }

    /// Rebuild from persisted parts (checkpoint loading).
    pub fn restore(capacity: usize, emb_dim: usize, cached_rows: &[(u64, Vec<T>)]) -> Result<Self> {
        if cached_rows.len() > capacity {
            return Err(Error::CacheState(format!(
                "{} rows exceed capacity {capacity}",
                cached_rows.len()
            )));
        }
        let mut cache = Self::new(capacity, emb_dim);
        cache.state = CacheState::Active;
        for (slot, (row, value)) in cached_rows.iter().enumerate() {
            if value.len() != emb_dim {
                return Err(Error::ShapeMismatch("cached row width".into()));
            }
            cache.rows[slot * emb_dim..(slot + 1) * emb_dim].copy_from_slice(value);
            cache.slot_rows[slot] = Some(*row);
            cache.slot_of.insert(*row, slot);
        }
        Ok(cache)
    }

    /// `(row, value)` for each occupied slot, in slot order.
    pub fn snapshot(&self) -> Vec<(u64, Vec<T>)> {
        self.slot_rows
            .iter()
            .enumerate()
            .filter_map(|(s, r)| {
                r.map(|row| {
                    (
                        row,
                        self.rows[s * self.emb_dim..(s + 1) * self.emb_dim].to_vec(),
                    )
                })
            })
            .collect()
    }
}

/// `|prev xor cur| / (2k)` for two top-`k` row sets.
pub fn hot_set_drift(prev: &[u64], cur: &[u64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let a: HashSet<u64> = prev.iter().copied().collect();
    let b: HashSet<u64> = cur.iter().copied().collect();
    a.symmetric_difference(&b).count() as f64 / (2 * k) as f64
}
