//! The TT-matrix representation of an embedding table.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::index::decompose_into;
use crate::matrix::Matrix;
use crate::shape::ShapePlan;

/// Guard for [`TtTable::reconstruct_full`].
pub const RECONSTRUCT_LIMIT: u128 = 10_000_000;

static NEXT_TABLE_ID: AtomicU64 = AtomicU64::new(1);

/// Embedding table stored as `d` TT-cores.
///
/// Core `k` is a row-major array of shape `(R_{k-1}, m_k, n_k, R_k)`. For a
/// fixed row digit `i_k` the slice `G_k(:, i_k, :, :)` is an
/// `R_{k-1} x (n_k * R_k)` matrix whose rows are contiguous and separated
/// by a stride of `m_k * n_k * R_k`, so it is used in place.
#[derive(Debug)]
pub struct TtTable<T> {
    name: String,
    plan: ShapePlan,
    cores: Vec<Vec<T>>,
    id: u64,
    generation: u64,
}

impl<T: Element> Clone for TtTable<T> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            plan: self.plan.clone(),
            cores: self.cores.clone(),
            id: NEXT_TABLE_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

impl<T: Element> TtTable<T> {
    pub fn zeros(plan: ShapePlan) -> Result<Self> {
        plan.validate()?;
        let cores = (0..plan.tt_dim())
            .map(|k| vec![T::zero(); plan.core_len(k)])
            .collect();
        Ok(Self::assemble(plan, cores))
    }

    pub fn from_cores(plan: ShapePlan, cores: Vec<Vec<T>>) -> Result<Self> {
        plan.validate()?;
        if cores.len() != plan.tt_dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} cores for tt_dim {}",
                cores.len(),
                plan.tt_dim()
            )));
        }
        for (k, core) in cores.iter().enumerate() {
            if core.len() != plan.core_len(k) {
                return Err(Error::ShapeMismatch(format!(
                    "core {k} has {} elements, shape {:?} needs {}",
                    core.len(),
                    plan.core_shape(k),
                    plan.core_len(k)
                )));
            }
        }
        Ok(Self::assemble(plan, cores))
    }

    fn assemble(plan: ShapePlan, cores: Vec<Vec<T>>) -> Self {
        Self {
            name: "tt".to_string(),
            plan,
            cores,
            id: NEXT_TABLE_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn num_rows(&self) -> u64 {
        self.plan.num_rows
    }

    pub fn emb_dim(&self) -> usize {
        self.plan.emb_dim
    }

    pub fn tt_dim(&self) -> usize {
        self.plan.tt_dim()
    }

    pub fn cores(&self) -> &[Vec<T>] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &[T] {
        &self.cores[k]
    }

    /// Mutable access to one core. Invalidates outstanding forward contexts.
    pub fn core_mut(&mut self, k: usize) -> &mut [T] {
        self.generation += 1;
        &mut self.cores[k]
    }

    /// Mutable access to every core. Invalidates outstanding forward contexts.
    pub fn cores_mut(&mut self) -> &mut [Vec<T>] {
        self.generation += 1;
        &mut self.cores
    }

    pub fn parameter_count(&self) -> u64 {
        self.cores.iter().map(|c| c.len() as u64).sum()
    }

    /// Process-unique identity of this table instance.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Bumped on every mutable access to the cores.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Offset of `G_k(0, i_k, 0, 0)` and the stride between rank rows.
    #[inline]
    pub fn slice_offset(&self, k: usize, digit: usize) -> (usize, usize) {
        let [_, m, n, r] = self.plan.core_shape(k);
        (digit * n * r, m * n * r)
    }

    /// Row digits for a lookup; rejects padded rows `>= num_rows`.
    pub fn digits_into(&self, flat_index: u64, out: &mut [usize]) -> Result<()> {
        if flat_index >= self.plan.num_rows {
            return Err(Error::IndexOutOfRange {
                table: self.name.clone(),
                index: flat_index,
                limit: self.plan.num_rows,
            });
        }
        decompose_into(flat_index, &self.plan.row_factors, out).map_err(|_| {
            Error::IndexOutOfRange {
                table: self.name.clone(),
                index: flat_index,
                limit: self.plan.num_rows,
            }
        })
    }

    /// Dense `prod(m_k) x N` matrix, every entry evaluated as the scalar
    /// chain `G_1(:, i_1, j_1, :) * ... * G_d(:, i_d, j_d, :)`. Test oracle
    /// for small tables only.
    pub fn reconstruct_full(&self) -> Result<Matrix<T>> {
        let rows = self.plan.padded_rows() as u128;
        let cols = self.plan.emb_dim as u128;
        let elements = rows * cols;
        if elements > RECONSTRUCT_LIMIT {
            return Err(Error::TooLarge {
                elements,
                limit: RECONSTRUCT_LIMIT,
            });
        }
        let d = self.tt_dim();
        let (rows, cols) = (rows as usize, cols as usize);
        let mut out = Matrix::zeros(rows, cols);
        let mut row_digits = vec![0usize; d];
        let mut col_digits = vec![0usize; d];
        let max_rank = self.plan.ranks.iter().copied().max().unwrap_or(1);
        let mut vec_in = vec![T::zero(); max_rank];
        let mut vec_out = vec![T::zero(); max_rank];
        for i in 0..rows {
            decompose_into(i as u64, &self.plan.row_factors, &mut row_digits)?;
            for j in 0..cols {
                decompose_into(j as u64, &self.plan.col_factors, &mut col_digits)?;
                vec_in[0] = T::one();
                for k in 0..d {
                    let [r_in, m, n, r_out] = self.plan.core_shape(k);
                    let core = &self.cores[k];
                    for b in 0..r_out {
                        let mut acc = T::zero();
                        for a in 0..r_in {
                            let pos = ((a * m + row_digits[k]) * n + col_digits[k]) * r_out + b;
                            acc += vec_in[a] * core[pos];
                        }
                        vec_out[b] = acc;
                    }
                    std::mem::swap(&mut vec_in, &mut vec_out);
                }
                out.set(i, j, vec_in[0]);
            }
        }
        Ok(out)
    }

    /// Bitwise equality of plan and core contents.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.plan == other.plan
            && self.cores.len() == other.cores.len()
            && self.cores.iter().zip(&other.cores).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter()
                        .zip(b)
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
