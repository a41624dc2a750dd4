use std::ops::Range;

use super::{
    chunk_digits, tile_chain, ChainDims, ChainWorkspace, ChunkRows, CoreGradients,
    EmbeddingBagConfig, ForwardContext, CHAIN_TILE,
};
use crate::batch::IndexBatch;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::gemm::{gemm_nt, gemm_tn_acc};
use crate::matrix::Matrix;
use crate::table::TtTable;

/// Gradients of the loss with respect to every core, given `grad_output`
/// (`num_bags x emb_dim`) for the pooled output of [`super::forward_bags`].
///
/// Within a micro-batch, the upstream gradients of lookups that share a row
/// are summed first (`g = sum_p coef_p * grad_output[bag(p)]`, ascending
/// position order), then each distinct row pushes `g` back through its
/// chain once: the slice of core `k` receives `w^(k-1)^T * dL/dw^(k)` and
/// `dL/dw^(k-1) = dL/dw^(k) * G_k^T`. Partial products come from the
/// context when it saved them, otherwise they are recomputed per
/// micro-batch.
pub fn backward_bags<T: Element>(
    table: &TtTable<T>,
    batch: &IndexBatch,
    ctx: &ForwardContext<T>,
    grad_output: &Matrix<T>,
    cfg: &EmbeddingBagConfig,
) -> Result<CoreGradients<T>> {
    cfg.check()?;
    ctx.check(table, batch.digest(), batch.len())?;
    let dims = ChainDims::new(table.plan());
    if grad_output.rows() != batch.num_bags() || grad_output.cols() != dims.emb_dim {
        return Err(Error::ShapeMismatch(format!(
            "grad_output is {}x{}, expected {}x{}",
            grad_output.rows(),
            grad_output.cols(),
            batch.num_bags(),
            dims.emb_dim
        )));
    }
    let n = batch.len();
    // With saved intermediates the forward micro-batches are replayed so
    // their distinct rows line up with the saved slots.
    let chunks: Vec<(Range<usize>, Option<usize>)> = match &ctx.saved {
        Some(saved) => saved
            .chunks
            .iter()
            .map(|(r, slot)| (r.clone(), Some(*slot)))
            .collect(),
        None => {
            let size = ctx.micro_batch.min(n.div_ceil(cfg.threads.max(1))).max(1);
            (0..n)
                .step_by(size)
                .map(|s| (s..(s + size).min(n), None))
                .collect()
        }
    };
    let per = chunks.len().div_ceil(cfg.threads.max(1)).max(1);
    let groups: Vec<&[(Range<usize>, Option<usize>)]> = chunks.chunks(per).collect();
    if groups.len() <= 1 {
        let mut grads = CoreGradients::zeros(table.plan());
        accumulate_chunks(table, &dims, batch, ctx, grad_output, &chunks, &mut grads)?;
        return Ok(grads);
    }
    let partials = std::thread::scope(|scope| -> Result<Vec<CoreGradients<T>>> {
        let handles: Vec<_> = groups
            .into_iter()
            .map(|group| {
                let dims = &dims;
                scope.spawn(move || -> Result<CoreGradients<T>> {
                    let mut grads = CoreGradients::zeros(table.plan());
                    accumulate_chunks(table, dims, batch, ctx, grad_output, group, &mut grads)?;
                    Ok(grads)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("backward worker panicked"))
            .collect()
    })?;
    let mut iter = partials.into_iter();
    let mut total = iter
        .next()
        .unwrap_or_else(|| CoreGradients::zeros(table.plan()));
    for part in iter {
        total.add_assign(&part)?;
    }
    Ok(total)
}

/// Backward for a run of micro-batches. A chunk with a saved slot reads its
/// partial products from the context, otherwise they are recomputed.
fn accumulate_chunks<T: Element>(
    table: &TtTable<T>,
    dims: &ChainDims,
    batch: &IndexBatch,
    ctx: &ForwardContext<T>,
    grad_output: &Matrix<T>,
    chunks: &[(Range<usize>, Option<usize>)],
    grads: &mut CoreGradients<T>,
) -> Result<()> {
    let cap = chunks.iter().map(|(r, _)| r.len()).max().unwrap_or(0);
    if cap == 0 {
        return Ok(());
    }
    let plan = table.plan();
    let d = dims.d;
    let n_dim = dims.emb_dim;
    let mut ws = ChainWorkspace::new(dims, cap);
    let mut rows = ChunkRows::with_capacity(cap);
    let max_w = dims.widths.iter().copied().max().unwrap_or(n_dim);
    let mut row_grads = vec![T::zero(); cap * n_dim];
    let tile_len = CHAIN_TILE.min(cap);
    let mut dcur = vec![T::zero(); tile_len * max_w];
    let mut dprev = vec![T::zero(); tile_len * max_w];
    let offsets = batch.offsets();

    for (range, slot) in chunks {
        let (start, end) = (range.start, range.end);
        // first bag whose range reaches past start
        let mut bag = offsets.partition_point(|&o| o <= start).saturating_sub(1);
        rows.fill(&batch.indices()[start..end], dims.inner_rows);
        let count = rows.unique.len();
        chunk_digits(table, dims, &rows.unique, &mut ws)?;
        let saved = match (slot, &ctx.saved) {
            (Some(slot), Some(saved)) => Some((*slot, saved)),
            _ => None,
        };

        row_grads[..count * n_dim].fill(T::zero());
        for (&s, p) in rows.slots.iter().zip(start..end) {
            while offsets[bag + 1] <= p {
                bag += 1;
            }
            let coef = T::from_f64(batch.coefficient(bag, p));
            for (g, &go) in row_grads[s * n_dim..(s + 1) * n_dim]
                .iter_mut()
                .zip(grad_output.row(bag))
            {
                *g += coef * go;
            }
        }

        for tile in (0..count).step_by(CHAIN_TILE) {
            let tile = tile..(tile + CHAIN_TILE).min(count);
            if saved.is_none() {
                tile_chain(table, dims, tile.clone(), &mut ws, false);
            }
            for (t, u) in tile.clone().enumerate() {
                dcur[t * max_w..t * max_w + n_dim]
                    .copy_from_slice(&row_grads[u * n_dim..(u + 1) * n_dim]);
            }
            for k in (1..d).rev() {
                let rows_in = dims.partial_cols[k - 1];
                let r_in = plan.ranks[k];
                let cols_out = plan.col_factors[k] * plan.ranks[k + 1];
                let w_in = dims.widths[k - 1];
                let core = table.core(k);
                let gcore = grads.core_mut(k);
                for (t, u) in tile.clone().enumerate() {
                    let (off, stride) = table.slice_offset(k, ws.digits[u * d + k]);
                    let w_prev = match saved {
                        Some((slot, saved)) => {
                            &saved.levels[k - 1][(slot + u) * w_in..(slot + u + 1) * w_in]
                        }
                        None => &ws.levels[k - 1][t * w_in..(t + 1) * w_in],
                    };
                    let g = &dcur[t * max_w..t * max_w + rows_in * cols_out];
                    gemm_tn_acc(
                        r_in,
                        cols_out,
                        rows_in,
                        w_prev,
                        r_in,
                        g,
                        cols_out,
                        &mut gcore[off..],
                        stride,
                    );
                    gemm_nt(
                        rows_in,
                        r_in,
                        cols_out,
                        g,
                        cols_out,
                        &core[off..],
                        stride,
                        &mut dprev[t * max_w..t * max_w + w_in],
                        r_in,
                    );
                }
                std::mem::swap(&mut dcur, &mut dprev);
            }

            let w0 = dims.widths[0];
            let g0 = grads.core_mut(0);
            for (t, u) in tile.enumerate() {
                let (off, _) = table.slice_offset(0, ws.digits[u * d]);
                for (g, &v) in g0[off..off + w0]
                    .iter_mut()
                    .zip(&dcur[t * max_w..t * max_w + w0])
                {
                    *g += v;
                }
            }
        }
    }
    Ok(())
}
