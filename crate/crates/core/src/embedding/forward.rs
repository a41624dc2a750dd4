use std::ops::Range;

use super::{
    chunk_digits, tile_chain, ChainDims, ChainWorkspace, ChunkRows, EmbeddingBagConfig,
    ForwardContext, Saved, CHAIN_TILE,
};
use crate::batch::IndexBatch;
use crate::element::Element;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::table::TtTable;

/// Pooled embedding-bag output, `num_bags x emb_dim`.
///
/// `out[b] = sum_{p in bag b} alpha_p * w_{indices[p]}`, divided by the bag
/// size under mean pooling (an empty bag gives a zero row). With
/// `save_intermediates` the partial products are kept in the returned
/// context so the backward pass does not recompute them.
pub fn forward_bags<T: Element>(
    table: &TtTable<T>,
    batch: &IndexBatch,
    cfg: &EmbeddingBagConfig,
    save_intermediates: bool,
) -> Result<(Matrix<T>, ForwardContext<T>)> {
    cfg.check()?;
    batch.validate_rows(table.num_rows())?;
    let dims = ChainDims::new(table.plan());
    let n = batch.len();
    let mut out = Matrix::zeros(batch.num_bags(), dims.emb_dim);

    let groups = split_bags(batch, cfg.threads);
    let mut tasks = Vec::with_capacity(groups.len());
    {
        let mut out_rest = out.as_mut_slice();
        for bags in groups {
            let positions = batch.offsets()[bags.start]..batch.offsets()[bags.end];
            let (head, tail) =
                std::mem::take(&mut out_rest).split_at_mut(bags.len() * dims.emb_dim);
            out_rest = tail;
            tasks.push(GroupTask {
                bags,
                positions,
                out: head,
            });
        }
    }

    let parts: Vec<Option<Saved<T>>> = if tasks.len() == 1 {
        let task = tasks.pop().expect("one task");
        vec![run_group(
            table,
            &dims,
            batch,
            cfg.micro_batch,
            save_intermediates,
            task,
        )?]
    } else {
        std::thread::scope(|scope| -> Result<Vec<_>> {
            let handles: Vec<_> = tasks
                .into_iter()
                .map(|task| {
                    let dims = &dims;
                    scope.spawn(move || {
                        run_group(
                            table,
                            dims,
                            batch,
                            cfg.micro_batch,
                            save_intermediates,
                            task,
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("forward worker panicked"))
                .collect()
        })?
    };

    let saved = save_intermediates.then(|| {
        let mut all = Saved {
            levels: vec![Vec::new(); dims.d - 1],
            chunks: Vec::new(),
        };
        for part in parts.into_iter().flatten() {
            let base = all.levels[0].len() / dims.widths[0];
            all.chunks
                .extend(part.chunks.into_iter().map(|(r, slot)| (r, base + slot)));
            for (dst, src) in all.levels.iter_mut().zip(part.levels) {
                dst.extend_from_slice(&src);
            }
        }
        all
    });

    let ctx = ForwardContext {
        table_id: table.id(),
        generation: table.generation(),
        batch_digest: batch.digest(),
        num_lookups: n,
        micro_batch: cfg.micro_batch,
        saved,
    };
    Ok((out, ctx))
}

struct GroupTask<'a, T> {
    bags: Range<usize>,
    positions: Range<usize>,
    out: &'a mut [T],
}

/// Contiguous bag ranges with roughly equal lookup counts, at most `workers` of them.
pub(crate) fn split_bags(batch: &IndexBatch, workers: usize) -> Vec<Range<usize>> {
    let nb = batch.num_bags();
    if workers <= 1 || nb <= 1 || batch.is_empty() {
        return vec![0..nb];
    }
    let target = batch.len().div_ceil(workers);
    let offsets = batch.offsets();
    let mut groups = Vec::with_capacity(workers);
    let mut start = 0;
    for b in 0..nb {
        if offsets[b + 1] - offsets[start] >= target && groups.len() + 1 < workers {
            groups.push(start..b + 1);
            start = b + 1;
        }
    }
    if start < nb || groups.is_empty() {
        groups.push(start..nb);
    }
    groups
}

fn run_group<T: Element>(
    table: &TtTable<T>,
    dims: &ChainDims,
    batch: &IndexBatch,
    micro_batch: usize,
    save: bool,
    task: GroupTask<'_, T>,
) -> Result<Option<Saved<T>>> {
    let n_dim = dims.emb_dim;
    let span = task.positions.len();
    let mut saved = save.then(|| Saved {
        levels: vec![Vec::new(); dims.d - 1],
        chunks: Vec::new(),
    });
    if span == 0 {
        return Ok(saved);
    }
    let cap = micro_batch.min(span);
    let mut ws = ChainWorkspace::new(dims, cap);
    let mut rows = ChunkRows::with_capacity(cap);
    let offsets = batch.offsets();
    let mut bag = task.bags.start;
    let mut start = task.positions.start;
    while start < task.positions.end {
        let end = (start + cap).min(task.positions.end);
        rows.fill(&batch.indices()[start..end], dims.inner_rows);
        let count = rows.unique.len();
        chunk_digits(table, dims, &rows.unique, &mut ws)?;
        if let Some(saved) = saved.as_mut() {
            saved
                .chunks
                .push((start..end, saved.levels[0].len() / dims.widths[0]));
        }
        for tile in (0..count).step_by(CHAIN_TILE) {
            let tile = tile..(tile + CHAIN_TILE).min(count);
            tile_chain(table, dims, tile.clone(), &mut ws, true);
            if let Some(saved) = saved.as_mut() {
                for (k, level) in saved.levels.iter_mut().enumerate() {
                    level.extend_from_slice(&ws.levels[k][..tile.len() * dims.widths[k]]);
                }
            }
        }
        for (&s, p) in rows.slots.iter().zip(start..end) {
            while offsets[bag + 1] <= p {
                bag += 1;
            }
            let coef = T::from_f64(batch.coefficient(bag, p));
            let local_bag = bag - task.bags.start;
            let dst = &mut task.out[local_bag * n_dim..(local_bag + 1) * n_dim];
            for (o, &v) in dst.iter_mut().zip(&ws.rows[s * n_dim..(s + 1) * n_dim]) {
                *o += coef * v;
            }
        }
        start = end;
    }
    Ok(saved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::Pooling;

    #[test]
    fn bag_split_covers_everything() {
        let bags: Vec<Vec<u64>> = (0..10).map(|b| vec![0; b % 4]).collect();
        let batch = IndexBatch::from_bags(&bags, Pooling::Sum);
        for workers in 1..6 {
            let groups = split_bags(&batch, workers);
            assert!(groups.len() <= workers);
            assert_eq!(groups.first().unwrap().start, 0);
            assert_eq!(groups.last().unwrap().end, 10);
            for w in groups.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
        }
    }

    #[test]
    fn chunk_rows_order_by_inner_digits() {
        let mut rows = ChunkRows::default();
        rows.fill(&[7, 3, 7, 9, 3], u64::MAX);
        assert_eq!(rows.unique, vec![3, 7, 9]);
        assert_eq!(rows.first, vec![1, 0, 3]);
        assert_eq!(rows.slots, vec![1, 0, 1, 2, 0]);
        // digits (i_1, i_2) with m_2 = 4: ordered by i_2, then i_1
        rows.fill(&[4, 1, 8, 0], 4);
        assert_eq!(rows.unique, vec![0, 4, 8, 1]);
        assert_eq!(rows.slots, vec![1, 3, 2, 0]);
        rows.fill(&[5], 4);
        assert_eq!(
            (rows.unique.as_slice(), rows.slots.as_slice()),
            (&[5u64][..], &[0usize][..])
        );
    }
}
