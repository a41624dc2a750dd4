//! Test-side oracles, written without going through the library's chain code.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ttrec_core::{Element, IndexBatch, Matrix, Pooling, ShapePlan, TtTable};

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random plan with `d` cores and uniform internal rank, padded rows included.
pub fn random_plan(rng: &mut ChaCha8Rng, d: usize, rank: usize, max_factor: usize) -> ShapePlan {
    let row_factors: Vec<usize> = (0..d).map(|_| rng.random_range(2..=max_factor)).collect();
    let col_factors: Vec<usize> = (0..d).map(|_| rng.random_range(1..=3)).collect();
    let padded: u64 = row_factors.iter().map(|&m| m as u64).product();
    let num_rows = rng.random_range(padded / 2 + 1..=padded);
    let mut ranks = vec![rank; d + 1];
    ranks[0] = 1;
    ranks[d] = 1;
    ShapePlan {
        num_rows,
        emb_dim: col_factors.iter().product(),
        row_factors,
        col_factors,
        ranks,
    }
}

pub fn random_table<T: Element>(rng: &mut ChaCha8Rng, plan: ShapePlan) -> TtTable<T> {
    let cores = (0..plan.tt_dim())
        .map(|k| {
            (0..plan.core_len(k))
                .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    TtTable::from_cores(plan, cores).unwrap()
}

/// Mixed-radix digits, most significant first.
fn digits(mut x: u64, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for k in (0..radices.len()).rev() {
        out[k] = (x % radices[k] as u64) as usize;
        x /= radices[k] as u64;
    }
    out
}

/// Row `i` evaluated entry by entry as a product of `R x R` core slices.
pub fn scalar_row<T: Element>(table: &TtTable<T>, i: u64) -> Vec<f64> {
    let plan = table.plan();
    let d = plan.tt_dim();
    let idig = digits(i, &plan.row_factors);
    (0..plan.emb_dim)
        .map(|j| {
            let jdig = digits(j as u64, &plan.col_factors);
            let mut v = vec![1.0f64];
            for k in 0..d {
                let (m, n, r_out) = (plan.row_factors[k], plan.col_factors[k], plan.ranks[k + 1]);
                let core = table.core(k);
                let mut next = vec![0.0; r_out];
                for (a, &va) in v.iter().enumerate() {
                    for (b, nb) in next.iter_mut().enumerate() {
                        let at = ((a * m + idig[k]) * n + jdig[k]) * r_out + b;
                        *nb += va * core[at].as_f64();
                    }
                }
                v = next;
            }
            v[0]
        })
        .collect()
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    num_rows: u64,
    num_bags: usize,
    max_bag: usize,
    weighted: bool,
    pooling: Pooling,
) -> IndexBatch {
    let mut offsets = vec![0];
    let mut indices = Vec::new();
    for _ in 0..num_bags {
        let len = rng.random_range(0..=max_bag);
        indices.extend((0..len).map(|_| rng.random_range(0..num_rows)));
        offsets.push(indices.len());
    }
    let weights = weighted.then(|| {
        (0..indices.len())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect()
    });
    IndexBatch::new(indices, offsets, weights, pooling).unwrap()
}

/// Dense embedding-bag semantics over explicit rows.
pub fn dense_bags(rows: &Matrix<f64>, batch: &IndexBatch) -> Matrix<f64> {
    let n = rows.cols();
    let mut out = Matrix::zeros(batch.num_bags(), n);
    for b in 0..batch.num_bags() {
        let range = batch.bag_range(b);
        let len = range.len();
        for p in range {
            let w = batch.weights().map_or(1.0, |w| w[p]);
            let w = match batch.pooling() {
                Pooling::Sum => w,
                Pooling::Mean => w / len as f64,
            };
            let row = rows.row(batch.indices()[p] as usize);
            for (o, &x) in out.row_mut(b).iter_mut().zip(row) {
                *o += w * x;
            }
        }
    }
    out
}

pub fn to_f64<T: Element>(m: &Matrix<T>) -> Matrix<f64> {
    Matrix::from_vec(
        m.rows(),
        m.cols(),
        m.as_slice().iter().map(|x| x.as_f64()).collect(),
    )
}

/// Frobenius-norm relative error `|a - b| / |b|`; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

pub fn random_small_table<T: Element>(
    rng: &mut ChaCha8Rng,
    d: usize,
    rank: usize,
    max_factor: usize,
) -> TtTable<T> {
    let plan = random_plan(rng, d, rank, max_factor);
    random_table(rng, plan)
}
