//! Pooling-factor and rank microbenchmarks for the TT embedding bag, plus the
//! cache-bypass probe.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttrec_core::init::init_tt_cores;
use ttrec_core::{
    backward_bags, forward_bags, plan_shapes, CacheEvent, EmbeddingBagConfig, IndexBatch, InitSpec,
    Matrix, Pooling, TtTable,
};

use crate::config::{ModelConfig, TableConfig, TrainConfig};
use crate::data::{Batch, RowSampler};
use crate::error::{HarnessError, Result};
use crate::model::Model;

pub const BENCH_HEADER: &str =
    "pooling,rank,batch_size,reps,us_per_sample,us_per_sample_std,us_per_lookup,us_per_lookup_std";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub rows: u64,
    pub emb_dim: usize,
    pub tt_dim: usize,
    /// Samples per timed call.
    pub batch_size: usize,
    pub reps: usize,
    /// Untimed calls before measuring.
    pub warmup: usize,
    /// Zipf exponent of the index stream; 0 is uniform.
    pub zipf_s: f64,
    pub micro_batch: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rows: 1_000_000,
            emb_dim: 16,
            tt_dim: 3,
            batch_size: 256,
            reps: 30,
            warmup: 3,
            zipf_s: 1.05,
            // one micro-batch per call up to P = 128, so row reuse spans the batch
            micro_batch: 1 << 15,
            threads: 1,
            seed: 0,
        }
    }
}

pub const MIN_REPS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub mean: f64,
    pub std: f64,
    pub median_of_means: f64,
}

/// Mean, sample standard deviation, and the median of the means of
/// `groups` contiguous, equally sized groups.
pub fn summarize(samples: &[f64], groups: usize) -> TimingSummary {
    let n = samples.len();
    assert!(n > 0, "no samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let groups = groups.clamp(1, n);
    let size = n / groups;
    let mut means: Vec<f64> = samples
        .chunks(size)
        .take(groups)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let k = means.len();
    let median_of_means = if k % 2 == 1 {
        means[k / 2]
    } else {
        0.5 * (means[k / 2 - 1] + means[k / 2])
    };
    TimingSummary {
        mean,
        std: var.sqrt(),
        median_of_means,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub pooling: usize,
    pub rank: usize,
    pub batch_size: usize,
    pub reps: usize,
    /// Median-of-means forward+backward time per sample.
    pub us_per_sample: f64,
    pub us_per_sample_std: f64,
    pub us_per_lookup: f64,
    pub us_per_lookup_std: f64,
}

fn bench_table(cfg: &BenchConfig, rank: usize) -> Result<TtTable<f32>> {
    let plan = plan_shapes(cfg.rows, cfg.emb_dim, cfg.tt_dim, rank, None, None)?;
    let mut table = TtTable::zeros(plan)?;
    init_tt_cores(
        &mut table,
        &InitSpec::sampled_gaussian(cfg.emb_dim),
        cfg.seed,
    )?;
    Ok(table)
}

/// Time forward+backward of one TT table for every `(P, R)` pair.
pub fn bench_pooling(
    cfg: &BenchConfig,
    pooling: &[usize],
    ranks: &[usize],
) -> Result<Vec<BenchRow>> {
    if cfg.reps < MIN_REPS {
        return Err(HarnessError::InvalidConfig(format!(
            "at least {MIN_REPS} repetitions required"
        )));
    }
    if pooling.contains(&0) || cfg.batch_size == 0 {
        return Err(HarnessError::InvalidConfig(
            "pooling and batch_size must be >= 1".into(),
        ));
    }
    let sampler = RowSampler::new(cfg.rows, cfg.zipf_s)?;
    let bag_cfg = EmbeddingBagConfig {
        micro_batch: cfg.micro_batch,
        threads: cfg.threads,
    };
    let mut rows = Vec::new();
    for &rank in ranks {
        let table = bench_table(cfg, rank)?;
        let cases: Vec<(IndexBatch, Matrix<f32>)> = pooling
            .iter()
            .map(|&p| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(cfg.seed ^ ((p as u64) << 32) ^ rank as u64);
                let bags: Vec<Vec<u64>> = (0..cfg.batch_size)
                    .map(|_| (0..p).map(|_| sampler.sample(&mut rng)).collect())
                    .collect();
                let n = cfg.batch_size * cfg.emb_dim;
                let grad = Matrix::from_vec(
                    cfg.batch_size,
                    cfg.emb_dim,
                    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
                );
                (IndexBatch::from_bags(&bags, Pooling::Sum), grad)
            })
            .collect();
        // round-robin over pooling factors so drift in machine load hits all of them alike
        let mut per_call = vec![Vec::with_capacity(cfg.reps); pooling.len()];
        for rep in 0..cfg.warmup + cfg.reps {
            for ((batch, grad), times) in cases.iter().zip(&mut per_call) {
                let start = Instant::now();
                let (out, ctx) = forward_bags(&table, batch, &bag_cfg, true)?;
                let grads = backward_bags(&table, batch, &ctx, grad, &bag_cfg)?;
                let us = start.elapsed().as_secs_f64() * 1e6;
                std::hint::black_box((&out, &grads));
                if rep >= cfg.warmup {
                    times.push(us);
                }
            }
        }
        for (&p, times) in pooling.iter().zip(&per_call) {
            let s = summarize(times, 5);
            let per_sample = cfg.batch_size as f64;
            let per_lookup = (cfg.batch_size * p) as f64;
            rows.push(BenchRow {
                pooling: p,
                rank,
                batch_size: cfg.batch_size,
                reps: cfg.reps,
                us_per_sample: s.median_of_means / per_sample,
                us_per_sample_std: s.std / per_sample,
                us_per_lookup: s.median_of_means / per_lookup,
                us_per_lookup_std: s.std / per_lookup,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.pooling,
            r.rank,
            r.batch_size,
            r.reps,
            r.us_per_sample,
            r.us_per_sample_std,
            r.us_per_lookup,
            r.us_per_lookup_std
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BypassReport {
    pub steps: usize,
    /// TT-core lookups during the active phase.
    pub tt_lookups_active: u64,
    pub hit_rate: f64,
    pub us_per_step_cached: f64,
    pub us_per_step_dense: f64,
}

/// Train a one-table model on a stream that only touches `hot_rows` rows,
/// with a cache large enough to hold them all, and count TT lookups after
/// warm-up. Also times the same steps on an uncompressed table.
pub fn bench_cache_bypass(
    rows: u64,
    rank: usize,
    hot_rows: usize,
    steps: usize,
    seed: u64,
) -> Result<BypassReport> {
    if hot_rows == 0 || hot_rows as u64 > rows {
        return Err(HarnessError::InvalidConfig(
            "hot_rows must be in 1..=rows".into(),
        ));
    }
    let emb_dim = 16;
    let mut table = TableConfig::tt(rows, rank);
    table.cache_pct = 100.0 * hot_rows as f64 / rows as f64;
    let model_cfg = ModelConfig {
        dense_features: 1,
        emb_dim,
        tables: vec![table],
        bottom_mlp: vec![emb_dim],
        top_mlp: vec![],
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let sampler = RowSampler::new(rows, 0.0)?;
    let hot: Vec<u64> = (0..hot_rows as u64)
        .map(|k| sampler.row_of_rank(k))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch_of = |bags: Vec<Vec<u64>>, rng: &mut ChaCha8Rng| {
        let b = bags.len();
        Batch {
            dense: Matrix::from_vec(b, 1, (0..b).map(|_| rng.random_range(-1.0..1.0)).collect()),
            sparse: vec![IndexBatch::from_bags(&bags, Pooling::Sum)],
            labels: (0..b)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
        }
    };
    let warm = batch_of(hot.iter().map(|&r| vec![r]).collect(), &mut rng);
    let stream: Vec<Batch> = (0..steps)
        .map(|_| {
            let bags = (0..128)
                .map(|_| vec![hot[rng.random_range(0..hot.len())]])
                .collect();
            batch_of(bags, &mut rng)
        })
        .collect();

    let mut cached = Model::<f32>::new(&model_cfg, &train_cfg)?;
    cached.step(&warm, 0.01)?;
    cached.cache_event(CacheEvent::FinalizeWarmup)?;
    let before = cached.tt_lookups()[0];
    let start = Instant::now();
    for b in &stream {
        cached.step(b, 0.01)?;
    }
    let us_cached = start.elapsed().as_secs_f64() * 1e6 / steps.max(1) as f64;
    let tt_lookups_active = cached.tt_lookups()[0] - before;

    let mut dense_cfg = model_cfg.clone();
    dense_cfg.tables[0] = TableConfig::dense(rows);
    let mut dense = Model::<f32>::new(&dense_cfg, &train_cfg)?;
    let start = Instant::now();
    for b in &stream {
        dense.step(b, 0.01)?;
    }
    let us_dense = start.elapsed().as_secs_f64() * 1e6 / steps.max(1) as f64;

    Ok(BypassReport {
        steps,
        tt_lookups_active,
        hit_rate: cached.hit_rate().unwrap_or(0.0),
        us_per_step_cached: us_cached,
        us_per_step_dense: us_dense,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constant_samples() {
        let s = summarize(&[2.0; 30], 5);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.median_of_means, 2.0);
    }

    #[test]
    fn median_of_means_ignores_one_outlier_group() {
        let mut v = vec![1.0; 30];
        v[0] = 1000.0;
        let s = summarize(&v, 5);
        assert_eq!(s.median_of_means, 1.0);
        assert!(s.mean > 1.0);
    }
}
