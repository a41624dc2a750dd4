//! Replay a synthetic Zipf stream through an LFU row cache, without
//! training, to watch hit rate and hot-set drift over time.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttrec_core::cache::hot_set_drift;
use ttrec_core::{plan_shapes, CacheEvent, CacheSchedule, IndexBatch, LfuCache, Pooling, TtTable};

use crate::data::RowSampler;
use crate::error::{HarnessError, Result};

pub const CACHE_SIM_HEADER: &str = "iteration,hit_rate,drift";

#[derive(Debug, Clone, PartialEq)]
pub struct CacheSimConfig {
    pub rows: u64,
    pub zipf_s: f64,
    /// Cache capacity as a percentage of rows.
    pub capacity_pct: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub pooling: usize,
    pub warmup_fraction: f64,
    pub refresh_period: usize,
    pub seed: u64,
}

impl Default for CacheSimConfig {
    fn default() -> Self {
        Self {
            rows: 1_000_000,
            zipf_s: 1.05,
            capacity_pct: 0.01,
            iterations: 5000,
            batch_size: 128,
            pooling: 1,
            warmup_fraction: ttrec_core::cache::DEFAULT_WARMUP_FRACTION,
            refresh_period: ttrec_core::cache::DEFAULT_REFRESH_PERIOD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheSimRecord {
    pub iteration: usize,
    /// Share of this iteration's lookups served by the cache; `None` during warm-up.
    pub hit_rate: Option<f64>,
    /// Hot-set drift of the refresh applied at this iteration, if any.
    pub drift: Option<f64>,
}

pub fn cache_sim(cfg: &CacheSimConfig) -> Result<Vec<CacheSimRecord>> {
    if !(cfg.capacity_pct > 0.0 && cfg.capacity_pct <= 100.0) {
        return Err(HarnessError::InvalidConfig(format!(
            "capacity_pct must be in (0, 100], got {}",
            cfg.capacity_pct
        )));
    }
    if cfg.iterations == 0 || cfg.batch_size == 0 || cfg.pooling == 0 || cfg.refresh_period == 0 {
        return Err(HarnessError::InvalidConfig(
            "iterations, batch_size, pooling and refresh_period must be >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.warmup_fraction) {
        return Err(HarnessError::InvalidConfig(format!(
            "warmup_fraction {} outside [0, 1)",
            cfg.warmup_fraction
        )));
    }
    let sampler = RowSampler::new(cfg.rows, cfg.zipf_s)?;
    // Row values never matter here; a rank-1 table keeps admissions cheap.
    let plan = plan_shapes(cfg.rows, 8, 3, 1, None, None)?;
    let table = TtTable::<f32>::zeros(plan)?;
    let capacity = ((cfg.rows as f64 * cfg.capacity_pct / 100.0).ceil() as usize).max(1);
    let mut cache = LfuCache::<f32>::new(capacity, 8);
    let schedule = CacheSchedule::new(cfg.iterations, cfg.warmup_fraction, cfg.refresh_period);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let mut drift = None;
        match schedule.event_at(iteration) {
            Some(CacheEvent::FinalizeWarmup) => cache.warmup_finalize(&table)?,
            Some(CacheEvent::Refresh) => {
                let prev = cache.cached_rows();
                cache.refresh(&table)?;
                drift = Some(hot_set_drift(&prev, &cache.cached_rows(), capacity));
            }
            None => {}
        }
        let bags: Vec<Vec<u64>> = (0..cfg.batch_size)
            .map(|_| (0..cfg.pooling).map(|_| sampler.sample(&mut rng)).collect())
            .collect();
        let batch = IndexBatch::from_bags(&bags, Pooling::Sum);
        let part = cache.record_and_partition(&batch);
        let hit_rate = (iteration >= schedule.warmup_iters)
            .then(|| part.cached.len() as f64 / batch.len() as f64);
        records.push(CacheSimRecord {
            iteration,
            hit_rate,
            drift,
        });
    }
    Ok(records)
}

pub fn write_cache_sim_csv<W: Write>(
    records: &[CacheSimRecord],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{CACHE_SIM_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in records {
        writeln!(out, "{},{},{}", r.iteration, opt(r.hit_rate), opt(r.drift))?;
    }
    Ok(())
}
