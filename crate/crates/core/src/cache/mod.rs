//! Least-frequently-used cache of hot embedding rows kept uncompressed.
//!
//! Training runs in stages: during warm-up only access frequencies are
//! recorded; finalizing the warm-up copies the most frequent rows out of
//! the TT-cores into a dense row store; afterwards every lookup of a
//! cached row is served (and trained) from the store, and the hot set is
//! recomputed every `refresh_period` iterations. Rows that fall out of the
//! hot set lose their learned dense values and fall back to the TT-cores.

mod freq;
mod lfu;

pub use freq::FreqTable;
pub use lfu::{
    default_capacity, hot_set_drift, CacheState, CachedBatch, LfuCache, Partition, RefreshReport,
    SlotGradients,
};

/// Stage transition due at the start of an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheEvent {
    FinalizeWarmup,
    Refresh,
}

/// Iteration schedule for warm-up and periodic refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheSchedule {
    pub warmup_iters: usize,
    pub refresh_period: usize,
}

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
pub const DEFAULT_REFRESH_PERIOD: usize = 1000;

impl CacheSchedule {
    /// Warm-up covers `floor(warmup_fraction * iterations)` iterations.
    pub fn new(iterations: usize, warmup_fraction: f64, refresh_period: usize) -> Self {
        Self {
            warmup_iters: (warmup_fraction * iterations as f64).floor() as usize,
            refresh_period: refresh_period.max(1),
        }
    }

    pub fn event_at(&self, iter: usize) -> Option<CacheEvent> {
        if iter == self.warmup_iters {
            Some(CacheEvent::FinalizeWarmup)
        } else if iter > self.warmup_iters && (iter - self.warmup_iters) % self.refresh_period == 0
        {
            Some(CacheEvent::Refresh)
        } else {
            None
        }
    }
}
