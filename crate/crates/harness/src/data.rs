//! Synthetic Zipfian workloads with a planted teacher, and the batch type
//! every data source produces.

use std::collections::HashMap;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use ttrec_core::{IndexBatch, Matrix, Pooling};

use crate::config::{ModelConfig, SyntheticConfig};
use crate::error::{HarnessError, Result};

/// One training batch: dense features, one index batch per table, labels in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub dense: Matrix<f64>,
    pub sparse: Vec<IndexBatch>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub trait DataSource {
    fn next_batch(&mut self) -> Result<Batch>;
}

impl<S: DataSource + ?Sized> DataSource for Box<S> {
    fn next_batch(&mut self) -> Result<Batch> {
        (**self).next_batch()
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Draws row ids with Zipf(s) popularity over ranks; `s == 0` is uniform.
///
/// Rank `k` maps to row `(k * mul + add) mod rows`, a bijection that spreads
/// the popular rows across the id space instead of packing them at 0.
#[derive(Debug, Clone)]
pub struct RowSampler {
    rows: u64,
    zipf: Option<Zipf<f64>>,
    mul: u64,
    add: u64,
}

impl RowSampler {
    pub fn new(rows: u64, s: f64) -> Result<Self> {
        if rows == 0 || !(s.is_finite() && s >= 0.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "zipf sampler needs rows > 0 and s >= 0, got rows={rows} s={s}"
            )));
        }
        let zipf = if s > 0.0 {
            Some(
                Zipf::new(rows as f64, s)
                    .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?,
            )
        } else {
            None
        };
        let mut mul = ((rows as f64 * 0.618_033_988_749_895) as u64).max(1);
        while gcd(mul, rows) != 1 {
            mul += 1;
        }
        Ok(Self {
            rows,
            zipf,
            mul: mul % rows.max(1),
            add: rows / 3,
        })
    }

    /// Identity rank-to-row map, for tests that reason about ranks directly.
    pub fn unscrambled(mut self) -> Self {
        self.mul = 1;
        self.add = 0;
        self
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    /// Popularity rank in `[0, rows)`, 0 being the most popular.
    pub fn sample_rank<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.zipf {
            Some(z) => (z.sample(rng) as u64).clamp(1, self.rows) - 1,
            None => rng.random_range(0..self.rows),
        }
    }

    pub fn row_of_rank(&self, rank: u64) -> u64 {
        ((rank as u128 * self.mul.max(1) as u128 + self.add as u128) % self.rows as u128) as u64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.row_of_rank(self.sample_rank(rng))
    }
}

/// Generalized harmonic number `sum_{k=1..n} k^-s`.
pub fn generalized_harmonic(n: u64, s: f64) -> f64 {
    (1..=n).map(|k| (k as f64).powf(-s)).sum()
}

/// Planted linear-logit teacher: `w . x + b + sum_t pooled(v_t)` where `v_t`
/// is nonzero only on the `hot_rows` most popular rows of table `t`.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub dense_weight: Vec<f64>,
    pub bias: f64,
    pub hot_values: Vec<HashMap<u64, f64>>,
}

impl Teacher {
    pub fn new(seed: u64, dense_features: usize, samplers: &[RowSampler], hot_rows: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let scale = 1.0 / (dense_features as f64).sqrt();
        let dense_weight = (0..dense_features)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                v * scale
            })
            .collect();
        let hot_values = samplers
            .iter()
            .map(|s| {
                (0..(hot_rows as u64).min(s.rows()))
                    .map(|rank| {
                        let mag = rng.random_range(1.0..2.0);
                        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                        (s.row_of_rank(rank), sign * mag)
                    })
                    .collect()
            })
            .collect();
        Self {
            dense_weight,
            bias: 0.0,
            hot_values,
        }
    }

    pub fn logit(&self, dense: &[f64], bags: &[&[u64]], pooling: Pooling) -> f64 {
        let mut z = self.bias
            + dense
                .iter()
                .zip(&self.dense_weight)
                .map(|(x, w)| x * w)
                .sum::<f64>();
        for (values, bag) in self.hot_values.iter().zip(bags) {
            let sum: f64 = bag
                .iter()
                .map(|r| values.get(r).copied().unwrap_or(0.0))
                .sum();
            z += match pooling {
                Pooling::Mean if !bag.is_empty() => sum / bag.len() as f64,
                _ => sum,
            };
        }
        z
    }
}

/// Give-up bound on margin redraws for one sample.
const MAX_MARGIN_REDRAWS: usize = 1000;

/// Endless stream of planted-teacher batches.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    config: SyntheticConfig,
    samplers: Vec<RowSampler>,
    teacher: Teacher,
    dense_features: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl SyntheticSource {
    pub fn new(
        model: &ModelConfig,
        config: &SyntheticConfig,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if config.pooling == 0 {
            return Err(HarnessError::InvalidConfig(
                "pooling factor must be >= 1".into(),
            ));
        }
        if !(config.negative_keep > 0.0 && config.negative_keep <= 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "negative_keep {} outside (0, 1]",
                config.negative_keep
            )));
        }
        let samplers = model
            .tables
            .iter()
            .map(|t| RowSampler::new(t.rows, config.zipf_s))
            .collect::<Result<Vec<_>>>()?;
        let teacher = Teacher::new(seed, model.dense_features, &samplers, config.hot_rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            config: config.clone(),
            samplers,
            teacher,
            dense_features: model.dense_features,
            batch_size,
            rng,
        })
    }

    /// Same teacher and samplers, independent sample stream.
    pub fn held_out(&self) -> Self {
        let mut other = self.clone();
        other.rng.set_stream(2);
        other.rng.set_word_pos(0);
        other
    }

    pub fn teacher(&self) -> &Teacher {
        &self.teacher
    }

    pub fn samplers(&self) -> &[RowSampler] {
        &self.samplers
    }

    fn draw_sample(&mut self) -> (Vec<f64>, Vec<Vec<u64>>, f64) {
        let p = self.config.pooling;
        let mut attempt = 0;
        loop {
            let dense: Vec<f64> = (0..self.dense_features)
                .map(|_| self.rng.sample(StandardNormal))
                .collect();
            let bags: Vec<Vec<u64>> = self
                .samplers
                .iter()
                .map(|s| (0..p).map(|_| s.sample(&mut self.rng)).collect())
                .collect();
            let refs: Vec<&[u64]> = bags.iter().map(Vec::as_slice).collect();
            let z = self.teacher.logit(&dense, &refs, self.config.pooling_mode);
            attempt += 1;
            if z.abs() < self.config.margin && attempt < MAX_MARGIN_REDRAWS {
                continue;
            }
            let label = if z > 0.0 { 1.0 } else { 0.0 };
            if label == 0.0
                && self.config.negative_keep < 1.0
                && !self.rng.random_bool(self.config.negative_keep)
            {
                continue;
            }
            return (dense, bags, label);
        }
    }
}

impl DataSource for SyntheticSource {
    fn next_batch(&mut self) -> Result<Batch> {
        let b = self.batch_size;
        let t = self.samplers.len();
        let mut dense = Vec::with_capacity(b * self.dense_features);
        let mut per_table: Vec<Vec<Vec<u64>>> = vec![Vec::with_capacity(b); t];
        let mut labels = Vec::with_capacity(b);
        for _ in 0..b {
            let (x, bags, y) = self.draw_sample();
            dense.extend(x);
            for (dst, bag) in per_table.iter_mut().zip(bags) {
                dst.push(bag);
            }
            labels.push(y);
        }
        Ok(Batch {
            dense: Matrix::from_vec(b, self.dense_features, dense),
            sparse: per_table
                .iter()
                .map(|bags| IndexBatch::from_bags(bags, self.config.pooling_mode))
                .collect(),
            labels,
        })
    }
}

/// Draw `batch_size` samples with `pooling` Zipf(s) lookups per table.
pub fn generate_zipfian_batch<R: Rng + ?Sized>(
    rng: &mut R,
    samplers: &[RowSampler],
    teacher: &Teacher,
    batch_size: usize,
    pooling: usize,
) -> Batch {
    let d = teacher.dense_weight.len();
    let mut dense = Vec::with_capacity(batch_size * d);
    let mut per_table: Vec<Vec<Vec<u64>>> = vec![Vec::with_capacity(batch_size); samplers.len()];
    let mut labels = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let bags: Vec<Vec<u64>> = samplers
            .iter()
            .map(|s| (0..pooling).map(|_| s.sample(rng)).collect())
            .collect();
        let refs: Vec<&[u64]> = bags.iter().map(Vec::as_slice).collect();
        labels.push(if teacher.logit(&x, &refs, Pooling::Sum) > 0.0 {
            1.0
        } else {
            0.0
        });
        dense.extend(x);
        for (dst, bag) in per_table.iter_mut().zip(bags) {
            dst.push(bag);
        }
    }
    Batch {
        dense: Matrix::from_vec(batch_size, d, dense),
        sparse: per_table
            .iter()
            .map(|b| IndexBatch::from_bags(b, Pooling::Sum))
            .collect(),
        labels,
    }
}

/// Runs a source on a producer thread, at most two batches ahead.
pub struct Prefetch {
    rx: Receiver<Result<Batch>>,
    handle: Option<JoinHandle<()>>,
}

pub const PREFETCH_DEPTH: usize = 2;

impl Prefetch {
    pub fn spawn<S: DataSource + Send + 'static>(mut source: S, batches: usize) -> Self {
        let (tx, rx) = sync_channel(PREFETCH_DEPTH);
        let handle = std::thread::spawn(move || {
            for _ in 0..batches {
                let item = source.next_batch();
                let stop = item.is_err();
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            rx,
            handle: Some(handle),
        }
    }
}

impl DataSource for Prefetch {
    fn next_batch(&mut self) -> Result<Batch> {
        self.rx.recv().unwrap_or(Err(HarnessError::Exhausted(0)))
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        // Unblock a producer waiting on a full queue before joining it.
        while self.rx.try_recv().is_ok() {}
        let (_, dead) = sync_channel(0);
        drop(std::mem::replace(&mut self.rx, dead));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_map_is_a_permutation() {
        for rows in [1u64, 2, 7, 10, 64, 1000, 10_007] {
            let s = RowSampler::new(rows, 1.05).unwrap();
            let mut seen = vec![false; rows as usize];
            for k in 0..rows {
                let r = s.row_of_rank(k) as usize;
                assert!(!seen[r]);
                seen[r] = true;
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RowSampler::new(0, 1.0).is_err());
        assert!(RowSampler::new(10, -1.0).is_err());
        assert!(RowSampler::new(10, f64::NAN).is_err());
    }

    #[test]
    fn harmonic_small_cases() {
        assert_eq!(generalized_harmonic(1, 2.0), 1.0);
        assert!((generalized_harmonic(3, 1.0) - 11.0 / 6.0).abs() < 1e-15);
    }
}
