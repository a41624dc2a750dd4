//! SGD training loop with the warm-up / finalize / refresh cache stages.

use std::io::Write;
use std::time::Instant;

use ttrec_core::{CacheSchedule, Element};

use crate::config::{DataConfig, RunConfig, TrainConfig};
use crate::criteo::CriteoSource;
use crate::data::{DataSource, Prefetch, SyntheticSource};
use crate::error::{HarnessError, Result};
use crate::model::{BatchStats, Model};

pub const METRICS_HEADER: &str = "iter,loss,accuracy,hit_rate,ms_per_iter";

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Mean BCE of this iteration's batch, before the update.
    pub loss: f64,
    /// Accuracy over all training samples seen so far.
    pub accuracy: f64,
    pub hit_rate: Option<f64>,
    pub ms_per_iter: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub records: Vec<IterRecord>,
    /// Held-out evaluation after the last iteration.
    pub eval: Option<BatchStats>,
}

impl Metrics {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Held-out accuracy if evaluated, otherwise the running training accuracy.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.eval
            .map(|e| e.accuracy())
            .or_else(|| self.records.last().map(|r| r.accuracy))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.iter,
                r.loss,
                r.accuracy,
                opt(r.hit_rate),
                opt(r.ms_per_iter)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Fill `ms_per_iter`; off keeps the metrics stream byte-reproducible.
    pub record_timing: bool,
    /// Generate batches on a producer thread.
    pub prefetch: bool,
}

/// Run `config.iterations` SGD steps, applying cache events before the step
/// they are scheduled at, then score `eval` if given.
pub fn train<T: Element>(
    model: &mut Model<T>,
    config: &TrainConfig,
    source: &mut dyn DataSource,
    eval: Option<&mut dyn DataSource>,
    options: TrainOptions,
) -> Result<Metrics> {
    config.validate()?;
    let schedule = CacheSchedule::new(
        config.iterations,
        config.warmup_fraction,
        config.refresh_period,
    );
    let mut metrics = Metrics::default();
    let (mut correct, mut seen) = (0usize, 0usize);
    let mut last_finite = None;
    for iter in 0..config.iterations {
        if let Some(event) = schedule.event_at(iter) {
            log::debug!("iteration {iter}: cache event {event:?}");
            model.cache_event(event)?;
        }
        let batch = source.next_batch()?;
        let start = Instant::now();
        let stats = model.step(&batch, config.lr)?;
        let elapsed = start.elapsed();
        if !stats.loss.is_finite() {
            return Err(HarnessError::Diverged {
                iter,
                loss: stats.loss,
                detail: format!("lr={}, last finite loss {:?}", config.lr, last_finite),
            });
        }
        last_finite = Some(stats.loss);
        correct += stats.correct;
        seen += stats.count;
        let record = IterRecord {
            iter,
            loss: stats.loss,
            accuracy: correct as f64 / seen.max(1) as f64,
            hit_rate: model.hit_rate(),
            ms_per_iter: options.record_timing.then(|| elapsed.as_secs_f64() * 1e3),
        };
        if config.log_every > 0 && iter % config.log_every == 0 {
            log::info!(
                "iter {iter}: loss {:.5} acc {:.4} hit_rate {:?}",
                record.loss,
                record.accuracy,
                record.hit_rate
            );
        }
        metrics.records.push(record);
    }
    if let Some(eval) = eval {
        let mut total = BatchStats::default();
        let mut loss_sum = 0.0;
        for _ in 0..config.eval_batches {
            let s = model.evaluate(&eval.next_batch()?)?;
            loss_sum += s.loss * s.count as f64;
            total.correct += s.correct;
            total.count += s.count;
        }
        if total.count > 0 {
            total.loss = loss_sum / total.count as f64;
            metrics.eval = Some(total);
        }
    }
    Ok(metrics)
}

/// Build the model and data source a [`RunConfig`] describes and train it.
pub fn run<T: Element>(config: &RunConfig, options: TrainOptions) -> Result<(Model<T>, Metrics)> {
    config.validate()?;
    let mut model = Model::<T>::new(&config.model, &config.train)?;
    let t = &config.train;
    let metrics = match &config.data {
        DataConfig::Synthetic(syn) => {
            let source = SyntheticSource::new(&config.model, syn, t.batch_size, t.seed)?;
            let mut held_out = source.held_out();
            if options.prefetch {
                let mut pre = Prefetch::spawn(source, t.iterations);
                train(&mut model, t, &mut pre, Some(&mut held_out), options)?
            } else {
                let mut source = source;
                train(&mut model, t, &mut source, Some(&mut held_out), options)?
            }
        }
        DataConfig::Criteo(c) => {
            let mut source = CriteoSource::new(
                &c.path,
                &c.hash_sizes,
                config.model.tables.len(),
                t.batch_size,
                c.negative_keep,
                t.seed,
            )?;
            for (i, (table, &size)) in config
                .model
                .tables
                .iter()
                .zip(source.hash_sizes())
                .enumerate()
            {
                if table.rows < size {
                    return Err(HarnessError::InvalidConfig(format!(
                        "table {i} has {} rows but column hashes into {size}",
                        table.rows
                    )));
                }
            }
            let m = train(&mut model, t, &mut source, None, options)?;
            if source.skipped() > 0 {
                log::warn!("skipped {} malformed criteo rows", source.skipped());
            }
            m
        }
    };
    Ok((model, metrics))
}
