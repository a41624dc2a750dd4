//! DLRM-style model: bottom MLP over dense features, one pooled embedding
//! per categorical table (dense or TT, optionally behind an LFU cache), a
//! feature interaction, and a top MLP producing one logit.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttrec_core::cache::{CacheEvent, Partition, SlotGradients};
use ttrec_core::init::init_tt_cores;
use ttrec_core::{
    backward_bags, forward_bags, sgd_step, ArrayData, Checkpoint, CoreGradients, Element,
    EmbeddingBagConfig, ForwardContext, IndexBatch, InitSpec, LfuCache, Matrix, TtTable,
};

use crate::config::{Interaction, ModelConfig, TrainConfig};
use crate::data::Batch;
use crate::error::{HarnessError, Result};
use crate::mlp::{Mlp, MlpGrads, MlpTrace};

#[derive(Debug, Clone)]
pub enum Embedding<T: Element> {
    Dense {
        rows: u64,
        /// `rows x emb_dim`.
        weight: Vec<T>,
    },
    Tt {
        table: TtTable<T>,
        cache: Option<LfuCache<T>>,
        /// Lookups that went through the TT-cores during training steps.
        tt_lookups: u64,
    },
}

impl<T: Element> Embedding<T> {
    pub fn num_rows(&self) -> u64 {
        match self {
            Embedding::Dense { rows, .. } => *rows,
            Embedding::Tt { table, .. } => table.num_rows(),
        }
    }

    pub fn parameter_count(&self, emb_dim: usize) -> u64 {
        match self {
            Embedding::Dense { rows, .. } => rows * emb_dim as u64,
            Embedding::Tt { table, .. } => table.parameter_count(),
        }
    }
}

/// Numerically stable `log(1 + exp(-|z|)) + max(z, 0) - z * y`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    /// Mean BCE over the batch.
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

impl BatchStats {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone)]
pub enum TableGrads<T: Element> {
    /// Sparse row gradients.
    Dense(BTreeMap<u64, Vec<T>>),
    Tt {
        cores: Option<CoreGradients<T>>,
        cached: Option<SlotGradients<T>>,
    },
}

#[derive(Debug, Clone)]
pub struct Gradients<T: Element> {
    pub bottom: MlpGrads<T>,
    pub top: MlpGrads<T>,
    pub tables: Vec<TableGrads<T>>,
}

enum TableTrace<T: Element> {
    Dense,
    Tt {
        part: Option<Partition>,
        ctx: Option<ForwardContext<T>>,
    },
}

struct ForwardTrace<T: Element> {
    bottom: MlpTrace<T>,
    bottom_out: Matrix<T>,
    pooled: Vec<Matrix<T>>,
    tables: Vec<TableTrace<T>>,
    top: MlpTrace<T>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    config: ModelConfig,
    pub bottom: Mlp<T>,
    pub top: Mlp<T>,
    pub tables: Vec<Embedding<T>>,
    bag_cfg: EmbeddingBagConfig,
}

fn to_matrix<T: Element>(m: &Matrix<f64>) -> Matrix<T> {
    Matrix::from_vec(
        m.rows(),
        m.cols(),
        m.as_slice().iter().map(|&v| T::from_f64(v)).collect(),
    )
}

impl<T: Element> Model<T> {
    /// Seeded initialization; each component draws from its own stream.
    pub fn new(config: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
            rng.set_stream(1000 + k);
            rng
        };
        let bottom = Mlp::init(
            config.dense_features,
            &config.bottom_mlp,
            true,
            &mut stream(0),
        );
        let mut top_widths = config.top_mlp.clone();
        top_widths.push(1);
        let top = Mlp::init(config.interaction_dim(), &top_widths, false, &mut stream(1));
        let n = config.emb_dim;
        let mut tables = Vec::with_capacity(config.tables.len());
        for (i, tc) in config.tables.iter().enumerate() {
            let seed = train.seed.wrapping_add(0x5EED_0000 + i as u64);
            let table = if tc.use_tt {
                let plan = ttrec_core::plan_shapes(
                    tc.rows,
                    n,
                    tc.tt_dim,
                    tc.rank,
                    tc.row_factors.as_deref(),
                    None,
                )?;
                let mut table = TtTable::zeros(plan)?.with_name(format!("emb{i}"));
                init_tt_cores(&mut table, &train.tt_init_spec(n), seed)?;
                let capacity = tc.cache_capacity();
                let cache = (capacity > 0).then(|| {
                    let c = LfuCache::new(capacity, n);
                    match tc.cache_decay {
                        Some(f) => c.with_decay(f),
                        None => c,
                    }
                });
                Embedding::Tt {
                    table,
                    cache,
                    tt_lookups: 0,
                }
            } else {
                let sampler = InitSpec::uniform_default(n).sampler(1)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let len = usize::try_from(tc.rows)
                    .ok()
                    .and_then(|r| r.checked_mul(n))
                    .ok_or_else(|| {
                        HarnessError::InvalidConfig(format!(
                            "table {i} too large for a dense table"
                        ))
                    })?;
                let weight = (0..len)
                    .map(|_| T::from_f64(sampler.draw(&mut rng).expect("uniform never rejects")))
                    .collect();
                Embedding::Dense {
                    rows: tc.rows,
                    weight,
                }
            };
            tables.push(table);
        }
        Ok(Self {
            config: config.clone(),
            bottom,
            top,
            tables,
            bag_cfg: EmbeddingBagConfig {
                micro_batch: config.micro_batch,
                threads: config.threads,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// MLP weights and biases, dense rows, and TT-core entries.
    pub fn parameter_count(&self) -> u64 {
        let n = self.config.emb_dim;
        (self.bottom.parameter_count() + self.top.parameter_count()) as u64
            + self
                .tables
                .iter()
                .map(|t| t.parameter_count(n))
                .sum::<u64>()
    }

    pub fn tt_lookups(&self) -> Vec<u64> {
        self.tables
            .iter()
            .map(|t| match t {
                Embedding::Tt { tt_lookups, .. } => *tt_lookups,
                Embedding::Dense { .. } => 0,
            })
            .collect()
    }

    /// Cache hits over lookups since activation, across all cached tables.
    pub fn hit_rate(&self) -> Option<f64> {
        let (mut hits, mut lookups) = (0, 0);
        for t in &self.tables {
            if let Embedding::Tt { cache: Some(c), .. } = t {
                let (h, l) = c.hit_counts();
                hits += h;
                lookups += l;
            }
        }
        (lookups > 0).then(|| hits as f64 / lookups as f64)
    }

    pub fn has_cache(&self) -> bool {
        self.tables
            .iter()
            .any(|t| matches!(t, Embedding::Tt { cache: Some(_), .. }))
    }

    pub fn cache_event(&mut self, event: CacheEvent) -> Result<()> {
        for t in &mut self.tables {
            if let Embedding::Tt {
                table,
                cache: Some(cache),
                ..
            } = t
            {
                match event {
                    CacheEvent::FinalizeWarmup => cache.warmup_finalize(table)?,
                    CacheEvent::Refresh => {
                        cache.refresh(table)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.sparse.len() != self.tables.len()
            || batch.dense.cols() != self.config.dense_features
        {
            return Err(HarnessError::InvalidConfig(format!(
                "batch has {} tables and {} dense features, model expects {} and {}",
                batch.sparse.len(),
                batch.dense.cols(),
                self.tables.len(),
                self.config.dense_features
            )));
        }
        for (i, (sparse, table)) in batch.sparse.iter().zip(&self.tables).enumerate() {
            if sparse.num_bags() != batch.len() {
                return Err(HarnessError::InvalidConfig(format!(
                    "table {i} has {} bags for {} samples",
                    sparse.num_bags(),
                    batch.len()
                )));
            }
            sparse.validate_rows(table.num_rows())?;
        }
        Ok(())
    }

    fn forward_inner(
        &self,
        batch: &Batch,
        parts: Vec<Option<Partition>>,
        save: bool,
    ) -> Result<ForwardTrace<T>> {
        let n = self.config.emb_dim;
        let (bottom_out, bottom) = self.bottom.forward(&to_matrix(&batch.dense));
        let mut pooled = Vec::with_capacity(self.tables.len());
        let mut traces = Vec::with_capacity(self.tables.len());
        for ((table, sparse), part) in self.tables.iter().zip(&batch.sparse).zip(parts) {
            match table {
                Embedding::Dense { weight, .. } => {
                    let mut out = Matrix::zeros(sparse.num_bags(), n);
                    for b in 0..sparse.num_bags() {
                        for p in sparse.bag_range(b) {
                            let coef = T::from_f64(sparse.coefficient(b, p));
                            let r = sparse.indices()[p] as usize;
                            for (o, &w) in
                                out.row_mut(b).iter_mut().zip(&weight[r * n..(r + 1) * n])
                            {
                                *o += coef * w;
                            }
                        }
                    }
                    pooled.push(out);
                    traces.push(TableTrace::Dense);
                }
                Embedding::Tt { table, cache, .. } => match (cache, part) {
                    (Some(cache), Some(part)) => {
                        let mut out = cache.forward_cached(&part.cached)?;
                        let ctx = if part.tt.is_empty() {
                            None
                        } else {
                            let (tt_out, ctx) = forward_bags(table, &part.tt, &self.bag_cfg, save)?;
                            for (o, &v) in out.as_mut_slice().iter_mut().zip(tt_out.as_slice()) {
                                *o += v;
                            }
                            Some(ctx)
                        };
                        pooled.push(out);
                        traces.push(TableTrace::Tt {
                            part: Some(part),
                            ctx,
                        });
                    }
                    _ => {
                        let (out, ctx) = forward_bags(table, sparse, &self.bag_cfg, save)?;
                        pooled.push(out);
                        traces.push(TableTrace::Tt {
                            part: None,
                            ctx: Some(ctx),
                        });
                    }
                },
            }
        }
        let z = self.interact(&bottom_out, &pooled);
        let (logits, top) = self.top.forward(&z);
        Ok(ForwardTrace {
            bottom,
            bottom_out,
            pooled,
            tables: traces,
            top,
            logits: logits.as_slice().iter().map(|v| v.as_f64()).collect(),
        })
    }

    fn interact(&self, bottom_out: &Matrix<T>, pooled: &[Matrix<T>]) -> Matrix<T> {
        let b = bottom_out.rows();
        let n = self.config.emb_dim;
        let dim = self.config.interaction_dim();
        let mut z = Matrix::zeros(b, dim);
        for s in 0..b {
            let vecs: Vec<&[T]> = std::iter::once(bottom_out.row(s))
                .chain(pooled.iter().map(|p| p.row(s)))
                .collect();
            let row = z.row_mut(s);
            row[..n].copy_from_slice(vecs[0]);
            match self.config.interaction {
                Interaction::Dot => {
                    let mut k = n;
                    for i in 0..vecs.len() {
                        for j in i + 1..vecs.len() {
                            row[k] = vecs[i]
                                .iter()
                                .zip(vecs[j])
                                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                            k += 1;
                        }
                    }
                }
                Interaction::Concat => {
                    for (t, v) in vecs[1..].iter().enumerate() {
                        row[n * (t + 1)..n * (t + 2)].copy_from_slice(v);
                    }
                }
            }
        }
        z
    }

    /// Gradients of bottom output and pooled embeddings from the interaction gradient.
    fn interact_backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_z: &Matrix<T>,
    ) -> (Matrix<T>, Vec<Matrix<T>>) {
        let b = grad_z.rows();
        let n = self.config.emb_dim;
        let t = self.tables.len();
        let mut grads: Vec<Matrix<T>> = (0..=t).map(|_| Matrix::zeros(b, n)).collect();
        for s in 0..b {
            let g = grad_z.row(s);
            let vecs: Vec<&[T]> = std::iter::once(trace.bottom_out.row(s))
                .chain(trace.pooled.iter().map(|p| p.row(s)))
                .collect();
            for (d, &gv) in grads[0].row_mut(s).iter_mut().zip(&g[..n]) {
                *d += gv;
            }
            match self.config.interaction {
                Interaction::Dot => {
                    let mut k = n;
                    for i in 0..=t {
                        for j in i + 1..=t {
                            let gk = g[k];
                            k += 1;
                            for c in 0..n {
                                let gi = gk * vecs[j][c];
                                let gj = gk * vecs[i][c];
                                grads[i].row_mut(s)[c] += gi;
                                grads[j].row_mut(s)[c] += gj;
                            }
                        }
                    }
                }
                Interaction::Concat => {
                    for i in 1..=t {
                        grads[i].row_mut(s).copy_from_slice(&g[n * i..n * (i + 1)]);
                    }
                }
            }
        }
        let bottom = grads.remove(0);
        (bottom, grads)
    }

    fn stats(logits: &[f64], labels: &[f64]) -> BatchStats {
        let loss = logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_with_logits(z, y))
            .sum::<f64>()
            / logits.len().max(1) as f64;
        let correct = logits
            .iter()
            .zip(labels)
            .filter(|(&z, &y)| (z > 0.0) == (y > 0.5))
            .count();
        BatchStats {
            loss,
            correct,
            count: logits.len(),
        }
    }

    /// Loss and accuracy without recording cache frequencies.
    pub fn evaluate(&self, batch: &Batch) -> Result<BatchStats> {
        self.check_batch(batch)?;
        let parts = self
            .tables
            .iter()
            .zip(&batch.sparse)
            .map(|(t, sparse)| match t {
                Embedding::Tt { cache: Some(c), .. } => Some(c.partition(sparse)),
                _ => None,
            })
            .collect();
        let trace = self.forward_inner(batch, parts, false)?;
        Ok(Self::stats(&trace.logits, &batch.labels))
    }

    /// Per-sample logits, without recording.
    pub fn logits(&self, batch: &Batch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let parts = self
            .tables
            .iter()
            .zip(&batch.sparse)
            .map(|(t, sparse)| match t {
                Embedding::Tt { cache: Some(c), .. } => Some(c.partition(sparse)),
                _ => None,
            })
            .collect();
        Ok(self.forward_inner(batch, parts, false)?.logits)
    }

    /// Forward and backward for one batch. Records cache frequencies and
    /// TT lookup counts; parameters are left unchanged.
    pub fn loss_and_gradients(&mut self, batch: &Batch) -> Result<(BatchStats, Gradients<T>)> {
        self.check_batch(batch)?;
        let mut parts = Vec::with_capacity(self.tables.len());
        for (t, sparse) in self.tables.iter_mut().zip(&batch.sparse) {
            parts.push(match t {
                Embedding::Tt { cache: Some(c), .. } => Some(c.record_and_partition(sparse)),
                _ => None,
            });
        }
        let trace = self.forward_inner(batch, parts, true)?;
        let stats = Self::stats(&trace.logits, &batch.labels);

        let b = batch.len();
        let grad_logits: Vec<T> = trace
            .logits
            .iter()
            .zip(&batch.labels)
            .map(|(&z, &y)| T::from_f64((sigmoid(z) - y) / b as f64))
            .collect();
        let mut top_grads = MlpGrads::zeros(&self.top);
        let grad_z = self.top.backward(
            &trace.top,
            &Matrix::from_vec(b, 1, grad_logits),
            &mut top_grads,
        );
        let (grad_bottom_out, grad_pooled) = self.interact_backward(&trace, &grad_z);
        let mut bottom_grads = MlpGrads::zeros(&self.bottom);
        self.bottom
            .backward(&trace.bottom, &grad_bottom_out, &mut bottom_grads);

        let n = self.config.emb_dim;
        let mut table_grads = Vec::with_capacity(self.tables.len());
        for (((table, sparse), tt), g) in self
            .tables
            .iter_mut()
            .zip(&batch.sparse)
            .zip(&trace.tables)
            .zip(&grad_pooled)
        {
            table_grads.push(match (table, tt) {
                (Embedding::Dense { .. }, _) => {
                    let mut rows: BTreeMap<u64, Vec<T>> = BTreeMap::new();
                    for bag in 0..sparse.num_bags() {
                        for p in sparse.bag_range(bag) {
                            let coef = T::from_f64(sparse.coefficient(bag, p));
                            let acc = rows
                                .entry(sparse.indices()[p])
                                .or_insert_with(|| vec![T::zero(); n]);
                            for (a, &gv) in acc.iter_mut().zip(g.row(bag)) {
                                *a += coef * gv;
                            }
                        }
                    }
                    TableGrads::Dense(rows)
                }
                (
                    Embedding::Tt {
                        table,
                        cache,
                        tt_lookups,
                    },
                    TableTrace::Tt { part, ctx },
                ) => {
                    let tt_batch: &IndexBatch = part.as_ref().map_or(sparse, |p| &p.tt);
                    let cores = match ctx {
                        Some(ctx) => {
                            *tt_lookups += tt_batch.len() as u64;
                            Some(backward_bags(table, tt_batch, ctx, g, &self.bag_cfg)?)
                        }
                        None => None,
                    };
                    let cached = match (cache, part) {
                        (Some(c), Some(p)) if !p.cached.is_empty() => {
                            Some(c.slot_gradients(&p.cached, g)?)
                        }
                        _ => None,
                    };
                    TableGrads::Tt { cores, cached }
                }
                (Embedding::Tt { .. }, TableTrace::Dense) => {
                    unreachable!("trace kinds follow table kinds")
                }
            });
        }
        Ok((
            stats,
            Gradients {
                bottom: bottom_grads,
                top: top_grads,
                tables: table_grads,
            },
        ))
    }

    pub fn apply(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        self.bottom.sgd_step(&grads.bottom, lr);
        self.top.sgd_step(&grads.top, lr);
        let n = self.config.emb_dim;
        for (table, g) in self.tables.iter_mut().zip(&grads.tables) {
            match (table, g) {
                (Embedding::Dense { weight, .. }, TableGrads::Dense(rows)) => {
                    for (&r, gr) in rows {
                        let r = r as usize;
                        for (w, &gv) in weight[r * n..(r + 1) * n].iter_mut().zip(gr) {
                            *w -= lr * gv;
                        }
                    }
                }
                (Embedding::Tt { table, cache, .. }, TableGrads::Tt { cores, cached }) => {
                    if let Some(cores) = cores {
                        sgd_step(table, cores, lr)?;
                    }
                    if let (Some(cache), Some(cached)) = (cache, cached) {
                        cache.cached_sgd_update(cached, lr)?;
                    }
                }
                _ => {
                    return Err(HarnessError::InvalidConfig(
                        "gradient kinds do not match tables".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// One SGD step; returns the pre-update batch statistics.
    pub fn step(&mut self, batch: &Batch, lr: f64) -> Result<BatchStats> {
        let (stats, grads) = self.loss_and_gradients(batch)?;
        self.apply(&grads, T::from_f64(lr))?;
        Ok(stats)
    }

    /// Named mutable views of every trainable MLP, dense-table and TT-core
    /// parameter, in a fixed order.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        for (prefix, mlp) in [("bottom", &mut self.bottom), ("top", &mut self.top)] {
            for (i, layer) in mlp.layers.iter_mut().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), &mut layer.weight));
                out.push((format!("{prefix}.{i}.bias"), &mut layer.bias));
            }
        }
        for (t, table) in self.tables.iter_mut().enumerate() {
            match table {
                Embedding::Dense { weight, .. } => out.push((format!("emb{t}.weight"), weight)),
                Embedding::Tt { table, .. } => {
                    for (k, core) in table.cores_mut().iter_mut().enumerate() {
                        out.push((format!("emb{t}.core{k}"), core));
                    }
                }
            }
        }
        out
    }

    /// Gradients laid out like [`Self::parameters_mut`], with sparse parts
    /// expanded to full size. Cached-row gradients are not included.
    pub fn dense_gradients(&self, grads: &Gradients<T>) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        for (prefix, g) in [("bottom", &grads.bottom), ("top", &grads.top)] {
            for (i, layer) in g.layers.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), layer.weight.clone()));
                out.push((format!("{prefix}.{i}.bias"), layer.bias.clone()));
            }
        }
        let n = self.config.emb_dim;
        for (t, (table, g)) in self.tables.iter().zip(&grads.tables).enumerate() {
            match (table, g) {
                (Embedding::Dense { weight, .. }, TableGrads::Dense(rows)) => {
                    let mut full = vec![T::zero(); weight.len()];
                    for (&r, gr) in rows {
                        full[r as usize * n..(r as usize + 1) * n].copy_from_slice(gr);
                    }
                    out.push((format!("emb{t}.weight"), full));
                }
                (Embedding::Tt { table, .. }, TableGrads::Tt { cores, .. }) => {
                    for k in 0..table.tt_dim() {
                        let g = cores.as_ref().map_or_else(
                            || vec![T::zero(); table.core(k).len()],
                            |c| c.core(k).to_vec(),
                        );
                        out.push((format!("emb{t}.core{k}"), g));
                    }
                }
                _ => unreachable!("gradient kinds follow table kinds"),
            }
        }
        out
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.meta.insert(
            "model_config".into(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        c.meta.insert("dtype".into(), T::DTYPE.name().into());
        for (prefix, mlp) in [("bottom", &self.bottom), ("top", &self.top)] {
            for (i, layer) in mlp.layers.iter().enumerate() {
                c.push_values(
                    format!("{prefix}.{i}.weight"),
                    vec![layer.out_dim, layer.in_dim],
                    &layer.weight,
                )?;
                c.push_values(
                    format!("{prefix}.{i}.bias"),
                    vec![layer.out_dim],
                    &layer.bias,
                )?;
            }
        }
        let n = self.config.emb_dim;
        for (t, table) in self.tables.iter().enumerate() {
            match table {
                Embedding::Dense { rows, weight } => {
                    c.push_values(format!("emb{t}.weight"), vec![*rows as usize, n], weight)?;
                }
                Embedding::Tt { table, cache, .. } => {
                    c.push_table(table)?;
                    if let Some(cache) = cache {
                        let snap = cache.snapshot();
                        let ids: Vec<f64> = snap.iter().map(|(r, _)| *r as f64).collect();
                        let values: Vec<T> =
                            snap.iter().flat_map(|(_, v)| v.iter().copied()).collect();
                        c.push_array(
                            format!("emb{t}.cache.rows"),
                            vec![ids.len()],
                            ArrayData::F64(ids),
                        )?;
                        c.push_values(
                            format!("emb{t}.cache.values"),
                            vec![snap.len(), n],
                            &values,
                        )?;
                        c.meta.insert(
                            format!("emb{t}.cache.capacity"),
                            cache.capacity().to_string(),
                        );
                    }
                }
            }
        }
        Ok(c)
    }

    /// Rebuild a model from [`Self::to_checkpoint`] output. Cache frequency
    /// counts are not persisted; a restored cache starts active with its rows.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let bad = |m: String| HarnessError::InvalidConfig(format!("checkpoint: {m}"));
        let config: ModelConfig = serde_json::from_str(
            c.meta
                .get("model_config")
                .ok_or_else(|| bad("missing model_config".into()))?,
        )
        .map_err(|e| bad(e.to_string()))?;
        let mut model = Self::new(&config, &TrainConfig::default())?;
        let load = |name: &str, dst: &mut Vec<T>| -> Result<()> {
            let v = c.values::<T>(name)?;
            if v.len() != dst.len() {
                return Err(bad(format!(
                    "{name} has {} values, expected {}",
                    v.len(),
                    dst.len()
                )));
            }
            *dst = v;
            Ok(())
        };
        for (prefix, mlp) in [("bottom", &mut model.bottom), ("top", &mut model.top)] {
            for (i, layer) in mlp.layers.iter_mut().enumerate() {
                load(&format!("{prefix}.{i}.weight"), &mut layer.weight)?;
                load(&format!("{prefix}.{i}.bias"), &mut layer.bias)?;
            }
        }
        let n = config.emb_dim;
        for (t, table) in model.tables.iter_mut().enumerate() {
            match table {
                Embedding::Dense { weight, .. } => load(&format!("emb{t}.weight"), weight)?,
                Embedding::Tt { table, cache, .. } => {
                    *table = c.table(&format!("emb{t}"))?;
                    if cache.is_some() {
                        let ids = c.values::<f64>(&format!("emb{t}.cache.rows"))?;
                        let values = c.values::<T>(&format!("emb{t}.cache.values"))?;
                        let capacity: usize = c
                            .meta
                            .get(&format!("emb{t}.cache.capacity"))
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad(format!("emb{t} cache capacity missing")))?;
                        if values.len() != ids.len() * n {
                            return Err(bad(format!("emb{t} cache values do not match row ids")));
                        }
                        let rows: Vec<(u64, Vec<T>)> = ids
                            .iter()
                            .zip(values.chunks(n))
                            .map(|(&r, v)| (r as u64, v.to_vec()))
                            .collect();
                        *cache = Some(LfuCache::restore(capacity, n, &rows)?);
                    }
                }
            }
        }
        Ok(model)
    }
}

/// Random micro-batch helper for tests and benchmarks: `P` uniform rows per sample.
pub fn uniform_bags<R: Rng + ?Sized>(
    rng: &mut R,
    rows: u64,
    samples: usize,
    pooling: usize,
) -> IndexBatch {
    let bags: Vec<Vec<u64>> = (0..samples)
        .map(|_| (0..pooling).map(|_| rng.random_range(0..rows)).collect())
        .collect();
    IndexBatch::from_bags(&bags, ttrec_core::Pooling::Sum)
}
