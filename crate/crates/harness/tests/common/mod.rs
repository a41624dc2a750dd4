#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttrec_core::{IndexBatch, Matrix, Pooling};
use ttrec_harness::{Batch, Interaction, Model, ModelConfig, TableConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every dimension at most 4: one TT table, one dense table.
pub fn micro_config(interaction: Interaction, cache_pct: f64) -> ModelConfig {
    let mut tt = TableConfig::tt(16, 2);
    tt.tt_dim = 2;
    tt.row_factors = Some(vec![4, 4]);
    tt.cache_pct = cache_pct;
    ModelConfig {
        dense_features: 3,
        emb_dim: 4,
        tables: vec![tt, TableConfig::dense(4)],
        bottom_mlp: vec![4, 4],
        top_mlp: vec![3],
        interaction,
        micro_batch: 3,
        threads: 1,
    }
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    config: &ModelConfig,
    samples: usize,
    max_pool: usize,
    pooling: Pooling,
) -> Batch {
    let dense = Matrix::from_vec(
        samples,
        config.dense_features,
        (0..samples * config.dense_features)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    );
    let sparse = config
        .tables
        .iter()
        .map(|t| {
            let bags: Vec<Vec<u64>> = (0..samples)
                .map(|_| {
                    (0..rng.random_range(1..=max_pool))
                        .map(|_| rng.random_range(0..t.rows))
                        .collect()
                })
                .collect();
            IndexBatch::from_bags(&bags, pooling)
        })
        .collect();
    let labels = (0..samples)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    Batch {
        dense,
        sparse,
        labels,
    }
}

/// Zero biases put ReLU inputs exactly on the kink for samples whose hidden
/// activations all vanish; move them off it.
pub fn jitter_biases(model: &mut Model<f64>, seed: u64) {
    let mut r = rng(seed);
    for mlp in [&mut model.bottom, &mut model.top] {
        for layer in &mut mlp.layers {
            for b in &mut layer.bias {
                *b = r.random_range(0.1..0.3) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
            }
        }
    }
}

/// Worst relative Frobenius error between analytic and central-difference
/// gradients over all dense parameter groups.
pub fn fd_check(model: &mut Model<f64>, batch: &Batch) -> f64 {
    let (_, grads) = model.loss_and_gradients(batch).unwrap();
    let analytic = model.dense_gradients(&grads);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let names: Vec<(String, usize)> = model
        .parameters_mut()
        .iter()
        .map(|(n, p)| (n.clone(), p.len()))
        .collect();
    for (pi, (name, len)) in names.iter().enumerate() {
        let (aname, agrad) = &analytic[pi];
        assert_eq!(aname, name);
        let mut fd = vec![0.0; *len];
        for (i, fd_i) in fd.iter_mut().enumerate() {
            let orig = model.parameters_mut()[pi].1[i];
            model.parameters_mut()[pi].1[i] = orig + h;
            let up = model.evaluate(batch).unwrap().loss;
            model.parameters_mut()[pi].1[i] = orig - h;
            let down = model.evaluate(batch).unwrap().loss;
            model.parameters_mut()[pi].1[i] = orig;
            *fd_i = (up - down) / (2.0 * h);
        }
        let num: f64 = fd
            .iter()
            .zip(agrad)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(num / den);
    }
    worst
}
