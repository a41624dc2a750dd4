mod common;

use ttrec_core::Pooling;
use ttrec_harness::model::Model;
use ttrec_harness::{run, RunConfig, TableConfig, TrainConfig, TrainOptions};

fn toy(iterations: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.iterations = iterations;
    cfg.train.seed = seed;
    cfg
}

fn final_accuracy(cfg: &RunConfig) -> f64 {
    let (_, m) = run::<f32>(cfg, TrainOptions::default()).unwrap();
    m.final_accuracy().unwrap()
}

#[test]
fn zero_learning_rate_keeps_loss_constant_on_a_repeated_batch() {
    let cfg = common::micro_config(ttrec_harness::Interaction::Dot, 25.0);
    let train = TrainConfig::default();
    let mut model = Model::<f64>::new(&cfg, &train).unwrap();
    let batch = common::random_batch(&mut common::rng(3), &cfg, 16, 3, Pooling::Sum);
    let first = model.step(&batch, 0.0).unwrap().loss;
    model
        .cache_event(ttrec_core::CacheEvent::FinalizeWarmup)
        .unwrap();
    for _ in 0..20 {
        assert_eq!(model.step(&batch, 0.0).unwrap().loss, first);
    }
}

#[test]
fn zero_learning_rate_run_has_no_trend() {
    let mut cfg = toy(200, 1);
    cfg.train.lr = 0.0;
    let (_, m) = run::<f32>(&cfg, TrainOptions::default()).unwrap();
    let mean =
        |r: &[ttrec_harness::IterRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let (a, b) = m.records.split_at(100);
    assert!(
        (mean(a) - mean(b)).abs() < 0.05,
        "{} vs {}",
        mean(a),
        mean(b)
    );
}

#[test]
fn uncompressed_model_learns_the_planted_teacher() {
    let acc = final_accuracy(&toy(2000, 0));
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn tt_rank8_matches_uncompressed_accuracy() {
    let dense = toy(4000, 0);
    let mut tt = dense.clone();
    tt.model = tt.model.with_tt(8);
    let (a, b) = (final_accuracy(&dense), final_accuracy(&tt));
    assert!((a - b).abs() <= 0.01, "dense {a} tt {b}");
}

#[test]
fn cache_does_not_change_final_accuracy() {
    let mut plain = toy(4000, 0);
    plain.model = plain.model.with_tt(8);
    let mut cached = plain.clone();
    cached.model = cached.model.with_cache_pct(1.0);
    cached.train.refresh_period = 500;
    let (a, b) = (final_accuracy(&plain), final_accuracy(&cached));
    assert!((a - b).abs() <= 0.01, "no cache {a} cache {b}");
}

#[test]
fn metrics_are_deterministic_under_a_seed() {
    let mut cfg = toy(300, 9);
    cfg.model = cfg.model.with_tt(4).with_cache_pct(0.5);
    cfg.train.refresh_period = 50;
    let csv = |prefetch| {
        let (_, m) = run::<f32>(
            &cfg,
            TrainOptions {
                record_timing: false,
                prefetch,
            },
        )
        .unwrap();
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        out
    };
    let first = csv(false);
    assert_eq!(first, csv(false));
    assert_eq!(first, csv(true));
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("iter,loss,accuracy,hit_rate,ms_per_iter\n"));
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn timing_column_only_when_requested() {
    let cfg = toy(5, 0);
    let (_, m) = run::<f32>(
        &cfg,
        TrainOptions {
            record_timing: true,
            prefetch: false,
        },
    )
    .unwrap();
    assert!(m
        .records
        .iter()
        .all(|r| r.ms_per_iter.is_some_and(|t| t >= 0.0)));
    let (_, m) = run::<f32>(&cfg, TrainOptions::default()).unwrap();
    assert!(m.records.iter().all(|r| r.ms_per_iter.is_none()));
}

#[test]
fn compressing_more_tables_strictly_shrinks_the_model() {
    let train = TrainConfig::default();
    let mut cfg = RunConfig::default().model;
    let mut prev = Model::<f32>::new(&cfg, &train).unwrap().parameter_count();
    let mlp = {
        let m = Model::<f32>::new(&cfg, &train).unwrap();
        (m.bottom.parameter_count() + m.top.parameter_count()) as u64
    };
    assert_eq!(
        prev,
        mlp + cfg.tables.iter().map(|t| t.rows * 16).sum::<u64>()
    );
    for i in (0..cfg.tables.len()).rev() {
        cfg.tables[i] = TableConfig::tt(cfg.tables[i].rows, 8);
        let model = Model::<f32>::new(&cfg, &train).unwrap();
        let count = model.parameter_count();
        assert!(count < prev, "compressing table {i}: {count} >= {prev}");
        let expected: u64 = mlp
            + cfg
                .tables
                .iter()
                .map(|t| {
                    if t.use_tt {
                        ttrec_core::plan_shapes(t.rows, 16, t.tt_dim, t.rank, None, None)
                            .unwrap()
                            .parameter_count()
                    } else {
                        t.rows * 16
                    }
                })
                .sum::<u64>();
        assert_eq!(count, expected);
        prev = count;
    }
}

#[test]
fn model_checkpoint_round_trips_bit_exactly() {
    let mut cfg = toy(120, 4);
    cfg.model = cfg.model.with_tt(4);
    cfg.model.tables[0].cache_pct = 1.0;
    cfg.model.tables[3] = TableConfig::dense(100_000);
    cfg.train.refresh_period = 40;
    let (model, _) = run::<f32>(&cfg, TrainOptions::default()).unwrap();
    let ckpt = model.to_checkpoint().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ttrec");
    ckpt.save(&path).unwrap();
    let loaded = ttrec_core::Checkpoint::load(&path).unwrap();
    assert!(ckpt.bit_eq(&loaded));
    let restored = Model::<f32>::from_checkpoint(&loaded).unwrap();
    assert!(restored.to_checkpoint().unwrap().bit_eq(&ckpt));

    let batch = probe_batch(&cfg);
    assert_eq!(
        model.logits(&batch).unwrap(),
        restored.logits(&batch).unwrap()
    );
}

fn probe_batch(cfg: &RunConfig) -> ttrec_harness::Batch {
    use ttrec_harness::DataSource;
    let ttrec_harness::DataConfig::Synthetic(syn) = &cfg.data else {
        unreachable!()
    };
    ttrec_harness::SyntheticSource::new(&cfg.model, syn, 64, 77)
        .unwrap()
        .next_batch()
        .unwrap()
}

#[test]
fn divergence_is_reported() {
    let mut cfg = toy(200, 0);
    cfg.train.lr = 1e6;
    match run::<f32>(&cfg, TrainOptions::default()) {
        Err(ttrec_harness::HarnessError::Diverged { iter, .. }) => assert!(iter < 200),
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|(_, m)| m.final_loss())
        ),
    }
}
