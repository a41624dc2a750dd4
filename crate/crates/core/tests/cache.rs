mod common;

use std::collections::HashMap;

use common::*;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use ttrec_core::cache::hot_set_drift;
use ttrec_core::{
    backward_bags, forward_bags, CacheState, EmbeddingBagConfig, FreqTable, IndexBatch, LfuCache,
    Matrix, Pooling, TtTable,
};

/// Top-k rows by (count desc, row asc), by full sort.
fn sort_top_k(counts: &HashMap<u64, u64>, k: usize) -> Vec<u64> {
    let mut all: Vec<(u64, u64)> = counts.iter().map(|(&r, &c)| (r, c)).collect();
    all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    all.into_iter().take(k).map(|(r, _)| r).collect()
}

fn zipf_stream(seed: u64, rows: u64, s: f64, len: usize) -> Vec<u64> {
    let zipf = Zipf::new(rows as f64, s).unwrap();
    let mut rng = rng(seed);
    (0..len).map(|_| zipf.sample(&mut rng) as u64 - 1).collect()
}

fn table(seed: u64, rows: u64) -> TtTable<f32> {
    let plan = ttrec_core::plan_shapes(rows, 8, 3, 4, None, None).unwrap();
    random_table(&mut rng(seed), plan)
}

#[test]
fn warmup_set_matches_sorted_frequencies() {
    let rows = 10_000;
    let t = table(1, rows);
    for (seed, s) in [(2u64, 1.05f64), (3, 0.8), (4, 1.5)] {
        let stream = zipf_stream(seed, rows, s, 100_000);
        let mut cache = LfuCache::<f32>::new(50, 8);
        let mut counts = HashMap::new();
        for chunk in stream.chunks(1000) {
            let bags: Vec<Vec<u64>> = chunk.chunks(10).map(|c| c.to_vec()).collect();
            cache.record_and_partition(&IndexBatch::from_bags(&bags, Pooling::Sum));
        }
        for &r in &stream {
            *counts.entry(r).or_insert(0u64) += 1;
        }
        cache.warmup_finalize(&t).unwrap();
        let mut expected = sort_top_k(&counts, 50);
        expected.sort_unstable();
        assert_eq!(cache.cached_rows(), expected, "s={s}");
        for row in cache.cached_rows() {
            assert_eq!(
                cache.cached_value(row).unwrap(),
                &t.lookup_row(row).unwrap()[..]
            );
        }
    }
}

#[test]
fn freq_table_top_k_matches_sort_oracle() {
    let stream = zipf_stream(5, 50_000, 1.05, 100_000);
    let mut freq = FreqTable::new();
    let mut counts = HashMap::new();
    for &r in &stream {
        freq.increment(r);
        *counts.entry(r).or_insert(0u64) += 1;
    }
    for k in [1, 10, 100, 1000] {
        let top: Vec<u64> = freq.top_k(k).into_iter().map(|(r, _)| r).collect();
        assert_eq!(top, sort_top_k(&counts, k));
    }
    assert!(freq.load_factor() <= 0.7);
}

#[test]
fn routing_is_complete_over_random_batches() {
    let rows = 500;
    let t = table(6, rows);
    let mut cache = LfuCache::<f32>::new(40, 8);
    let mut rng = rng(7);
    for iter in 0..10_000 {
        if iter == 100 {
            cache.warmup_finalize(&t).unwrap();
        } else if iter > 100 && iter % 500 == 0 {
            cache.refresh(&t).unwrap();
        }
        let pooling = if rng.random_bool(0.5) {
            Pooling::Sum
        } else {
            Pooling::Mean
        };
        let skewed: u64 = if rng.random_bool(0.7) { 60 } else { rows };
        let (bags, weighted) = (rng.random_range(1..6), rng.random_bool(0.5));
        let batch = random_batch(&mut rng, skewed, bags, 6, weighted, pooling);
        let part = cache.record_and_partition(&batch);

        let slot_row: HashMap<usize, u64> = cache
            .cached_rows()
            .into_iter()
            .map(|r| (cache.slot_of(r).unwrap(), r))
            .collect();
        let mut routed: Vec<(usize, usize, u64, f64)> = Vec::new();
        for b in 0..part.cached.num_bags() {
            for i in part.cached.offsets[b]..part.cached.offsets[b + 1] {
                let row = slot_row[&part.cached.slots[i]];
                routed.push((
                    part.cached.positions[i],
                    b,
                    row,
                    part.cached.coefficients[i],
                ));
            }
        }
        for b in 0..part.tt.num_bags() {
            for p in part.tt.bag_range(b) {
                let w = part.tt.weights().unwrap()[p];
                routed.push((part.tt_positions[p], b, part.tt.indices()[p], w));
                assert!(
                    !cache.contains(part.tt.indices()[p]) || cache.state() == CacheState::WarmUp
                );
            }
        }
        routed.sort_by_key(|r| r.0);
        let original: Vec<(usize, usize, u64, f64)> = (0..batch.num_bags())
            .flat_map(|b| batch.bag_range(b).map(move |p| (p, b)))
            .map(|(p, b)| (p, b, batch.indices()[p], batch.coefficient(b, p)))
            .collect();
        assert_eq!(routed, original, "iteration {iter}");
        assert_eq!(part.tt.num_bags(), batch.num_bags());
    }
}

#[test]
fn evicted_row_is_readmitted_with_tt_value() {
    let t = table(8, 1000);
    let mut cache = LfuCache::<f32>::new(1, 8);
    let bag = |row: u64, times: usize| IndexBatch::from_bags(&[vec![row; times]], Pooling::Sum);
    cache.record_and_partition(&bag(3, 5));
    cache.warmup_finalize(&t).unwrap();
    assert_eq!(cache.cached_rows(), vec![3]);

    // learn something on row 3 while cached
    let part = cache.record_and_partition(&bag(3, 1));
    let grads = cache
        .slot_gradients(&part.cached, &Matrix::from_vec(1, 8, vec![1.0; 8]))
        .unwrap();
    cache.cached_sgd_update(&grads, 0.5).unwrap();
    assert_ne!(
        cache.cached_value(3).unwrap(),
        &t.lookup_row(3).unwrap()[..]
    );

    cache.record_and_partition(&bag(9, 20));
    let report = cache.refresh(&t).unwrap();
    assert_eq!((report.evicted, report.admitted), (vec![3], vec![9]));

    cache.record_and_partition(&bag(3, 30));
    cache.refresh(&t).unwrap();
    assert_eq!(cache.cached_rows(), vec![3]);
    assert_eq!(
        cache.cached_value(3).unwrap(),
        &t.lookup_row(3).unwrap()[..]
    );
}

#[test]
fn unchanged_frequencies_leave_cache_alone() {
    let t = table(9, 1000);
    let mut cache = LfuCache::<f32>::new(5, 8);
    cache.record_and_partition(&IndexBatch::from_bags(
        &[zipf_stream(10, 1000, 1.2, 500)],
        Pooling::Sum,
    ));
    cache.warmup_finalize(&t).unwrap();
    let before = cache.snapshot();
    let report = cache.refresh(&t).unwrap();
    assert!(report.admitted.is_empty() && report.evicted.is_empty());
    assert_eq!(cache.snapshot(), before);
}

#[test]
fn split_forward_equals_uncached_forward_after_admission() {
    let t = table(11, 5000);
    let mut rng = rng(12);
    let cfg = EmbeddingBagConfig::default();
    let mut cache = LfuCache::<f32>::new(30, 8);
    for _ in 0..20 {
        let stream = zipf_stream(rng.random(), 5000, 1.1, 64);
        cache.record_and_partition(&IndexBatch::from_bags(&[stream], Pooling::Sum));
    }
    cache.warmup_finalize(&t).unwrap();
    for round in 0..50 {
        let bags: Vec<Vec<u64>> = (0..16)
            .map(|_| zipf_stream(rng.random(), 5000, 1.1, 5))
            .collect();
        let pooling = if round % 2 == 0 {
            Pooling::Sum
        } else {
            Pooling::Mean
        };
        let batch = IndexBatch::from_bags(&bags, pooling);
        let part = cache.record_and_partition(&batch);
        assert!(!part.cached.is_empty() || round > 0);
        let mut split = cache.forward_cached(&part.cached).unwrap();
        let (tt_out, _) = forward_bags(&t, &part.tt, &cfg, false).unwrap();
        for (a, b) in split.as_mut_slice().iter_mut().zip(tt_out.as_slice()) {
            *a += b;
        }
        let (full, _) = forward_bags(&t, &batch, &cfg, false).unwrap();
        let err = rel_err(to_f64(&split).as_slice(), to_f64(&full).as_slice());
        assert!(err <= 1e-6, "round {round}: {err:e}");
        if round % 10 == 9 {
            cache.refresh(&t).unwrap();
        }
    }
}

#[test]
fn cached_rows_contribute_nothing_to_core_gradients() {
    let plan = ttrec_core::plan_shapes(200, 4, 2, 3, Some(&[10, 20]), Some(&[2, 2])).unwrap();
    let t: TtTable<f64> = random_table(&mut rng(13), plan);
    let cfg = EmbeddingBagConfig::default();
    let mut cache = LfuCache::<f64>::new(2, 4);
    cache.record_and_partition(&IndexBatch::from_bags(
        &[vec![5, 5, 5, 17, 17]],
        Pooling::Sum,
    ));
    cache.warmup_finalize(&t).unwrap();

    let batch = IndexBatch::from_bags(&[vec![5, 40], vec![17, 5, 99]], Pooling::Mean);
    let part = cache.record_and_partition(&batch);
    let g = Matrix::from_vec(2, 4, vec![1.0, -2.0, 0.5, 3.0, 0.25, 1.0, -1.0, 2.0]);
    let (_, ctx) = forward_bags(&t, &part.tt, &cfg, false).unwrap();
    let from_partition = backward_bags(&t, &part.tt, &ctx, &g, &cfg).unwrap();

    // oracle: same bags with cached rows dropped but mean factors of the full bags kept
    let tt_only = IndexBatch::new(
        vec![40, 99],
        vec![0, 1, 2],
        Some(vec![0.5, 1.0 / 3.0]),
        Pooling::Sum,
    )
    .unwrap();
    let (_, ctx) = forward_bags(&t, &tt_only, &cfg, false).unwrap();
    let expected = backward_bags(&t, &tt_only, &ctx, &g, &cfg).unwrap();
    for k in 0..2 {
        assert!(rel_err(from_partition.core(k), expected.core(k)) <= 1e-15);
    }
}

#[test]
fn cached_update_matches_dense_sgd() {
    let t: TtTable<f64> = random_table(
        &mut rng(14),
        ttrec_core::plan_shapes(100, 4, 2, 2, None, None).unwrap(),
    );
    let mut cache = LfuCache::<f64>::new(1, 4);
    cache.record_and_partition(&IndexBatch::from_bags(&[vec![42]], Pooling::Sum));
    cache.warmup_finalize(&t).unwrap();

    // dense oracle: loss = <g, w_42 * 2 + w_42 * 3> across two bags, so dL/dw_42 = 2 g0 + 3 g1
    let batch = IndexBatch::new(
        vec![42, 42],
        vec![0, 1, 2],
        Some(vec![2.0, 3.0]),
        Pooling::Sum,
    )
    .unwrap();
    let part = cache.record_and_partition(&batch);
    let g = Matrix::from_vec(2, 4, vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 0.5, -0.5]);
    let grads = cache.slot_gradients(&part.cached, &g).unwrap();
    let before = cache.cached_value(42).unwrap().to_vec();

    cache.cached_sgd_update(&grads, 0.0).unwrap();
    assert_eq!(cache.cached_value(42).unwrap(), &before[..]);

    cache.cached_sgd_update(&grads, 0.1).unwrap();
    let after = cache.cached_value(42).unwrap();
    for j in 0..4 {
        let dense_grad = 2.0 * g.get(0, j) + 3.0 * g.get(1, j);
        assert!((after[j] - (before[j] - 0.1 * dense_grad)).abs() <= 1e-15);
    }
    assert_eq!(cache.hit_rate().unwrap(), 1.0);

    let mut bogus = grads.clone();
    bogus.rows.insert(7, vec![0.0; 4]);
    assert!(cache.cached_sgd_update(&bogus, 0.1).is_err());
}

#[test]
fn hot_set_drift_against_window_oracle() {
    let rows = 100_000;
    let k = 100;
    let stream = zipf_stream(15, rows, 1.05, 200_000);
    let mut freq = FreqTable::new();
    let mut counts = HashMap::new();
    let mut prev: Option<Vec<u64>> = None;
    let mut drifts = Vec::new();
    for window in stream.chunks(20_000) {
        for &r in window {
            freq.increment(r);
            *counts.entry(r).or_insert(0u64) += 1;
        }
        let top: Vec<u64> = freq.top_k(k).into_iter().map(|(r, _)| r).collect();
        let oracle = sort_top_k(&counts, k);
        assert_eq!(top, oracle);
        if let Some(p) = &prev {
            let drift = hot_set_drift(p, &top, k);
            let changed = oracle.iter().filter(|r| !p.contains(r)).count();
            assert_eq!(drift, (2 * changed) as f64 / (2 * k) as f64);
            drifts.push(drift);
        }
        prev = Some(top);
    }
    assert_eq!(drifts.len(), 9);
    let head: f64 = drifts[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = drifts[6..].iter().sum::<f64>() / 3.0;
    assert!(tail <= head, "drift should settle: {drifts:?}");
    assert_eq!(hot_set_drift(&[1, 2, 3], &[3, 2, 1], 3), 0.0);
}

#[test]
fn partition_before_activation_routes_everything_to_tt() {
    let mut cache = LfuCache::<f32>::new(10, 8);
    let batch = IndexBatch::from_bags(&[vec![1, 2], vec![3]], Pooling::Mean);
    let part = cache.record_and_partition(&batch);
    assert!(part.cached.is_empty());
    assert_eq!(part.tt.indices(), batch.indices());
    assert!(cache.hit_rate().is_err());
}
