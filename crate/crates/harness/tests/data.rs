use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttrec_harness::data::{generalized_harmonic, Prefetch};
use ttrec_harness::{
    generate_zipfian_batch, DataSource, RowSampler, RunConfig, SyntheticSource, Teacher,
};

#[test]
fn zipf_top_rank_frequency_matches_harmonic_oracle() {
    let (rows, s, n) = (10_000u64, 1.05, 1_000_000u64);
    let sampler = RowSampler::new(rows, s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let top = (0..n)
        .filter(|_| sampler.sample_rank(&mut rng) == 0)
        .count() as f64;
    let p = 1.0 / generalized_harmonic(rows, s);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!(
        (top / n as f64 - p).abs() <= 3.0 * se,
        "{} vs {p} (se {se})",
        top / n as f64
    );
}

#[test]
fn zipf_rank_k_frequency_follows_power_law() {
    let (rows, s, n) = (1000u64, 1.2, 1_000_000u64);
    let sampler = RowSampler::new(rows, s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = vec![0u64; rows as usize];
    for _ in 0..n {
        counts[sampler.sample_rank(&mut rng) as usize] += 1;
    }
    let h = generalized_harmonic(rows, s);
    for k in [1u64, 2, 5, 10] {
        let p = (k as f64).powf(-s) / h;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let f = counts[k as usize - 1] as f64 / n as f64;
        assert!((f - p).abs() <= 3.0 * se, "rank {k}: {f} vs {p}");
    }
}

#[test]
fn zero_exponent_is_uniform() {
    let (rows, n) = (10u64, 1_000_000u64);
    let sampler = RowSampler::new(rows, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = vec![0u64; rows as usize];
    for _ in 0..n {
        counts[sampler.sample(&mut rng) as usize] += 1;
    }
    let p = 1.0 / rows as f64;
    let se = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * se, "row {i}: {c}");
    }
}

#[test]
fn pooling_one_gives_unit_offsets() {
    let samplers: Vec<RowSampler> = [100u64, 1000]
        .iter()
        .map(|&r| RowSampler::new(r, 1.05).unwrap())
        .collect();
    let teacher = Teacher::new(1, 3, &samplers, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = generate_zipfian_batch(&mut rng, &samplers, &teacher, 32, 1);
    for sparse in &batch.sparse {
        assert_eq!(sparse.offsets(), (0..=32).collect::<Vec<_>>().as_slice());
    }
    let batch = generate_zipfian_batch(&mut rng, &samplers, &teacher, 8, 10);
    for (sparse, s) in batch.sparse.iter().zip(&samplers) {
        assert_eq!(
            sparse.offsets(),
            (0..=8).map(|i| i * 10).collect::<Vec<_>>().as_slice()
        );
        assert!(sparse.indices().iter().all(|&i| i < s.rows()));
    }
    assert!(batch.labels.iter().all(|&y| y == 0.0 || y == 1.0));
}

#[test]
fn labels_agree_with_the_teacher_and_respect_the_margin() {
    let cfg = RunConfig::default();
    let ttrec_harness::DataConfig::Synthetic(syn) = &cfg.data else {
        unreachable!()
    };
    let mut src = SyntheticSource::new(&cfg.model, syn, 256, 3).unwrap();
    let batch = src.next_batch().unwrap();
    for s in 0..batch.len() {
        let bags: Vec<&[u64]> = batch
            .sparse
            .iter()
            .map(|b| &b.indices()[b.bag_range(s)])
            .collect();
        let z = src
            .teacher()
            .logit(batch.dense.row(s), &bags, syn.pooling_mode);
        assert!(z.abs() >= syn.margin);
        assert_eq!(batch.labels[s], if z > 0.0 { 1.0 } else { 0.0 });
    }
    let pos = batch.labels.iter().sum::<f64>() / batch.len() as f64;
    assert!((0.2..0.8).contains(&pos), "positive rate {pos}");
}

#[test]
fn negative_downsampling_shifts_the_label_mix() {
    let cfg = RunConfig::default();
    let ttrec_harness::DataConfig::Synthetic(syn) = &cfg.data else {
        unreachable!()
    };
    let rate = |keep: f64| {
        let mut syn = syn.clone();
        syn.negative_keep = keep;
        let mut src = SyntheticSource::new(&cfg.model, &syn, 4000, 3).unwrap();
        let b = src.next_batch().unwrap();
        b.labels.iter().sum::<f64>() / b.len() as f64
    };
    let (full, down) = (rate(1.0), rate(0.125));
    // Keeping 1/8 of negatives: p' = p / (p + (1 - p) / 8).
    let expected = full / (full + (1.0 - full) * 0.125);
    assert!((down - expected).abs() < 0.03, "{down} vs {expected}");
}

#[test]
fn held_out_stream_differs_but_shares_the_teacher() {
    let cfg = RunConfig::default();
    let ttrec_harness::DataConfig::Synthetic(syn) = &cfg.data else {
        unreachable!()
    };
    let mut train = SyntheticSource::new(&cfg.model, syn, 16, 3).unwrap();
    let mut held = train.held_out();
    assert_eq!(train.teacher().dense_weight, held.teacher().dense_weight);
    assert_ne!(train.next_batch().unwrap(), held.next_batch().unwrap());
}

#[test]
fn prefetch_yields_the_same_batches_in_order() {
    let cfg = RunConfig::default();
    let ttrec_harness::DataConfig::Synthetic(syn) = &cfg.data else {
        unreachable!()
    };
    let src = SyntheticSource::new(&cfg.model, syn, 8, 4).unwrap();
    let mut direct = src.clone();
    let mut pre = Prefetch::spawn(src, 5);
    for _ in 0..5 {
        assert_eq!(direct.next_batch().unwrap(), pre.next_batch().unwrap());
    }
    assert!(pre.next_batch().is_err());
    // Dropping with a producer still blocked on the queue must not hang.
    let early = Prefetch::spawn(direct, 1000);
    drop(early);
}
