use ttrec_harness::bench::{
    bench_cache_bypass, bench_pooling, summarize, write_bench_csv, BenchConfig, BENCH_HEADER,
    MIN_REPS,
};

fn small() -> BenchConfig {
    BenchConfig {
        rows: 10_000,
        batch_size: 16,
        warmup: 1,
        ..BenchConfig::default()
    }
}

#[test]
fn one_row_per_pooling_and_rank() {
    let rows = bench_pooling(&small(), &[1, 4], &[2, 4]).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.reps, MIN_REPS);
        assert!(r.us_per_sample > 0.0 && r.us_per_lookup > 0.0);
        let ratio = r.us_per_sample / r.us_per_lookup;
        assert!((ratio - r.pooling as f64).abs() < 1e-9 * ratio);
    }
    let mut csv = Vec::new();
    write_bench_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], BENCH_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
}

#[test]
fn too_few_reps_is_rejected() {
    let cfg = BenchConfig {
        reps: MIN_REPS - 1,
        ..small()
    };
    assert!(bench_pooling(&cfg, &[1], &[2]).is_err());
}

#[test]
fn median_of_means_ignores_one_outlier_group() {
    let mut xs = vec![1.0; 30];
    xs[0] = 1000.0;
    let s = summarize(&xs, 5);
    assert_eq!(s.median_of_means, 1.0);
    assert!(s.mean > 30.0);
}

#[test]
fn fully_cached_stream_skips_tt_cores() {
    let r = bench_cache_bypass(5_000, 4, 20, 10, 1).unwrap();
    assert_eq!(r.steps, 10);
    assert_eq!(r.tt_lookups_active, 0);
    assert_eq!(r.hit_rate, 1.0);
}
