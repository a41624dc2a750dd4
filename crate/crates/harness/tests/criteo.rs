use std::io::Cursor;

use ttrec_harness::criteo::{
    hash_token, ingest_criteo_csv, parse_criteo_line, CriteoReader, CriteoSource,
    CATEGORICAL_COLUMNS, DENSE_COLUMNS, FIELDS,
};
use ttrec_harness::{DataSource, HarnessError, RunConfig, TrainOptions};

const SAMPLE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/criteo_sample.tsv");

fn row(label: &str, dense: &[&str], cat: &[&str]) -> String {
    let mut f = vec![label.to_string()];
    f.extend((0..DENSE_COLUMNS).map(|i| dense.get(i).copied().unwrap_or("").to_string()));
    f.extend((0..CATEGORICAL_COLUMNS).map(|i| cat.get(i).copied().unwrap_or("").to_string()));
    f.join("\t")
}

#[test]
fn forty_field_row_gives_one_record() {
    let line = row("1", &["3", "0"], &["abc", "def"]);
    assert_eq!(line.split('\t').count(), FIELDS);
    let r = parse_criteo_line(&line, 1, &[1000; CATEGORICAL_COLUMNS]).unwrap();
    assert_eq!(r.label, 1.0);
    assert_eq!(r.dense[0], 4f64.ln());
    assert_eq!(r.dense[1], 0.0, "log(1 + 0)");
    assert!(r.dense[2..].iter().all(|&x| x == 0.0), "missing dense is 0");
    assert!(
        r.categorical[2..].iter().all(|&c| c == 0),
        "missing categorical is 0"
    );
    assert!(r.categorical[..2].iter().all(|&c| (1..1000).contains(&c)));
}

#[test]
fn hashing_is_deterministic() {
    let sizes = [97u64; CATEGORICAL_COLUMNS];
    let a = parse_criteo_line(&row("0", &[], &["tok", "tok"]), 1, &sizes).unwrap();
    let b = parse_criteo_line(&row("0", &[], &["tok", "tok"]), 2, &sizes).unwrap();
    assert_eq!(a.categorical, b.categorical);
    assert_eq!(a.categorical[0], hash_token(0, "tok", 97));
    assert_eq!(a.categorical[1], hash_token(1, "tok", 97));
}

#[test]
fn file_reader_skips_and_counts_malformed_rows() {
    let reader = ingest_criteo_csv(SAMPLE, &[1 << 10]).unwrap();
    let mut reader = reader;
    let mut n = 0;
    while let Some(r) = reader.next_record().unwrap() {
        assert!(r.label == 0.0 || r.label == 1.0);
        assert!(r.dense.iter().all(|x| x.is_finite() && *x >= 0.0));
        n += 1;
    }
    assert_eq!(n, 40);
    assert_eq!(reader.skipped(), 2);
}

#[test]
fn wrong_column_count_is_a_hard_error_with_line_number() {
    let text = format!("{}\n{}\n1\t2\t3\n", row("0", &[], &[]), row("1", &[], &[]));
    let mut reader = CriteoReader::new(Cursor::new(text), &[100]).unwrap();
    assert!(reader.next_record().unwrap().is_some());
    assert!(reader.next_record().unwrap().is_some());
    match reader.next_record() {
        Err(HarnessError::CriteoColumns {
            line: 3, found: 3, ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn comma_separated_file_reads_the_same() {
    let tsv = std::fs::read_to_string(SAMPLE).unwrap();
    let csv = tsv.replace('\t', ",");
    let a: Vec<_> = CriteoReader::new(Cursor::new(tsv), &[500])
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let b: Vec<_> = CriteoReader::new(Cursor::new(csv), &[500])
        .unwrap()
        .map(Result::unwrap)
        .collect();
    assert_eq!(a, b);
}

#[test]
fn source_cycles_and_feeds_training() {
    let mut src = CriteoSource::new(SAMPLE, &[64], 4, 16, 1.0, 0).unwrap();
    for _ in 0..5 {
        let b = src.next_batch().unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(b.dense.cols(), DENSE_COLUMNS);
        assert!(b
            .sparse
            .iter()
            .all(|s| s.offsets() == (0..=16).collect::<Vec<_>>().as_slice()));
    }

    let text = format!(
        r#"
[model]
dense_features = 13
[tables]
rows = [64, 64, 64, 64]
[train]
iterations = 20
batch_size = 8
lr = 0.05
[data]
source = "criteo"
path = "{SAMPLE}"
hash_size = 64
"#
    );
    let cfg = RunConfig::parse(&text).unwrap();
    let (_, metrics) = ttrec_harness::run::<f32>(&cfg, TrainOptions::default()).unwrap();
    assert_eq!(metrics.records.len(), 20);
    assert!(metrics.records.iter().all(|r| r.loss.is_finite()));
}

#[test]
fn table_smaller_than_hash_space_is_rejected() {
    let text = format!(
        "[model]\ndense_features = 13\n[tables]\nrows = 10\n[data]\nsource = \"criteo\"\npath = \"{SAMPLE}\"\nhash_size = 64\n"
    );
    let cfg = RunConfig::parse(&text).unwrap();
    assert!(matches!(
        ttrec_harness::run::<f32>(&cfg, TrainOptions::default()),
        Err(HarnessError::InvalidConfig(_))
    ));
}
