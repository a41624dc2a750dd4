//! Criteo display-advertising records: a label, 13 integer features and 26
//! categorical tokens per line, tab or comma separated.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttrec_core::{IndexBatch, Matrix, Pooling};

use crate::data::{Batch, DataSource};
use crate::error::{HarnessError, Result};

pub const DENSE_COLUMNS: usize = 13;
pub const CATEGORICAL_COLUMNS: usize = 26;
pub const FIELDS: usize = 1 + DENSE_COLUMNS + CATEGORICAL_COLUMNS;

#[derive(Debug, Clone, PartialEq)]
pub struct CriteoRecord {
    pub label: f64,
    /// `log(1 + max(x, 0))`, 0 when missing.
    pub dense: [f64; DENSE_COLUMNS],
    /// Hashed token per column; 0 is reserved for missing values.
    pub categorical: [u64; CATEGORICAL_COLUMNS],
}

/// FNV-1a over the column number and the token, folded into `[1, hash_size)`.
pub fn hash_token(column: usize, token: &str, hash_size: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in (column as u32).to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    if hash_size <= 1 {
        0
    } else {
        1 + h % (hash_size - 1)
    }
}

/// One hash size per categorical column; a shorter list is padded with its
/// last value.
pub fn expand_hash_sizes(sizes: &[u64]) -> Result<Vec<u64>> {
    let Some(&last) = sizes.last().filter(|_| sizes.len() <= CATEGORICAL_COLUMNS) else {
        return Err(HarnessError::InvalidConfig(format!(
            "expected 1 to {CATEGORICAL_COLUMNS} hash sizes, got {}",
            sizes.len()
        )));
    };
    let mut out = sizes.to_vec();
    out.resize(CATEGORICAL_COLUMNS, last);
    if out.iter().any(|&s| s < 2) {
        return Err(HarnessError::InvalidConfig(
            "hash sizes must be >= 2".into(),
        ));
    }
    Ok(out)
}

/// Parse one line. `hash_sizes` holds one entry per categorical column.
pub fn parse_criteo_line(line: &str, line_no: usize, hash_sizes: &[u64]) -> Result<CriteoRecord> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let sep = if line.contains('\t') { '\t' } else { ',' };
    let fields: Vec<&str> = line.split(sep).collect();
    if fields.len() != FIELDS {
        return Err(HarnessError::CriteoColumns {
            line: line_no,
            expected: FIELDS,
            found: fields.len(),
        });
    }
    let malformed = |message: String| HarnessError::CriteoMalformed {
        line: line_no,
        message,
    };
    let label = match fields[0].trim() {
        "0" => 0.0,
        "1" => 1.0,
        other => return Err(malformed(format!("label '{other}' is not 0 or 1"))),
    };
    let mut dense = [0.0; DENSE_COLUMNS];
    for (i, (dst, raw)) in dense.iter_mut().zip(&fields[1..=DENSE_COLUMNS]).enumerate() {
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let x: f64 = raw.parse().map_err(|_| {
            malformed(format!(
                "dense column {} value '{raw}' is not a number",
                i + 1
            ))
        })?;
        if !x.is_finite() {
            return Err(malformed(format!(
                "dense column {} value '{raw}' is not finite",
                i + 1
            )));
        }
        *dst = x.max(0.0).ln_1p();
    }
    let mut categorical = [0u64; CATEGORICAL_COLUMNS];
    for (c, (dst, raw)) in categorical
        .iter_mut()
        .zip(&fields[1 + DENSE_COLUMNS..])
        .enumerate()
    {
        let raw = raw.trim();
        if !raw.is_empty() {
            let size = *hash_sizes.get(c).ok_or_else(|| {
                HarnessError::InvalidConfig(format!("no hash size for column {c}"))
            })?;
            *dst = hash_token(c, raw, size);
        }
    }
    Ok(CriteoRecord {
        label,
        dense,
        categorical,
    })
}

/// Streams records from a reader, skipping malformed rows and counting them.
pub struct CriteoReader<R> {
    lines: std::io::Lines<R>,
    hash_sizes: Vec<u64>,
    line_no: usize,
    skipped: usize,
}

impl<R: BufRead> CriteoReader<R> {
    pub fn new(reader: R, hash_sizes: &[u64]) -> Result<Self> {
        Ok(Self {
            lines: reader.lines(),
            hash_sizes: expand_hash_sizes(hash_sizes)?,
            line_no: 0,
            skipped: 0,
        })
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// `Ok(None)` at end of input; a wrong column count is returned as an error.
    pub fn next_record(&mut self) -> Result<Option<CriteoRecord>> {
        for line in self.lines.by_ref() {
            let line = line?;
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            match parse_criteo_line(&line, self.line_no, &self.hash_sizes) {
                Ok(r) => return Ok(Some(r)),
                Err(HarnessError::CriteoMalformed { line, message }) => {
                    self.skipped += 1;
                    log::warn!("skipping criteo line {line}: {message}");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }
}

impl<R: BufRead> Iterator for CriteoReader<R> {
    type Item = Result<CriteoRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

pub fn ingest_criteo_csv(
    path: impl AsRef<Path>,
    hash_sizes: &[u64],
) -> Result<CriteoReader<BufReader<File>>> {
    CriteoReader::new(BufReader::new(File::open(path)?), hash_sizes)
}

/// Batches from a Criteo file, one lookup per table, cycling over the file.
/// The first `tables` categorical columns feed the model's tables.
pub struct CriteoSource {
    path: PathBuf,
    hash_sizes: Vec<u64>,
    reader: CriteoReader<BufReader<File>>,
    tables: usize,
    batch_size: usize,
    negative_keep: f64,
    rng: ChaCha8Rng,
    batches: usize,
}

impl CriteoSource {
    pub fn new(
        path: impl AsRef<Path>,
        hash_sizes: &[u64],
        tables: usize,
        batch_size: usize,
        negative_keep: f64,
        seed: u64,
    ) -> Result<Self> {
        if tables == 0 || tables > CATEGORICAL_COLUMNS {
            return Err(HarnessError::InvalidConfig(format!(
                "criteo data feeds 1..={CATEGORICAL_COLUMNS} tables, model has {tables}"
            )));
        }
        if !(negative_keep > 0.0 && negative_keep <= 1.0) {
            return Err(HarnessError::InvalidConfig(format!(
                "negative_keep {negative_keep} outside (0, 1]"
            )));
        }
        let path = path.as_ref().to_path_buf();
        let reader = ingest_criteo_csv(&path, hash_sizes)?;
        Ok(Self {
            hash_sizes: reader.hash_sizes.clone(),
            path,
            reader,
            tables,
            batch_size,
            negative_keep,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batches: 0,
        })
    }

    pub fn hash_sizes(&self) -> &[u64] {
        &self.hash_sizes
    }

    pub fn skipped(&self) -> usize {
        self.reader.skipped()
    }

    fn next_kept(&mut self) -> Result<CriteoRecord> {
        let mut rewound = false;
        loop {
            match self.reader.next_record()? {
                Some(r) => {
                    if r.label == 0.0
                        && self.negative_keep < 1.0
                        && !self.rng.random_bool(self.negative_keep)
                    {
                        continue;
                    }
                    return Ok(r);
                }
                None if !rewound => {
                    let skipped = self.reader.skipped;
                    self.reader = ingest_criteo_csv(&self.path, &self.hash_sizes)?;
                    self.reader.skipped = skipped;
                    rewound = true;
                }
                None => return Err(HarnessError::Exhausted(self.batches)),
            }
        }
    }
}

impl DataSource for CriteoSource {
    fn next_batch(&mut self) -> Result<Batch> {
        let b = self.batch_size;
        let mut dense = Vec::with_capacity(b * DENSE_COLUMNS);
        let mut indices: Vec<Vec<u64>> = vec![Vec::with_capacity(b); self.tables];
        let mut labels = Vec::with_capacity(b);
        for _ in 0..b {
            let r = self.next_kept()?;
            dense.extend_from_slice(&r.dense);
            for (dst, &v) in indices.iter_mut().zip(&r.categorical) {
                dst.push(v);
            }
            labels.push(r.label);
        }
        self.batches += 1;
        let offsets: Vec<usize> = (0..=b).collect();
        let sparse = indices
            .into_iter()
            .map(|idx| IndexBatch::new(idx, offsets.clone(), None, Pooling::Sum))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Batch {
            dense: Matrix::from_vec(b, DENSE_COLUMNS, dense),
            sparse,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(label: &str, dense: &[&str], cat: &[&str], sep: &str) -> String {
        let mut f = vec![label.to_string()];
        f.extend((0..DENSE_COLUMNS).map(|i| dense.get(i).unwrap_or(&"").to_string()));
        f.extend((0..CATEGORICAL_COLUMNS).map(|i| cat.get(i).unwrap_or(&"").to_string()));
        f.join(sep)
    }

    #[test]
    fn parses_a_full_row() {
        let sizes = vec![1000; CATEGORICAL_COLUMNS];
        let r = parse_criteo_line(
            &line("1", &["3", "0", "-5"], &["abc", "68fd1e64"], "\t"),
            1,
            &sizes,
        )
        .unwrap();
        assert_eq!(r.label, 1.0);
        assert!((r.dense[0] - 4f64.ln()).abs() < 1e-15);
        assert_eq!(r.dense[1], 0.0);
        assert_eq!(r.dense[2], 0.0);
        assert_eq!(r.categorical[0], hash_token(0, "abc", 1000));
        assert!(r.categorical[0] >= 1 && r.categorical[0] < 1000);
        assert_eq!(r.categorical[2], 0);
    }

    #[test]
    fn comma_separated_rows_parse_too() {
        let sizes = vec![50; CATEGORICAL_COLUMNS];
        let r = parse_criteo_line(&line("0", &["1"], &["x"], ","), 1, &sizes).unwrap();
        assert_eq!(r.label, 0.0);
        assert_eq!(r.categorical[0], hash_token(0, "x", 50));
    }

    #[test]
    fn column_count_errors_carry_the_line() {
        let err = parse_criteo_line("1\t2\t3", 17, &[10; 26]).unwrap_err();
        assert!(matches!(
            err,
            HarnessError::CriteoColumns {
                line: 17,
                found: 3,
                ..
            }
        ));
    }

    #[test]
    fn same_token_other_column_hashes_independently() {
        let a: Vec<u64> = (0..26).map(|c| hash_token(c, "tok", 1 << 20)).collect();
        let distinct: std::collections::BTreeSet<_> = a.iter().collect();
        assert!(distinct.len() > 20);
    }
}
