//! Shape planning: factor `(num_rows, emb_dim)` into per-core dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest max/min spread the automatic row factorization will consider.
pub const MAX_ROW_FACTOR_SPREAD: usize = 4;

/// Factorization of an `num_rows x emb_dim` table into `d` TT-cores.
///
/// Core `k` has shape `(ranks[k], row_factors[k], col_factors[k], ranks[k + 1])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapePlan {
    pub num_rows: u64,
    pub emb_dim: usize,
    pub row_factors: Vec<usize>,
    pub col_factors: Vec<usize>,
    pub ranks: Vec<usize>,
}

/// Embedding-table sizes and hand-picked TT row factors for the seven
/// largest categorical features of the Criteo Kaggle display-ads dataset.
/// All use `emb_dim = 16` with column factors `[2, 2, 4]`.
pub const KAGGLE_TABLES: [(u64, [usize; 3]); 7] = [
    (10_131_227, [200, 220, 250]),
    (8_351_593, [200, 200, 209]),
    (7_046_547, [200, 200, 200]),
    (5_461_306, [166, 175, 188]),
    (2_202_608, [125, 130, 136]),
    (286_181, [53, 72, 75]),
    (142_572, [50, 52, 55]),
];

pub const KAGGLE_EMB_DIM: usize = 16;
pub const KAGGLE_COL_FACTORS: [usize; 3] = [2, 2, 4];

impl ShapePlan {
    pub fn tt_dim(&self) -> usize {
        self.row_factors.len()
    }

    /// `(R_{k-1}, m_k, n_k, R_k)` for core `k` (0-based).
    pub fn core_shape(&self, k: usize) -> [usize; 4] {
        [
            self.ranks[k],
            self.row_factors[k],
            self.col_factors[k],
            self.ranks[k + 1],
        ]
    }

    pub fn core_len(&self, k: usize) -> usize {
        self.core_shape(k).iter().product()
    }

    /// `prod(m_k)`; at least `num_rows`.
    pub fn padded_rows(&self) -> u64 {
        self.row_factors.iter().map(|&m| m as u64).product()
    }

    pub fn parameter_count(&self) -> u64 {
        (0..self.tt_dim()).map(|k| self.core_len(k) as u64).sum()
    }

    pub fn dense_parameter_count(&self) -> u64 {
        self.num_rows * self.emb_dim as u64
    }

    /// `M * N / parameter_count`, rounded half away from zero.
    pub fn memory_reduction(&self) -> u64 {
        let dense = self.dense_parameter_count() as u128;
        let params = self.parameter_count() as u128;
        ((2 * dense + params) / (2 * params)) as u64
    }

    /// `prod_{j <= k} n_j`: rows of the partial product after `k + 1` cores.
    pub fn partial_cols(&self, k: usize) -> usize {
        self.col_factors[..=k].iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.row_factors.len();
        if d < 2 {
            return Err(Error::InvalidShape(format!("tt_dim must be >= 2, got {d}")));
        }
        if self.col_factors.len() != d {
            return Err(Error::InvalidShape(format!(
                "{} column factors for tt_dim {d}",
                self.col_factors.len()
            )));
        }
        if self.ranks.len() != d + 1 {
            return Err(Error::InvalidShape(format!(
                "{} ranks for tt_dim {d}, expected {}",
                self.ranks.len(),
                d + 1
            )));
        }
        if self.num_rows == 0 || self.emb_dim == 0 {
            return Err(Error::InvalidShape(
                "num_rows and emb_dim must be positive".into(),
            ));
        }
        if self
            .row_factors
            .iter()
            .chain(&self.col_factors)
            .chain(&self.ranks)
            .any(|&f| f == 0)
        {
            return Err(Error::InvalidShape(
                "factors and ranks must be positive".into(),
            ));
        }
        if self.ranks[0] != 1 || self.ranks[d] != 1 {
            return Err(Error::InvalidShape("boundary ranks must be 1".into()));
        }
        let padded = checked_product(&self.row_factors)
            .ok_or_else(|| Error::InvalidShape("row factor product overflows".into()))?;
        if padded < self.num_rows as u128 {
            return Err(Error::InvalidShape(format!(
                "row factors {:?} cover {padded} rows, table has {}",
                self.row_factors, self.num_rows
            )));
        }
        if padded > u64::MAX as u128 / 2 {
            return Err(Error::InvalidShape("row factor product too large".into()));
        }
        let cols = checked_product(&self.col_factors)
            .ok_or_else(|| Error::InvalidShape("column factor product overflows".into()))?;
        if cols != self.emb_dim as u128 {
            return Err(Error::InvalidShape(format!(
                "column factors {:?} multiply to {cols}, emb_dim is {}",
                self.col_factors, self.emb_dim
            )));
        }
        for k in 0..d {
            let len = checked_product(&[
                self.ranks[k],
                self.row_factors[k],
                self.col_factors[k],
                self.ranks[k + 1],
            ]);
            if len.map_or(true, |l| l > isize::MAX as u128 / 8) {
                return Err(Error::InvalidShape(format!("core {k} is too large")));
            }
        }
        Ok(())
    }
}

fn checked_product(xs: &[usize]) -> Option<u128> {
    xs.iter()
        .try_fold(1u128, |acc, &x| acc.checked_mul(x as u128))
}

/// Build a plan with uniform internal rank `rank`.
///
/// Missing factor lists are chosen automatically: column factors are the
/// most balanced factorization of `emb_dim` into `tt_dim` factors `> 1`;
/// row factors minimize `prod(m_k) >= num_rows` among near-balanced tuples
/// (spread at most [`MAX_ROW_FACTOR_SPREAD`]), then the spread, then
/// lexicographic order.
pub fn plan_shapes(
    num_rows: u64,
    emb_dim: usize,
    tt_dim: usize,
    rank: usize,
    row_factors: Option<&[usize]>,
    col_factors: Option<&[usize]>,
) -> Result<ShapePlan> {
    if rank == 0 {
        return Err(Error::InvalidShape("rank must be >= 1".into()));
    }
    if tt_dim < 2 {
        return Err(Error::InvalidShape(format!(
            "tt_dim must be >= 2, got {tt_dim}"
        )));
    }
    if num_rows == 0 || emb_dim == 0 {
        return Err(Error::InvalidShape(
            "num_rows and emb_dim must be positive".into(),
        ));
    }
    let col_factors = match col_factors {
        Some(f) => f.to_vec(),
        None => balanced_col_factors(emb_dim, tt_dim).ok_or_else(|| {
            Error::InvalidShape(format!(
                "emb_dim {emb_dim} cannot be split into {tt_dim} integer factors > 1"
            ))
        })?,
    };
    let row_factors = match row_factors {
        Some(f) => f.to_vec(),
        None => auto_row_factors(num_rows, tt_dim),
    };
    if row_factors.len() != tt_dim || col_factors.len() != tt_dim {
        return Err(Error::InvalidShape(format!(
            "expected {tt_dim} row and column factors, got {} and {}",
            row_factors.len(),
            col_factors.len()
        )));
    }
    let mut ranks = vec![rank; tt_dim + 1];
    ranks[0] = 1;
    ranks[tt_dim] = 1;
    let plan = ShapePlan {
        num_rows,
        emb_dim,
        row_factors,
        col_factors,
        ranks,
    };
    plan.validate()?;
    Ok(plan)
}

/// Most balanced nondecreasing factorization of `n` into `d` factors `> 1`.
pub fn balanced_col_factors(n: usize, d: usize) -> Option<Vec<usize>> {
    fn rec(
        rest: usize,
        min: usize,
        left: usize,
        cur: &mut Vec<usize>,
        best: &mut Option<Vec<usize>>,
    ) {
        if left == 1 {
            if rest >= min {
                cur.push(rest);
                if best.as_ref().map_or(true, |b| better_balanced(cur, b)) {
                    *best = Some(cur.clone());
                }
                cur.pop();
            }
            return;
        }
        let mut f = min;
        while f.saturating_pow(left as u32) <= rest {
            if rest % f == 0 {
                cur.push(f);
                rec(rest / f, f, left - 1, cur, best);
                cur.pop();
            }
            f += 1;
        }
    }
    if d == 0 {
        return None;
    }
    let mut best = None;
    rec(n, 2, d, &mut Vec::with_capacity(d), &mut best);
    best
}

/// Smaller max/min spread wins, then lexicographic order. Both sorted ascending.
fn better_balanced(a: &[usize], b: &[usize]) -> bool {
    let (amin, amax) = (a[0] as u128, *a.last().unwrap() as u128);
    let (bmin, bmax) = (b[0] as u128, *b.last().unwrap() as u128);
    match (amax * bmin).cmp(&(bmax * amin)) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a < b,
    }
}

/// Row factors `m_1 <= .. <= m_d` with `prod >= num_rows` and
/// `m_d <= MAX_ROW_FACTOR_SPREAD * m_1`, minimizing the product.
pub fn auto_row_factors(num_rows: u64, d: usize) -> Vec<usize> {
    assert!(d >= 1);
    let target = num_rows.max(1) as u128;
    let spread = MAX_ROW_FACTOR_SPREAD as u128;
    let root = integer_root_ceil(target, d);
    let lo = {
        // m_1 * (spread * m_1)^(d-1) >= target
        let denom = spread.pow(d as u32 - 1);
        integer_root_ceil(target.div_ceil(denom), d).max(1)
    };

    struct Search {
        target: u128,
        d: usize,
        best: Option<(u128, Vec<usize>)>,
    }

    impl Search {
        fn consider(&mut self, cand: &[usize], product: u128) {
            let better = match &self.best {
                None => true,
                Some((bp, b)) => match product.cmp(bp) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => better_balanced(cand, b),
                },
            };
            if better {
                self.best = Some((product, cand.to_vec()));
            }
        }

        fn rec(&mut self, cur: &mut Vec<usize>, prefix: u128, cap: u128) {
            let placed = cur.len();
            let left = self.d - placed;
            let prev = *cur.last().unwrap() as u128;
            if left == 1 {
                let last = self.target.div_ceil(prefix).max(prev);
                if last <= cap {
                    cur.push(last as usize);
                    self.consider(cur, prefix * last);
                    cur.pop();
                }
                return;
            }
            let mut f = prev;
            while f <= cap {
                // all remaining factors are >= f
                let lower = prefix * f.pow(left as u32);
                if let Some((bp, _)) = &self.best {
                    if lower > *bp {
                        break;
                    }
                }
                cur.push(f as usize);
                self.rec(cur, prefix * f, cap);
                cur.pop();
                if lower >= self.target {
                    break;
                }
                f += 1;
            }
        }
    }

    let mut search = Search {
        target,
        d,
        best: None,
    };
    if d == 1 {
        return vec![target as usize];
    }
    for first in lo..=root {
        let mut cur = vec![first as usize];
        search.rec(&mut cur, first, first * spread);
    }
    search.best.expect("balanced factorization always exists").1
}

/// Smallest `r` with `r^d >= x`.
fn integer_root_ceil(x: u128, d: usize) -> u128 {
    if x <= 1 {
        return x.max(1);
    }
    let mut r = (x as f64).powf(1.0 / d as f64).round() as u128;
    r = r.max(1);
    while r > 1 && pow_sat(r - 1, d) >= x {
        r -= 1;
    }
    while pow_sat(r, d) < x {
        r += 1;
    }
    r
}

fn pow_sat(base: u128, exp: usize) -> u128 {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base);
    }
    acc
}
