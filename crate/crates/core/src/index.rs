//! Mixed-radix split of a flat row index into per-core digits.
//!
//! Digit `i_1` is the most significant: `i = sum_k i_k * prod_{j>k} m_j`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowIndexDigits {
    pub digits: Vec<usize>,
}

pub fn decompose_index(flat_index: u64, row_factors: &[usize]) -> Result<RowIndexDigits> {
    let mut digits = vec![0; row_factors.len()];
    decompose_into(flat_index, row_factors, &mut digits)?;
    Ok(RowIndexDigits { digits })
}

/// Allocation-free variant of [`decompose_index`]; `out.len()` must equal `row_factors.len()`.
pub fn decompose_into(flat_index: u64, row_factors: &[usize], out: &mut [usize]) -> Result<()> {
    debug_assert_eq!(out.len(), row_factors.len());
    let mut rest = flat_index;
    for (slot, &radix) in out.iter_mut().zip(row_factors).rev() {
        let radix = radix as u64;
        *slot = (rest % radix) as usize;
        rest /= radix;
    }
    if rest != 0 {
        let limit = row_factors.iter().map(|&m| m as u64).product();
        return Err(Error::IndexOutOfRange {
            table: String::new(),
            index: flat_index,
            limit,
        });
    }
    Ok(())
}

pub fn recompose_index(digits: &RowIndexDigits, row_factors: &[usize]) -> u64 {
    digits
        .digits
        .iter()
        .zip(row_factors)
        .fold(0u64, |acc, (&i, &m)| acc * m as u64 + i as u64)
}
