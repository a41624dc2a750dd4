//! CSR-style lookup requests: flat indices plus bag offsets.

use std::hash::{Hash, Hasher};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "mean" => Ok(Pooling::Mean),
            other => Err(format!("unknown pooling mode '{other}'")),
        }
    }
}

/// Bag `b` pools `indices[offsets[b]..offsets[b + 1]]`, each scaled by its
/// per-sample weight (1 when absent).
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBatch {
    indices: Vec<u64>,
    offsets: Vec<usize>,
    weights: Option<Vec<f64>>,
    pooling: Pooling,
}

impl IndexBatch {
    pub fn new(
        indices: Vec<u64>,
        offsets: Vec<usize>,
        weights: Option<Vec<f64>>,
        pooling: Pooling,
    ) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidBatch(
                "offsets must hold num_bags + 1 entries".into(),
            ));
        }
        if offsets[0] != 0 {
            return Err(Error::InvalidBatch(format!(
                "offsets[0] = {}, expected 0",
                offsets[0]
            )));
        }
        if let Some(pos) = offsets.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidBatch(format!(
                "offsets decrease at bag {pos}: {} -> {}",
                offsets[pos],
                offsets[pos + 1]
            )));
        }
        let last = *offsets.last().unwrap();
        if last != indices.len() {
            return Err(Error::InvalidBatch(format!(
                "last offset {last} does not match {} indices",
                indices.len()
            )));
        }
        if let Some(w) = &weights {
            if w.len() != indices.len() {
                return Err(Error::WeightLengthMismatch {
                    expected: indices.len(),
                    got: w.len(),
                });
            }
        }
        Ok(Self {
            indices,
            offsets,
            weights,
            pooling,
        })
    }

    pub fn from_bags(bags: &[Vec<u64>], pooling: Pooling) -> Self {
        let mut offsets = Vec::with_capacity(bags.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for bag in bags {
            indices.extend_from_slice(bag);
            offsets.push(indices.len());
        }
        Self {
            indices,
            offsets,
            weights: None,
            pooling,
        }
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn num_bags(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn bag_range(&self, bag: usize) -> Range<usize> {
        self.offsets[bag]..self.offsets[bag + 1]
    }

    /// Bag owning each lookup position.
    pub fn bag_of_positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for b in 0..self.num_bags() {
            out.extend(std::iter::repeat_n(b, self.bag_range(b).len()));
        }
        out
    }

    /// Multiplier applied to the row looked up at `position` of `bag`:
    /// the per-sample weight, divided by the bag size under mean pooling.
    #[inline]
    pub fn coefficient(&self, bag: usize, position: usize) -> f64 {
        let alpha = self.weights.as_ref().map_or(1.0, |w| w[position]);
        match self.pooling {
            Pooling::Sum => alpha,
            Pooling::Mean => alpha / self.bag_range(bag).len() as f64,
        }
    }

    pub fn validate_rows(&self, num_rows: u64) -> Result<()> {
        for bag in 0..self.num_bags() {
            for position in self.bag_range(bag) {
                let index = self.indices[position];
                if index >= num_rows {
                    return Err(Error::LookupOutOfRange {
                        bag,
                        position,
                        index,
                        num_rows,
                    });
                }
            }
        }
        Ok(())
    }

    /// Content hash used to pair a forward context with its batch.
    pub fn digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.indices.hash(&mut h);
        self.offsets.hash(&mut h);
        self.pooling.hash(&mut h);
        if let Some(w) = &self.weights {
            for v in w {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_checks() {
        assert!(IndexBatch::new(vec![1, 2], vec![0, 2], None, Pooling::Sum).is_ok());
        assert!(IndexBatch::new(vec![1, 2], vec![], None, Pooling::Sum).is_err());
        assert!(IndexBatch::new(vec![1, 2], vec![1, 2], None, Pooling::Sum).is_err());
        assert!(IndexBatch::new(vec![1, 2], vec![0, 2, 1], None, Pooling::Sum).is_err());
        assert!(IndexBatch::new(vec![1, 2], vec![0, 1], None, Pooling::Sum).is_err());
        assert!(matches!(
            IndexBatch::new(vec![1, 2], vec![0, 2], Some(vec![1.0]), Pooling::Sum),
            Err(Error::WeightLengthMismatch {
                expected: 2,
                got: 1
            })
        ));
        // empty bags are fine
        let b = IndexBatch::new(vec![3], vec![0, 0, 1, 1], None, Pooling::Mean).unwrap();
        assert_eq!(b.num_bags(), 3);
        assert_eq!(b.bag_of_positions(), vec![1]);
    }

    #[test]
    fn row_validation_names_bag_and_position() {
        let b = IndexBatch::from_bags(&[vec![0, 1], vec![2, 9]], Pooling::Sum);
        match b.validate_rows(5) {
            Err(Error::LookupOutOfRange {
                bag,
                position,
                index,
                ..
            }) => {
                assert_eq!((bag, position, index), (1, 3, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coefficients() {
        let b = IndexBatch::new(
            vec![0, 1, 2],
            vec![0, 2, 3],
            Some(vec![2.0, 3.0, 4.0]),
            Pooling::Mean,
        )
        .unwrap();
        assert_eq!(b.coefficient(0, 0), 1.0);
        assert_eq!(b.coefficient(0, 1), 1.5);
        assert_eq!(b.coefficient(1, 2), 4.0);
    }
}
