//! Row-access counter on an open-addressing hash table.
//!
//! Power-of-two slot array, linear probing, Fibonacci (multiplicative)
//! hashing, doubled once the load factor would pass 0.7.

use std::cmp::Ordering;

const EMPTY: u64 = u64::MAX;
const MIN_SLOTS: usize = 16;
const MAX_LOAD_NUM: usize = 7;
const MAX_LOAD_DEN: usize = 10;

#[derive(Debug, Clone)]
pub struct FreqTable {
    keys: Vec<u64>,
    counts: Vec<u64>,
    len: usize,
    shift: u32,
}

impl Default for FreqTable {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn by_frequency(a: &(u64, u64), b: &(u64, u64)) -> Ordering {
    b.1.cmp(&a.1).then(a.0.cmp(&b.0))
}

impl FreqTable {
    pub fn new() -> Self {
        Self::with_slots(MIN_SLOTS)
    }

    /// Room for `n` keys without growing.
    pub fn with_capacity(n: usize) -> Self {
        let needed = (n * MAX_LOAD_DEN).div_ceil(MAX_LOAD_NUM) + 1;
        Self::with_slots(needed.next_power_of_two().max(MIN_SLOTS))
    }

    fn with_slots(slots: usize) -> Self {
        debug_assert!(slots.is_power_of_two());
        Self {
            keys: vec![EMPTY; slots],
            counts: vec![0; slots],
            len: 0,
            shift: 64 - slots.trailing_zeros(),
        }
    }

    #[inline]
    fn home(&self, key: u64) -> usize {
        (key.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> self.shift) as usize
    }

    #[inline]
    fn mask(&self) -> usize {
        self.keys.len() - 1
    }

    fn find(&self, key: u64) -> Result<usize, usize> {
        let mask = self.mask();
        let mut slot = self.home(key);
        loop {
            match self.keys[slot] {
                k if k == key => return Ok(slot),
                EMPTY => return Err(slot),
                _ => slot = (slot + 1) & mask,
            }
        }
    }

    /// Add `by` accesses to `key`; returns the new count.
    pub fn add(&mut self, key: u64, by: u64) -> u64 {
        assert_ne!(key, EMPTY, "row index {key} is reserved");
        match self.find(key) {
            Ok(slot) => {
                self.counts[slot] += by;
                self.counts[slot]
            }
            Err(_) if by == 0 => 0,
            Err(mut slot) => {
                if (self.len + 1) * MAX_LOAD_DEN > self.keys.len() * MAX_LOAD_NUM {
                    self.grow();
                    slot = self.find(key).unwrap_err();
                }
                self.keys[slot] = key;
                self.counts[slot] = by;
                self.len += 1;
                by
            }
        }
    }

    #[inline]
    pub fn increment(&mut self, key: u64) -> u64 {
        self.add(key, 1)
    }

    pub fn get(&self, key: u64) -> u64 {
        if key == EMPTY {
            return 0;
        }
        self.find(key).map_or(0, |slot| self.counts[slot])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> usize {
        self.keys.len()
    }

    pub fn load_factor(&self) -> f64 {
        self.len as f64 / self.keys.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.iter().map(|(_, c)| c).sum()
    }

    /// `(row, count)` pairs in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.keys
            .iter()
            .zip(&self.counts)
            .filter(|(&k, _)| k != EMPTY)
            .map(|(&k, &c)| (k, c))
    }

    /// All entries by descending count, ties by ascending row.
    pub fn sorted(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable_by(by_frequency);
        v
    }

    /// The `k` most frequent rows in [`FreqTable::sorted`] order.
    pub fn top_k(&self, k: usize) -> Vec<(u64, u64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut v: Vec<_> = self.iter().collect();
        if v.len() > k {
            v.select_nth_unstable_by(k - 1, by_frequency);
            v.truncate(k);
        }
        v.sort_unstable_by(by_frequency);
        v
    }

    /// Multiply all counts by `factor`, flooring; rows that reach 0 are dropped.
    pub fn decay(&mut self, factor: f64) {
        let survivors: Vec<(u64, u64)> = self
            .iter()
            .map(|(k, c)| (k, (c as f64 * factor).floor() as u64))
            .filter(|&(_, c)| c > 0)
            .collect();
        *self = Self::with_capacity(survivors.len());
        for (k, c) in survivors {
            self.add(k, c);
        }
    }

    pub fn clear(&mut self) {
        *self = Self::new();
    }

    fn grow(&mut self) {
        let old_keys = std::mem::take(&mut self.keys);
        let old_counts = std::mem::take(&mut self.counts);
        *self = Self::with_slots(old_keys.len() * 2);
        for (k, c) in old_keys.into_iter().zip(old_counts) {
            if k != EMPTY {
                let slot = self.find(k).unwrap_err();
                self.keys[slot] = k;
                self.counts[slot] = c;
                self.len += 1;
            }
        }
    }
}
