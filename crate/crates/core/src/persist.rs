//! Bounded sample lists with integral-preserving compression.
//!
//! Each entry is a `(value, width)` step of a left Riemann sum. When the list
//! is full, the mean compressor merges adjacent pairs into their
//! width-weighted mean, which keeps `Σ value·width` unchanged.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compressor {
    /// Pairwise width-weighted averaging.
    #[default]
    Mean,
    /// No compression; the oldest entry is evicted when full.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub value: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSeries {
    entries: Vec<Entry>,
    capacity: usize,
    compressor: Compressor,
}

impl CompressedSeries {
    pub fn new(capacity: usize) -> Result<Self> {
        Self::with_compressor(capacity, Compressor::Mean)
    }

    pub fn with_compressor(capacity: usize, compressor: Compressor) -> Result<Self> {
        let min = match compressor {
            Compressor::Mean => 2,
            Compressor::None => 1,
        };
        if capacity < min {
            return Err(Error::Domain("series capacity too small for its compressor"));
        }
        Ok(Self {
            entries: Vec::with_capacity(capacity),
            capacity,
            compressor,
        })
    }

    /// Restores a series from `[value, width]` pairs, e.g. a disk cache.
    pub fn from_pairs(
        capacity: usize,
        compressor: Compressor,
        pairs: &[[f64; 2]],
    ) -> Result<Self> {
        if pairs.len() > capacity {
            return Err(Error::Domain("more entries than capacity"));
        }
        let mut s = Self::with_compressor(capacity, compressor)?;
        for &[value, width] in pairs {
            check_sample(value, width)?;
            s.entries.push(Entry { value, width });
        }
        Ok(s)
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.entries.iter().map(|e| [e.value, e.width]).collect()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn compressor(&self) -> Compressor {
        self.compressor
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, value: f64, width: f64) -> Result<()> {
        check_sample(value, width)?;
        if self.entries.len() == self.capacity {
            match self.compressor {
                Compressor::Mean => self.compress(),
                Compressor::None => {
                    self.entries.remove(0);
                }
            }
        }
        self.entries.push(Entry { value, width });
        Ok(())
    }

    /// `Σ value·width` over the stored entries.
    pub fn integral(&self) -> f64 {
        self.entries.iter().map(|e| e.value * e.width).sum()
    }

    pub fn total_width(&self) -> f64 {
        self.entries.iter().map(|e| e.width).sum()
    }

    // Merges (0,1), (2,3), ...; an odd trailing entry is carried as is.
    fn compress(&mut self) {
        let n = self.entries.len();
        let mut w = 0;
        let mut r = 0;
        while r + 1 < n {
            let a = self.entries[r];
            let b = self.entries[r + 1];
            let width = a.width + b.width;
            self.entries[w] = Entry {
                value: (a.value * a.width + b.value * b.width) / width,
                width,
            };
            w += 1;
            r += 2;
        }
        if r < n {
            self.entries[w] = self.entries[r];
            w += 1;
        }
        self.entries.truncate(w);
    }
}

fn check_sample(value: f64, width: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Domain("sample value must be finite"));
    }
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::Domain("sample width must be positive and finite"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn pairs(s: &CompressedSeries) -> Vec<(f64, f64)> {
        s.entries().iter().map(|e| (e.value, e.width)).collect()
    }

    #[test]
    fn compresses_when_full() {
        let mut s = CompressedSeries::new(4).unwrap();
        for v in 1..=5 {
            s.append(v as f64, 1.0).unwrap();
        }
        assert_eq!(pairs(&s), vec![(1.5, 2.0), (3.5, 2.0), (5.0, 1.0)]);
        // raw left sum of 1..5 at unit spacing
        assert_eq!(s.integral(), 15.0);
    }

    #[test]
    fn odd_tail_is_carried() {
        let mut s = CompressedSeries::new(3).unwrap();
        for v in [2.0, 4.0, 9.0, 1.0] {
            s.append(v, 1.0).unwrap();
        }
        assert_eq!(pairs(&s), vec![(3.0, 2.0), (9.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn constant_series_stays_constant() {
        let mut s = CompressedSeries::new(5).unwrap();
        for _ in 0..1000 {
            s.append(7.25, 0.5).unwrap();
        }
        assert!(s.entries().iter().all(|e| e.value == 7.25));
        assert_eq!(s.total_width(), 500.0);
    }

    #[test]
    fn constant_speed_mileage() {
        let mut s = CompressedSeries::new(8).unwrap();
        for _ in 0..100 {
            s.append(10.0, 1.0).unwrap();
        }
        assert_eq!(s.integral(), 1000.0);
        assert!(s.len() <= 8);
    }

    #[test]
    fn simple_cases() {
        assert_eq!(CompressedSeries::new(4).unwrap().integral(), 0.0);
        let mut s = CompressedSeries::new(4).unwrap();
        s.append(10.0, 2.0).unwrap();
        assert_eq!(s.integral(), 20.0);
    }

    #[test]
    fn rejects_bad_samples() {
        let mut s = CompressedSeries::new(4).unwrap();
        assert!(s.append(1.0, 0.0).is_err());
        assert!(s.append(1.0, -1.0).is_err());
        assert!(s.append(f64::NAN, 1.0).is_err());
        assert!(s.append(f64::INFINITY, 1.0).is_err());
        assert!(CompressedSeries::new(1).is_err());
        assert!(s.is_empty());
    }

    #[test]
    fn uncompressed_list_evicts_oldest() {
        let mut s = CompressedSeries::with_compressor(2, Compressor::None).unwrap();
        for v in [1.0, 2.0, 3.0] {
            s.append(v, 1.0).unwrap();
        }
        assert_eq!(pairs(&s), vec![(2.0, 1.0), (3.0, 1.0)]);
    }

    #[test]
    fn pairs_round_trip() {
        let mut s = CompressedSeries::new(6).unwrap();
        for i in 0..17 {
            s.append(i as f64 * 0.3, 1.0 + i as f64).unwrap();
        }
        let back = CompressedSeries::from_pairs(6, Compressor::Mean, &s.to_pairs()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn merged_entries_cover_contiguous_spans(
            capacity in 2usize..16,
            widths in prop::collection::vec(0.01f64..3.0, 1..400),
        ) {
            // Tag each raw sample by its index as the value with unit weights
            // so that each entry's span can be recovered from its width.
            let mut s = CompressedSeries::new(capacity).unwrap();
            let mut cumulative = vec![0.0];
            for w in &widths {
                s.append(1.0, *w).unwrap();
                cumulative.push(cumulative.last().unwrap() + w);
                prop_assert!(s.len() <= capacity);
            }
            // entry boundaries must land on raw sample boundaries, in order
            let mut edge = 0.0;
            let mut cursor = 0;
            for e in s.entries() {
                edge += e.width;
                while cursor < cumulative.len() && cumulative[cursor] < edge - 1e-9 * edge.max(1.0) {
                    cursor += 1;
                }
                prop_assert!(cursor < cumulative.len());
                prop_assert!((cumulative[cursor] - edge).abs() <= 1e-9 * edge.max(1.0));
            }
            let total: f64 = widths.iter().sum();
            prop_assert!((s.total_width() - total).abs() <= 1e-9 * total);
        }
    }
}
