//! Range queries over a multi-attribute integer domain `[0, c)^d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open interval `[lo, hi)` over an integer domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub lo: usize,
    pub hi: usize,
}

impl Interval {
    pub fn new(lo: usize, hi: usize) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}) is reversed");
        Interval { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, v: usize) -> bool {
        self.lo <= v && v < self.hi
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }

    pub fn overlap(&self, other: &Interval) -> usize {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        hi.saturating_sub(lo)
    }
}

/// A conjunction of per-attribute half-open ranges.
///
/// Attributes are kept sorted and unique. Attributes not mentioned are
/// unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeQuery {
    ranges: Vec<(usize, Interval)>,
}

impl RangeQuery {
    pub fn new(mut ranges: Vec<(usize, Interval)>, domain: usize) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidQuery("query has no attributes".into()));
        }
        ranges.sort_by_key(|(a, _)| *a);
        for w in ranges.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidQuery(format!("attribute {} repeated", w[0].0)));
            }
        }
        for (a, iv) in &ranges {
            if iv.lo >= iv.hi || iv.hi > domain {
                return Err(Error::InvalidQuery(format!(
                    "range [{}, {}) on attribute {a} outside domain [0, {domain})",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(RangeQuery { ranges })
    }

    /// One-dimensional query on attribute 0.
    pub fn one_dim(lo: usize, hi: usize, domain: usize) -> Result<Self> {
        Self::new(vec![(0, Interval::new(lo, hi))], domain)
    }

    pub fn ranges(&self) -> &[(usize, Interval)] {
        &self.ranges
    }

    pub fn attrs(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranges.iter().map(|(a, _)| *a)
    }

    pub fn dims(&self) -> usize {
        self.ranges.len()
    }

    pub fn range_of(&self, attr: usize) -> Option<Interval> {
        self.ranges
            .binary_search_by_key(&attr, |(a, _)| *a)
            .ok()
            .map(|i| self.ranges[i].1)
    }

    /// Range on `attr`, or the whole domain when unconstrained.
    pub fn range_or_full(&self, attr: usize, domain: usize) -> Interval {
        self.range_of(attr).unwrap_or(Interval::new(0, domain))
    }

    /// The single interval of a one-dimensional query.
    pub fn single(&self) -> Result<Interval> {
        match self.ranges.as_slice() {
            [(_, iv)] => Ok(*iv),
            _ => Err(Error::InvalidQuery(format!(
                "expected a 1-D query, found {} attributes",
                self.ranges.len()
            ))),
        }
    }

    pub fn contains(&self, record: &[usize]) -> bool {
        self.ranges
            .iter()
            .all(|(a, iv)| record.get(*a).is_some_and(|v| iv.contains(*v)))
    }

    /// Snap every range outward to multiples of `width`.
    pub fn snapped(&self, width: usize, domain: usize) -> RangeQuery {
        let ranges = self
            .ranges
            .iter()
            .map(|(a, iv)| {
                let lo = iv.lo / width * width;
                let hi = (iv.hi.div_ceil(width) * width).min(domain);
                (*a, Interval::new(lo, hi))
            })
            .collect();
        RangeQuery { ranges }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_ranges() {
        assert!(RangeQuery::one_dim(3, 3, 8).is_err());
        assert!(RangeQuery::one_dim(0, 9, 8).is_err());
        let dup = vec![(1, Interval::new(0, 2)), (1, Interval::new(2, 4))];
        assert!(RangeQuery::new(dup, 8).is_err());
    }

    #[test]
    fn snapping_is_outward() {
        let q = RangeQuery::new(vec![(2, Interval::new(5, 17)), (0, Interval::new(16, 32))], 64)
            .unwrap();
        let s = q.snapped(16, 64);
        assert_eq!(s.range_of(0), Some(Interval::new(16, 32)));
        assert_eq!(s.range_of(2), Some(Interval::new(0, 32)));
    }

    #[test]
    fn overlap_and_subset() {
        let a = Interval::new(2, 6);
        assert_eq!(a.overlap(&Interval::new(4, 10)), 2);
        assert_eq!(a.overlap(&Interval::new(6, 10)), 0);
        assert!(Interval::new(3, 5).is_subset_of(&a));
        assert!(!a.intersects(&Interval::new(6, 7)));
    }
}
