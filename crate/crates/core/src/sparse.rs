use crate::concept::ConceptId;
use crate::error::{Error, Result};

/// Sparse vector over concept ids, sorted by id with no duplicates.
///
/// Absent ids are coordinate 0. Explicit zero entries are allowed and kept:
/// similarity functions that work on shared ids treat them as present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(ConceptId, f64)>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ConceptId, f64)>) -> Result<Self> {
        let mut entries: Vec<_> = pairs.into_iter().collect();
        entries.sort_by_key(|&(c, _)| c);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain(format!("duplicate coordinate {}", w[0].0)));
        }
        Ok(Self { entries })
    }

    pub(crate) fn from_sorted_unchecked(entries: Vec<(ConceptId, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries }
    }

    pub fn entries(&self) -> &[(ConceptId, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConceptId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ConceptId) -> f64 {
        self.entries.binary_search_by_key(&id, |&(c, _)| c).map_or(0.0, |i| self.entries[i].1)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { entries: self.entries.iter().map(|&(id, v)| (id, v * c)).collect() }
    }

    /// Drops explicit zeros.
    pub fn pruned_zeros(&self) -> Self {
        Self { entries: self.entries.iter().copied().filter(|&(_, v)| v != 0.0).collect() }
    }

    /// Calls `f(a_i, b_i)` for every id present in both vectors, in id order.
    pub fn for_each_shared(&self, other: &Self, mut f: impl FnMut(f64, f64)) {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    f(a[i].1, b[j].1);
                    i += 1;
                    j += 1;
                }
            }
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        self.for_each_shared(other, |x, y| acc += x * y);
        acc
    }
}
