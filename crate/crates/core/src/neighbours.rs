//! Search results and the canonical (distance, id) ordering.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::store::VectorId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbour {
    pub id: VectorId,
    pub dist: f64,
}

impl Neighbour {
    pub fn new(id: VectorId, dist: f64) -> Self {
        Self { id, dist }
    }

    /// Ascending distance, ties broken by ascending id.
    #[inline]
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

/// Heap entry ordered canonically, so a `BinaryHeap` of these pops the
/// canonically-worst neighbour first.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ranked(pub Neighbour);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.canonical_cmp(&other.0)
    }
}

/// Up to `k` neighbours sorted canonically, ids unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeighbourList(Vec<Neighbour>);

impl NeighbourList {
    /// Sorts and truncates arbitrary candidates. Callers guarantee ids are
    /// unique.
    pub fn from_unsorted(mut items: Vec<Neighbour>, k: usize) -> Self {
        items.sort_unstable_by(Neighbour::canonical_cmp);
        items.truncate(k);
        Self(items)
    }

    pub fn ids(&self) -> Vec<VectorId> {
        self.0.iter().map(|n| n.id).collect()
    }

    pub fn as_slice(&self) -> &[Neighbour] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Neighbour> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<Neighbour> {
        self.0
    }
}

impl<'a> IntoIterator for &'a NeighbourList {
    type Item = &'a Neighbour;
    type IntoIter = std::slice::Iter<'a, Neighbour>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Bounded collector keeping the `k` canonically-smallest candidates.
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Current worst kept distance, or +inf while not full.
    #[inline]
    pub fn worst(&self) -> f64 {
        if self.is_full() {
            self.heap.peek().map_or(f64::INFINITY, |r| r.0.dist)
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    pub fn push(&mut self, id: VectorId, dist: f64) {
        if self.k == 0 {
            return;
        }
        let cand = Ranked(Neighbour::new(id, dist));
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(top) = self.heap.peek() {
            if cand < *top {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn into_list(self) -> NeighbourList {
        let mut v: Vec<Neighbour> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_unstable_by(Neighbour::canonical_cmp);
        NeighbourList(v)
    }
}
