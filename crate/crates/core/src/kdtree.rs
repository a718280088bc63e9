//! Dynamic k-d tree with median splits on the maximum-variance dimension.
//!
//! Inserts route to a leaf and split it on overflow. Removal collapses empty
//! leaves into their sibling. After every insert the highest node on the
//! insertion path whose children are out of balance by more than
//! `rebuild_imbalance` is rebuilt from scratch. Search is best-first over
//! leaves with the incremental per-axis lower bound, and stops after
//! `max_leaves_visited` leaves.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::marker::PhantomData;

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::index::DynamicIndex;
use crate::neighbours::{NeighbourList, TopK};
use crate::scalar::Scalar;
use crate::store::{check_vector, DatasetStore, VectorId};

const NONE: u32 = u32::MAX;
// Imbalance rebuilds only apply above this many leaves' worth of points.
const MIN_REBUILD_LEAVES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdParams {
    pub leaf_capacity: usize,
    /// `None` searches until the bound proves the result exact.
    pub max_leaves_visited: Option<usize>,
    /// Larger/smaller child size ratio that triggers a subtree rebuild.
    pub rebuild_imbalance: f64,
}

impl Default for KdParams {
    fn default() -> Self {
        Self {
            leaf_capacity: 32,
            max_leaves_visited: None,
            rebuild_imbalance: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Internal {
        dim: u32,
        value: f64,
        left: u32,
        right: u32,
        size: usize,
    },
    Leaf(Vec<VectorId>),
    Free,
}

#[derive(Debug, Clone)]
pub struct KdTree<T> {
    params: KdParams,
    nodes: Vec<Node>,
    parent: Vec<u32>,
    free: Vec<u32>,
    root: u32,
    leaf_of: Vec<u32>,
    splits: usize,
    rebuilds: usize,
    _scalar: PhantomData<T>,
}

struct QueueEntry {
    bound: f64,
    node: u32,
    slot: u32,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    // Reversed: BinaryHeap pops the smallest bound first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<T: Scalar> KdTree<T> {
    pub fn new(params: KdParams) -> Result<Self> {
        if params.leaf_capacity == 0 {
            return Err(Error::InvalidParameter("kdtree: leaf_capacity must be >= 1".into()));
        }
        if params.max_leaves_visited == Some(0) {
            return Err(Error::InvalidParameter("kdtree: max_leaves must be >= 1".into()));
        }
        if !(params.rebuild_imbalance > 1.0) {
            return Err(Error::InvalidParameter(
                "kdtree: rebuild_imbalance must be > 1".into(),
            ));
        }
        Ok(Self {
            params,
            nodes: vec![Node::Leaf(Vec::new())],
            parent: vec![NONE],
            free: Vec::new(),
            root: 0,
            leaf_of: Vec::new(),
            splits: 0,
            rebuilds: 0,
            _scalar: PhantomData,
        })
    }

    pub fn params(&self) -> &KdParams {
        &self.params
    }

    pub fn set_max_leaves_visited(&mut self, budget: Option<usize>) {
        self.params.max_leaves_visited = budget;
    }

    /// Number of leaf overflows split so far.
    pub fn splits(&self) -> usize {
        self.splits
    }

    /// Number of imbalance-triggered subtree rebuilds so far.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn len(&self) -> usize {
        self.size(self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Leaf id lists, left to right.
    pub fn leaves(&self) -> Vec<Vec<VectorId>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            match &self.nodes[n as usize] {
                Node::Internal { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf(ids) => out.push(ids.clone()),
                Node::Free => {}
            }
        }
        out
    }

    /// Split dimension of the root, if the root is internal.
    pub fn root_split_dim(&self) -> Option<usize> {
        match &self.nodes[self.root as usize] {
            Node::Internal { dim, .. } => Some(*dim as usize),
            _ => None,
        }
    }

    /// Leaf slot currently holding `id`.
    pub fn leaf_of(&self, id: VectorId) -> Option<u32> {
        self.leaf_of.get(id.index()).copied().filter(|&l| l != NONE)
    }

    fn size(&self, n: u32) -> usize {
        match &self.nodes[n as usize] {
            Node::Internal { size, .. } => *size,
            Node::Leaf(ids) => ids.len(),
            Node::Free => 0,
        }
    }

    fn alloc(&mut self) -> u32 {
        if let Some(slot) = self.free.pop() {
            slot
        } else {
            self.nodes.push(Node::Free);
            self.parent.push(NONE);
            (self.nodes.len() - 1) as u32
        }
    }

    fn release(&mut self, slot: u32) {
        self.nodes[slot as usize] = Node::Free;
        self.parent[slot as usize] = NONE;
        self.free.push(slot);
    }

    fn set_leaf_of(&mut self, id: VectorId, leaf: u32) {
        let i = id.index();
        if i >= self.leaf_of.len() {
            self.leaf_of.resize(i + 1, NONE);
        }
        self.leaf_of[i] = leaf;
    }

    /// Fills `slot` with a subtree over `ids`.
    fn build_at(&mut self, slot: u32, ids: &mut [VectorId], store: &DatasetStore<T>) {
        if ids.len() <= self.params.leaf_capacity {
            for &id in ids.iter() {
                self.set_leaf_of(id, slot);
            }
            self.nodes[slot as usize] = Node::Leaf(ids.to_vec());
            return;
        }
        let dim = max_variance_dim(store, ids);
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |a, b| {
            store.row(*a)[dim]
                .as_f64()
                .total_cmp(&store.row(*b)[dim].as_f64())
                .then_with(|| a.cmp(b))
        });
        let value = store.row(ids[mid])[dim].as_f64();
        let size = ids.len();
        let (lo, hi) = ids.split_at_mut(mid);
        let left = self.alloc();
        let right = self.alloc();
        self.parent[left as usize] = slot;
        self.parent[right as usize] = slot;
        self.build_at(left, lo, store);
        self.build_at(right, hi, store);
        self.nodes[slot as usize] = Node::Internal {
            dim: dim as u32,
            value,
            left,
            right,
            size,
        };
    }

    fn collect_ids(&self, n: u32, out: &mut Vec<VectorId>) {
        match &self.nodes[n as usize] {
            Node::Internal { left, right, .. } => {
                self.collect_ids(*left, out);
                self.collect_ids(*right, out);
            }
            Node::Leaf(ids) => out.extend_from_slice(ids),
            Node::Free => {}
        }
    }

    fn release_below(&mut self, n: u32) {
        if let Node::Internal { left, right, .. } = self.nodes[n as usize] {
            self.release_below(left);
            self.release_below(right);
            self.release(left);
            self.release(right);
        }
    }

    fn rebuild_subtree(&mut self, n: u32, store: &DatasetStore<T>) {
        let mut ids = Vec::with_capacity(self.size(n));
        self.collect_ids(n, &mut ids);
        ids.sort_unstable();
        self.release_below(n);
        self.build_at(n, &mut ids, store);
    }

    pub fn kd_build(&mut self, store: &DatasetStore<T>) {
        self.nodes = vec![Node::Free];
        self.parent = vec![NONE];
        self.free.clear();
        self.root = 0;
        self.leaf_of = vec![NONE; store.len()];
        let mut ids = store.snapshot_ids();
        self.build_at(0, &mut ids, store);
    }

    pub fn kd_insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        if self.leaf_of(id).is_some() {
            return Err(Error::DuplicateId(id));
        }
        let v = store.get(id).ok_or(Error::UnknownId(id))?;
        let mut path = Vec::new();
        let mut n = self.root;
        while let Node::Internal {
            dim, value, left, right, ..
        } = &self.nodes[n as usize]
        {
            path.push(n);
            n = if v[*dim as usize].as_f64() < *value { *left } else { *right };
        }
        let leaf = n;
        let overflow = match &mut self.nodes[leaf as usize] {
            Node::Leaf(ids) => {
                ids.push(id);
                ids.len() > self.params.leaf_capacity
            }
            _ => unreachable!("descent ends at a leaf"),
        };
        self.set_leaf_of(id, leaf);
        for &p in &path {
            if let Node::Internal { size, .. } = &mut self.nodes[p as usize] {
                *size += 1;
            }
        }
        if overflow {
            self.rebuild_subtree(leaf, store);
            self.splits += 1;
        }
        let min_size = MIN_REBUILD_LEAVES * self.params.leaf_capacity;
        for &p in &path {
            if let Node::Internal { left, right, size, .. } = self.nodes[p as usize] {
                if size <= min_size {
                    break;
                }
                let (a, b) = (self.size(left), self.size(right));
                let ratio = a.max(b) as f64 / a.min(b).max(1) as f64;
                if ratio > self.params.rebuild_imbalance {
                    self.rebuild_subtree(p, store);
                    self.rebuilds += 1;
                    break;
                }
            }
        }
        Ok(())
    }

    fn remove(&mut self, id: VectorId) -> Result<()> {
        let leaf = self.leaf_of(id).ok_or(Error::UnknownId(id))?;
        let now_empty = match &mut self.nodes[leaf as usize] {
            Node::Leaf(ids) => {
                let pos = ids.iter().position(|&x| x == id).expect("leaf_of is consistent");
                ids.remove(pos);
                ids.is_empty()
            }
            _ => unreachable!(),
        };
        self.leaf_of[id.index()] = NONE;
        let mut p = self.parent[leaf as usize];
        while p != NONE {
            if let Node::Internal { size, .. } = &mut self.nodes[p as usize] {
                *size -= 1;
            }
            p = self.parent[p as usize];
        }
        if now_empty && leaf != self.root {
            self.collapse(leaf);
        }
        Ok(())
    }

    /// Replaces the parent of the empty `leaf` with the leaf's sibling.
    fn collapse(&mut self, leaf: u32) {
        let p = self.parent[leaf as usize];
        let sibling = match self.nodes[p as usize] {
            Node::Internal { left, right, .. } => {
                if left == leaf {
                    right
                } else {
                    left
                }
            }
            _ => unreachable!(),
        };
        let moved = std::mem::replace(&mut self.nodes[sibling as usize], Node::Free);
        match &moved {
            Node::Internal { left, right, .. } => {
                self.parent[*left as usize] = p;
                self.parent[*right as usize] = p;
            }
            Node::Leaf(ids) => {
                for &id in ids {
                    self.leaf_of[id.index()] = p;
                }
            }
            Node::Free => {}
        }
        self.nodes[p as usize] = moved;
        self.release(sibling);
        self.release(leaf);
    }

    pub fn kd_update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.remove(id)?;
        self.kd_insert(store, id)
    }

    pub fn kd_search(
        &self,
        store: &DatasetStore<T>,
        query: &[T],
        k: usize,
        max_leaves_visited: Option<usize>,
    ) -> Result<NeighbourList> {
        check_vector(store.dim(), query)?;
        let dim = store.dim();
        let budget = max_leaves_visited.unwrap_or(usize::MAX);
        let mut top = TopK::new(k);
        let mut offsets: Vec<f64> = vec![0.0; dim];
        let mut cur = vec![0.0f64; dim];
        let mut heap = BinaryHeap::new();
        heap.push(QueueEntry { bound: 0.0, node: self.root, slot: 0 });
        let mut visited = 0usize;
        // Bounds are accumulated incrementally; the slack keeps rounding from
        // pruning a cell whose true minimum ties the current worst.
        let prunes = |bound: f64, worst: f64| bound * (1.0 - 1e-9) > worst;
        'outer: while let Some(entry) = heap.pop() {
            if prunes(entry.bound, top.worst()) {
                break;
            }
            let s = entry.slot as usize * dim;
            cur.copy_from_slice(&offsets[s..s + dim]);
            let bound = entry.bound;
            let mut n = entry.node;
            loop {
                match &self.nodes[n as usize] {
                    Node::Internal {
                        dim: d, value, left, right, ..
                    } => {
                        let d = *d as usize;
                        let diff = query[d].as_f64() - value;
                        let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                        let far_bound = bound - cur[d] * cur[d] + diff * diff;
                        if !prunes(far_bound, top.worst()) {
                            let slot = (offsets.len() / dim) as u32;
                            let old = cur[d];
                            cur[d] = diff;
                            offsets.extend_from_slice(&cur);
                            cur[d] = old;
                            heap.push(QueueEntry { bound: far_bound, node: far, slot });
                        }
                        n = near;
                    }
                    Node::Leaf(ids) => {
                        for &id in ids {
                            let d = l2_sq(query, store.row(id));
                            top.push(id, d);
                        }
                        visited += 1;
                        if visited >= budget {
                            break 'outer;
                        }
                        break;
                    }
                    Node::Free => unreachable!("free slot reachable from root"),
                }
            }
        }
        Ok(top.into_list())
    }

    pub fn audit_structure(&self, store: &DatasetStore<T>) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = vec![false; store.len()];
        // (node, lower bounds, upper bounds) along each path.
        let dim = store.dim();
        let mut stack = vec![(self.root, vec![f64::NEG_INFINITY; dim], vec![f64::INFINITY; dim])];
        while let Some((n, lo, hi)) = stack.pop() {
            match &self.nodes[n as usize] {
                Node::Internal {
                    dim: d, value, left, right, size,
                } => {
                    let d = *d as usize;
                    let (ls, rs) = (self.size(*left), self.size(*right));
                    if ls == 0 || rs == 0 {
                        problems.push(format!("kdtree: internal node {n} has an empty child"));
                    }
                    if ls + rs != *size {
                        problems.push(format!("kdtree: node {n} size {size} != {ls} + {rs}"));
                    }
                    for c in [*left, *right] {
                        if self.parent[c as usize] != n {
                            problems.push(format!("kdtree: parent link of {c} broken"));
                        }
                    }
                    let mut lhi = hi.clone();
                    lhi[d] = lhi[d].min(*value);
                    let mut rlo = lo.clone();
                    rlo[d] = rlo[d].max(*value);
                    stack.push((*left, lo, lhi));
                    stack.push((*right, rlo, hi));
                }
                Node::Leaf(ids) => {
                    if ids.len() > self.params.leaf_capacity {
                        problems.push(format!("kdtree: leaf {n} over capacity ({})", ids.len()));
                    }
                    for &id in ids {
                        let Some(v) = store.get(id) else {
                            problems.push(format!("kdtree: leaf {n} holds unknown id {id}"));
                            continue;
                        };
                        if std::mem::replace(&mut seen[id.index()], true) {
                            problems.push(format!("kdtree: id {id} appears in two leaves"));
                        }
                        if self.leaf_of(id) != Some(n) {
                            problems.push(format!("kdtree: locator for {id} is stale"));
                        }
                        if v.iter().enumerate().any(|(d, x)| {
                            let x = x.as_f64();
                            x < lo[d] || x > hi[d]
                        }) {
                            problems.push(format!("kdtree: id {id} lies outside its leaf cell"));
                        }
                    }
                }
                Node::Free => problems.push(format!("kdtree: free slot {n} reachable")),
            }
        }
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            problems.push(format!("kdtree: {missing} stored ids are in no leaf"));
        }
        problems
    }
}

fn max_variance_dim<T: Scalar>(store: &DatasetStore<T>, ids: &[VectorId]) -> usize {
    let dim = store.dim();
    let n = ids.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for &id in ids {
        for (m, x) in mean.iter_mut().zip(store.row(id)) {
            *m += x.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; dim];
    for &id in ids {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(store.row(id)) {
            let d = x.as_f64() - m;
            *v += d * d;
        }
    }
    // First maximum wins ties.
    let mut best = 0;
    for d in 1..dim {
        if var[d] > var[best] {
            best = d;
        }
    }
    best
}

impl<T: Scalar> DynamicIndex<T> for KdTree<T> {
    fn method(&self) -> &'static str {
        "kdtree"
    }
    fn build(&mut self, store: &DatasetStore<T>) -> Result<()> {
        self.kd_build(store);
        Ok(())
    }
    fn insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.kd_insert(store, id)
    }
    fn update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.kd_update(store, id)
    }
    fn search(&mut self, store: &DatasetStore<T>, query: &[T], k: usize) -> Result<NeighbourList> {
        self.kd_search(store, query, k, self.params.max_leaves_visited)
    }
    fn memory_bytes(&self) -> usize {
        let leaf_ids: usize = self
            .nodes
            .iter()
            .map(|n| match n {
                Node::Leaf(ids) => ids.capacity() * std::mem::size_of::<VectorId>(),
                _ => 0,
            })
            .sum();
        self.nodes.capacity() * std::mem::size_of::<Node>()
            + self.parent.capacity() * 4
            + self.leaf_of.capacity() * 4
            + self.free.capacity() * 4
            + leaf_ids
    }
    fn audit(&self, store: &DatasetStore<T>) -> Vec<String> {
        self.audit_structure(store)
    }
}
