//! Forest of random-projection trees searched through one shared priority
//! queue, in the style of ANNOY.
//!
//! Each internal node holds the perpendicular bisector of two sampled
//! points. Points with `normal . x - offset > 0` go left. Dynamic inserts
//! keep existing hyperplanes and split overflowing leaves locally; a full
//! rebuild happens only through `rebuild_every`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::marker::PhantomData;

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::index::DynamicIndex;
use crate::neighbours::{NeighbourList, TopK};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::store::{check_vector, DatasetStore, VectorId};

const NONE: u32 = u32::MAX;
const SPLIT_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpForestParams {
    pub n_trees: usize,
    pub leaf_capacity: usize,
    /// Candidate budget across the forest; `None` means `n_trees * k`.
    pub search_k: Option<usize>,
    /// Events between full rebuilds; 0 disables.
    pub rebuild_every: usize,
}

impl Default for RpForestParams {
    fn default() -> Self {
        Self {
            n_trees: 10,
            leaf_capacity: 32,
            search_k: None,
            rebuild_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
    norm: f64,
}

impl Hyperplane {
    fn new(normal: Vec<f64>, offset: f64) -> Self {
        let norm = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { normal, offset, norm }
    }

    /// Unit normal along `axis` through `value`.
    pub fn axis(dim: usize, axis: usize, value: f64) -> Self {
        let mut normal = vec![0.0; dim];
        normal[axis] = 1.0;
        Self::new(normal, value)
    }

    #[inline]
    pub fn margin<T: Scalar>(&self, x: &[T]) -> f64 {
        self.normal
            .iter()
            .zip(x)
            .map(|(n, v)| n * v.as_f64())
            .sum::<f64>()
            - self.offset
    }

    #[inline]
    pub fn goes_left<T: Scalar>(&self, x: &[T]) -> bool {
        self.margin(x) > 0.0
    }

    /// Signed Euclidean distance to the plane; 0 for a degenerate plane.
    fn signed_distance<T: Scalar>(&self, x: &[T]) -> f64 {
        if self.norm > 0.0 {
            self.margin(x) / self.norm
        } else {
            0.0
        }
    }
}

/// Perpendicular bisector of `a` and `b`: `normal = a - b`,
/// `offset = normal . (a + b) / 2`. `None` when the points coincide.
pub fn rp_split<T: Scalar>(a: &[T], b: &[T]) -> Option<Hyperplane> {
    let normal: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.as_f64() - y.as_f64()).collect();
    if normal.iter().all(|&x| x == 0.0) {
        return None;
    }
    let offset = normal
        .iter()
        .zip(a.iter().zip(b))
        .map(|(n, (x, y))| n * (x.as_f64() + y.as_f64()) * 0.5)
        .sum();
    Some(Hyperplane::new(normal, offset))
}

/// Picks a hyperplane separating `ids` into two non-empty sides.
///
/// Tries bisectors of random pairs first, then a median split on the
/// widest axis. If every point coincides, falls back to a degenerate plane
/// (zero normal, routes everything right) with the ids halved by position.
pub fn choose_split<T: Scalar>(
    store: &DatasetStore<T>,
    ids: &[VectorId],
    rng: &mut Rng,
) -> (Hyperplane, Vec<VectorId>, Vec<VectorId>) {
    let partition = |plane: &Hyperplane| -> (Vec<VectorId>, Vec<VectorId>) {
        ids.iter().partition(|&&id| plane.goes_left(store.row(id)))
    };
    for _ in 0..SPLIT_RETRIES {
        let i = rng::below(rng, ids.len());
        let mut j = rng::below(rng, ids.len() - 1);
        if j >= i {
            j += 1;
        }
        if let Some(plane) = rp_split(store.row(ids[i]), store.row(ids[j])) {
            let (l, r) = partition(&plane);
            if !l.is_empty() && !r.is_empty() {
                return (plane, l, r);
            }
        }
    }
    let dim = store.dim();
    let (mut axis, mut widest) = (0, -1.0);
    for d in 0..dim {
        let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &id| {
            let x = store.row(id)[d].as_f64();
            (lo.min(x), hi.max(x))
        });
        if hi - lo > widest {
            widest = hi - lo;
            axis = d;
        }
    }
    let mut coords: Vec<f64> = ids.iter().map(|&id| store.row(id)[axis].as_f64()).collect();
    coords.sort_by(f64::total_cmp);
    let plane = Hyperplane::axis(dim, axis, coords[(coords.len() - 1) / 2]);
    let (l, r) = partition(&plane);
    if !l.is_empty() && !r.is_empty() {
        return (plane, l, r);
    }
    let mid = ids.len() / 2;
    (
        Hyperplane::new(vec![0.0; dim], 0.0),
        ids[..mid].to_vec(),
        ids[mid..].to_vec(),
    )
}

#[derive(Debug, Clone)]
enum Node {
    Internal {
        plane: Hyperplane,
        left: u32,
        right: u32,
    },
    Leaf(Vec<VectorId>),
    Free,
}

#[derive(Debug, Clone)]
pub struct RpTree {
    seed: u64,
    rng: Rng,
    nodes: Vec<Node>,
    parent: Vec<u32>,
    free: Vec<u32>,
    root: u32,
    leaf_of: Vec<u32>,
}

impl RpTree {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: rng::seeded(seed),
            nodes: vec![Node::Leaf(Vec::new())],
            parent: vec![NONE],
            free: Vec::new(),
            root: 0,
            leaf_of: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn alloc(&mut self) -> u32 {
        if let Some(s) = self.free.pop() {
            s
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

    fn leaf_of(&self, id: VectorId) -> Option<u32> {
        self.leaf_of.get(id.index()).copied().filter(|&l| l != NONE)
    }

    fn build_at<T: Scalar>(&mut self, slot: u32, ids: Vec<VectorId>, cap: usize, store: &DatasetStore<T>) {
        if ids.len() <= cap {
            for &id in &ids {
                self.set_leaf_of(id, slot);
            }
            self.nodes[slot as usize] = Node::Leaf(ids);
            return;
        }
        let (plane, l, r) = choose_split(store, &ids, &mut self.rng);
        let left = self.alloc();
        let right = self.alloc();
        self.parent[left as usize] = slot;
        self.parent[right as usize] = slot;
        self.build_at(left, l, cap, store);
        self.build_at(right, r, cap, store);
        self.nodes[slot as usize] = Node::Internal { plane, left, right };
    }

    fn build<T: Scalar>(&mut self, store: &DatasetStore<T>, cap: usize) {
        *self = Self::new(self.seed);
        self.leaf_of = vec![NONE; store.len()];
        self.build_at(0, store.snapshot_ids(), cap, store);
    }

    fn insert<T: Scalar>(&mut self, store: &DatasetStore<T>, id: VectorId, cap: usize) {
        let v = store.row(id);
        let mut n = self.root;
        while let Node::Internal { plane, left, right } = &self.nodes[n as usize] {
            n = if plane.goes_left(v) { *left } else { *right };
        }
        let overflow = match &mut self.nodes[n as usize] {
            Node::Leaf(ids) => {
                ids.push(id);
                ids.len() > cap
            }
            _ => unreachable!(),
        };
        self.set_leaf_of(id, n);
        if overflow {
            let ids = match std::mem::replace(&mut self.nodes[n as usize], Node::Free) {
                Node::Leaf(ids) => ids,
                _ => unreachable!(),
            };
            self.build_at(n, ids, cap, store);
        }
    }

    fn remove(&mut self, id: VectorId) {
        let leaf = self.leaf_of(id).expect("caller checked membership");
        let empty = match &mut self.nodes[leaf as usize] {
            Node::Leaf(ids) => {
                let pos = ids.iter().position(|&x| x == id).expect("consistent locator");
                ids.remove(pos);
                ids.is_empty()
            }
            _ => unreachable!(),
        };
        self.leaf_of[id.index()] = NONE;
        if empty && leaf != self.root {
            let p = self.parent[leaf as usize];
            let sibling = match &self.nodes[p as usize] {
                Node::Internal { left, right, .. } => {
                    if *left == leaf {
                        *right
                    } else {
                        *left
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
                    for &x in ids {
                        self.leaf_of[x.index()] = p;
                    }
                }
                Node::Free => {}
            }
            self.nodes[p as usize] = moved;
            self.release(sibling);
            self.release(leaf);
        }
    }

    /// Leaf id lists of this tree.
    pub fn leaves(&self) -> Vec<Vec<VectorId>> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Node::Leaf(ids) if self.reachable(i as u32) => Some(ids.clone()),
                _ => None,
            })
            .collect()
    }

    fn reachable(&self, mut n: u32) -> bool {
        while n != self.root {
            n = self.parent[n as usize];
            if n == NONE {
                return false;
            }
        }
        true
    }

    fn audit<T: Scalar>(&self, t: usize, store: &DatasetStore<T>, cap: usize, out: &mut Vec<String>) {
        let mut seen = vec![false; store.len()];
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            match &self.nodes[n as usize] {
                Node::Internal { left, right, .. } => {
                    for c in [*left, *right] {
                        if self.parent[c as usize] != n {
                            out.push(format!("rpforest[{t}]: parent link of {c} broken"));
                        }
                        if matches!(&self.nodes[c as usize], Node::Leaf(ids) if ids.is_empty()) {
                            out.push(format!("rpforest[{t}]: internal node {n} has an empty child"));
                        }
                    }
                    stack.push(*left);
                    stack.push(*right);
                }
                Node::Leaf(ids) => {
                    if ids.len() > cap && !all_identical(store, ids) {
                        out.push(format!("rpforest[{t}]: leaf {n} over capacity"));
                    }
                    for &id in ids {
                        if !store.contains(id) {
                            out.push(format!("rpforest[{t}]: unknown id {id}"));
                            continue;
                        }
                        if std::mem::replace(&mut seen[id.index()], true) {
                            out.push(format!("rpforest[{t}]: id {id} in two leaves"));
                        }
                        if self.leaf_of(id) != Some(n) {
                            out.push(format!("rpforest[{t}]: stale locator for {id}"));
                        }
                    }
                }
                Node::Free => out.push(format!("rpforest[{t}]: free slot {n} reachable")),
            }
        }
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            out.push(format!("rpforest[{t}]: {missing} ids in no leaf"));
        }
    }
}

fn all_identical<T: Scalar>(store: &DatasetStore<T>, ids: &[VectorId]) -> bool {
    ids.iter().all(|&id| store.row(id) == store.row(ids[0]))
}

struct Pending {
    priority: f64,
    tree: u32,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

#[derive(Debug, Clone)]
pub struct RpForest<T> {
    params: RpForestParams,
    seed: u64,
    trees: Vec<RpTree>,
    events_since_rebuild: usize,
    rebuild_count: usize,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> RpForest<T> {
    pub fn new(params: RpForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 || params.leaf_capacity == 0 {
            return Err(Error::InvalidParameter(
                "rpforest: n_trees and leaf_capacity must be >= 1".into(),
            ));
        }
        let trees = (0..params.n_trees)
            .map(|t| RpTree::new(rng::derive_seed(seed, t as u64)))
            .collect();
        Ok(Self {
            params,
            seed,
            trees,
            events_since_rebuild: 0,
            rebuild_count: 0,
            _scalar: PhantomData,
        })
    }

    pub fn params(&self) -> &RpForestParams {
        &self.params
    }

    pub fn set_search_k(&mut self, search_k: Option<usize>) {
        self.params.search_k = search_k;
    }

    pub fn trees(&self) -> &[RpTree] {
        &self.trees
    }

    pub fn rebuild_count(&self) -> usize {
        self.rebuild_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rp_build(&mut self, store: &DatasetStore<T>) {
        let cap = self.params.leaf_capacity;
        for t in &mut self.trees {
            t.build(store, cap);
        }
        self.events_since_rebuild = 0;
    }

    pub fn rp_insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        if !store.contains(id) {
            return Err(Error::UnknownId(id));
        }
        if self.trees[0].leaf_of(id).is_some() {
            return Err(Error::DuplicateId(id));
        }
        let cap = self.params.leaf_capacity;
        for t in &mut self.trees {
            t.insert(store, id, cap);
        }
        self.events_since_rebuild += 1;
        Ok(())
    }

    pub fn rp_update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        if self.trees[0].leaf_of(id).is_none() || !store.contains(id) {
            return Err(Error::UnknownId(id));
        }
        let cap = self.params.leaf_capacity;
        for t in &mut self.trees {
            t.remove(id);
            t.insert(store, id, cap);
        }
        self.events_since_rebuild += 1;
        Ok(())
    }

    /// Rebuilds the whole forest once `rebuild_every` events have accrued.
    pub fn maintain(&mut self, store: &DatasetStore<T>) -> bool {
        let due = self.params.rebuild_every > 0 && self.events_since_rebuild >= self.params.rebuild_every;
        if due {
            self.rp_build(store);
            self.rebuild_count += 1;
        }
        due
    }

    pub fn rp_search(
        &self,
        store: &DatasetStore<T>,
        query: &[T],
        k: usize,
        search_k: usize,
    ) -> Result<NeighbourList> {
        check_vector(store.dim(), query)?;
        if search_k < k {
            return Err(Error::InvalidParameter(format!(
                "rpforest: search_k ({search_k}) must be >= k ({k})"
            )));
        }
        let mut heap = BinaryHeap::new();
        for (t, tree) in self.trees.iter().enumerate() {
            heap.push(Pending { priority: f64::INFINITY, tree: t as u32, node: tree.root });
        }
        let mut seen = vec![false; store.len()];
        let mut candidates: Vec<VectorId> = Vec::with_capacity(search_k);
        while candidates.len() < search_k {
            let Some(p) = heap.pop() else { break };
            let tree = &self.trees[p.tree as usize];
            match &tree.nodes[p.node as usize] {
                Node::Leaf(ids) => {
                    for &id in ids {
                        if !std::mem::replace(&mut seen[id.index()], true) {
                            candidates.push(id);
                        }
                    }
                }
                Node::Internal { plane, left, right } => {
                    let m = plane.signed_distance(query);
                    heap.push(Pending { priority: p.priority.min(m), tree: p.tree, node: *left });
                    heap.push(Pending { priority: p.priority.min(-m), tree: p.tree, node: *right });
                }
                Node::Free => unreachable!(),
            }
        }
        let mut top = TopK::new(k);
        for id in candidates {
            top.push(id, l2_sq(query, store.row(id)));
        }
        Ok(top.into_list())
    }

    pub fn audit_structure(&self, store: &DatasetStore<T>) -> Vec<String> {
        let mut out = Vec::new();
        for (t, tree) in self.trees.iter().enumerate() {
            tree.audit(t, store, self.params.leaf_capacity, &mut out);
        }
        out
    }
}

impl<T: Scalar> DynamicIndex<T> for RpForest<T> {
    fn method(&self) -> &'static str {
        "rpforest"
    }
    fn build(&mut self, store: &DatasetStore<T>) -> Result<()> {
        self.rp_build(store);
        Ok(())
    }
    fn insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.rp_insert(store, id)
    }
    fn update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.rp_update(store, id)
    }
    fn end_event_block(&mut self, store: &DatasetStore<T>) -> Result<()> {
        self.maintain(store);
        Ok(())
    }
    fn search(&mut self, store: &DatasetStore<T>, query: &[T], k: usize) -> Result<NeighbourList> {
        let sk = self.params.search_k.unwrap_or(self.params.n_trees * k).max(k);
        self.rp_search(store, query, k, sk)
    }
    fn memory_bytes(&self) -> usize {
        self.trees
            .iter()
            .map(|t| {
                let nodes: usize = t
                    .nodes
                    .iter()
                    .map(|n| match n {
                        Node::Internal { plane, .. } => plane.normal.capacity() * 8,
                        Node::Leaf(ids) => ids.capacity() * 8,
                        Node::Free => 0,
                    })
                    .sum();
                nodes
                    + t.nodes.capacity() * std::mem::size_of::<Node>()
                    + (t.parent.capacity() + t.leaf_of.capacity() + t.free.capacity()) * 4
            })
            .sum()
    }
    fn audit(&self, store: &DatasetStore<T>) -> Vec<String> {
        self.audit_structure(store)
    }
}
