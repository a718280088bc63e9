//! Hierarchical navigable small world graph.
//!
//! Node ids are store ids. Each node keeps per-layer out-lists and the
//! matching in-lists, so an update can unlink a node exactly before it is
//! reinserted at its original level.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::marker::PhantomData;

use serde::Serialize;

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::index::DynamicIndex;
use crate::neighbours::{Neighbour, NeighbourList};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::store::{check_vector, DatasetStore, VectorId};

const ISLAND_BUDGET: usize = 64;
/// Inserts between full layer-0 reachability passes.
const RECHECK_EVERY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub ml: f64,
}

impl HnswParams {
    pub fn with_m(m: usize) -> Self {
        Self {
            m,
            ef_construction: 200,
            ef_search: 100,
            ml: 1.0 / (m as f64).ln(),
        }
    }

    pub fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidParameter("hnsw: m must be >= 2".into()));
        }
        if self.ef_construction < self.m {
            return Err(Error::InvalidParameter("hnsw: ef_construction must be >= m".into()));
        }
        if self.ef_search == 0 || !(self.ml.is_finite() && self.ml > 0.0) {
            return Err(Error::InvalidParameter("hnsw: ef_search >= 1 and ml > 0 required".into()));
        }
        Ok(())
    }
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::with_m(16)
    }
}

/// `floor(-ln(u) * ml)` for a uniform draw `u` in `(0, 1]`.
pub fn assign_level(u: f64, ml: f64) -> Result<usize> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidParameter(format!("level draw {u} outside (0, 1]")));
    }
    Ok((-u.ln() * ml).floor() as usize)
}

/// Candidate with canonical `(dist, id)` order.
#[derive(Debug, Clone, Copy)]
struct Cand {
    dist: f64,
    id: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Cand {}
impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

/// Neighbour selection heuristic.
///
/// `candidates` are `(distance to base, id)` sorted ascending. A candidate
/// is admitted iff it is strictly closer to the base than to every
/// neighbour admitted before it; selection stops at `m`.
pub fn select_neighbours_heuristic(
    candidates: &[(f64, u32)],
    m: usize,
    mut dist_between: impl FnMut(u32, u32) -> f64,
) -> Vec<u32> {
    let mut out: Vec<u32> = Vec::with_capacity(m);
    for &(d, c) in candidates {
        if out.len() >= m {
            break;
        }
        if out.iter().all(|&r| d < dist_between(c, r)) {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    stamp: u32,
    visited: Vec<u32>,
}

impl Scratch {
    fn begin(&mut self, n: usize) {
        if self.visited.len() < n {
            self.visited.resize(n, 0);
        }
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.visited.iter_mut().for_each(|v| *v = 0);
            self.stamp = 1;
        }
    }

    /// Marks `id`; false if it was already visited this round.
    #[inline]
    fn visit(&mut self, id: u32) -> bool {
        let slot = &mut self.visited[id as usize];
        if *slot == self.stamp {
            false
        } else {
            *slot = self.stamp;
            true
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub top_level: usize,
    pub entry_point: Option<u64>,
    /// Nodes present in each layer, layer 0 first.
    pub layer_counts: Vec<usize>,
    /// `degree_histogram[l][d]` = nodes with out-degree `d` in layer `l`.
    pub degree_histogram: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Hnsw<T> {
    params: HnswParams,
    rng: Rng,
    /// `links[id][layer]`, out-lists.
    links: Vec<Vec<Vec<u32>>>,
    /// `inbound[id][layer]`, the nodes listing `id`.
    inbound: Vec<Vec<Vec<u32>>>,
    present: Vec<bool>,
    count: usize,
    entry: Option<u32>,
    top: usize,
    scratch: Scratch,
    defer_repairs: bool,
    pending: BTreeSet<(usize, u32)>,
    /// `(layer, node)` left with no in-links by an edge removal.
    orphans: BTreeSet<(usize, u32)>,
    /// Layer-0 nodes that lost an in-link but kept others.
    suspects: Vec<u32>,
    inserts_since_check: usize,
    repairs: usize,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> Hnsw<T> {
    pub fn new(params: HnswParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            rng: rng::seeded(seed),
            links: Vec::new(),
            inbound: Vec::new(),
            present: Vec::new(),
            count: 0,
            entry: None,
            top: 0,
            scratch: Scratch::default(),
            defer_repairs: false,
            pending: BTreeSet::new(),
            orphans: BTreeSet::new(),
            suspects: Vec::new(),
            inserts_since_check: 0,
            repairs: 0,
            _scalar: PhantomData,
        })
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn set_ef_search(&mut self, ef: usize) {
        self.params.ef_search = ef;
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_none()
    }

    pub fn entry_point(&self) -> Option<VectorId> {
        self.entry.map(|e| VectorId(e as u64))
    }

    pub fn top_level(&self) -> usize {
        self.top
    }

    pub fn level_of(&self, id: VectorId) -> Option<usize> {
        self.has(id.index()).then(|| self.links[id.index()].len() - 1)
    }

    pub fn neighbours(&self, id: VectorId, layer: usize) -> &[u32] {
        &self.links[id.index()][layer]
    }

    /// Neighbour lists repaired so far.
    pub fn repairs(&self) -> usize {
        self.repairs
    }

    fn has(&self, i: usize) -> bool {
        self.present.get(i).copied().unwrap_or(false)
    }

    fn dist(store: &DatasetStore<T>, a: &[T], b: u32) -> f64 {
        l2_sq(a, store.row(VectorId(b as u64)))
    }

    /// Best-first expansion of one layer keeping the `ef` closest.
    fn search_layer(
        &mut self,
        store: &DatasetStore<T>,
        query: &[T],
        entries: &[Cand],
        ef: usize,
        layer: usize,
    ) -> Vec<Cand> {
        self.scratch.begin(store.len());
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut best: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in entries {
            if self.scratch.visit(e.id) {
                frontier.push(Reverse(e));
                best.push(e);
                if best.len() > ef {
                    best.pop();
                }
            }
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if best.len() >= ef && c > *best.peek().expect("non-empty") {
                break;
            }
            for &n in &self.links[c.id as usize][layer] {
                if !self.scratch.visit(n) {
                    continue;
                }
                let cand = Cand { dist: Self::dist(store, query, n), id: n };
                if best.len() < ef || cand < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Public layer search: entry ids, beam width and layer, canonical order.
    pub fn search_layer_ids(
        &mut self,
        store: &DatasetStore<T>,
        query: &[T],
        entries: &[VectorId],
        ef: usize,
        layer: usize,
    ) -> NeighbourList {
        let entries: Vec<Cand> = entries
            .iter()
            .map(|&e| Cand { dist: l2_sq(query, store.row(e)), id: e.0 as u32 })
            .collect();
        let found = self.search_layer(store, query, &entries, ef.max(1), layer);
        NeighbourList::from_unsorted(
            found.into_iter().map(|c| Neighbour::new(VectorId(c.id as u64), c.dist)).collect(),
            usize::MAX,
        )
    }

    fn select(&self, store: &DatasetStore<T>, cands: &[Cand], m: usize) -> Vec<u32> {
        let pairs: Vec<(f64, u32)> = cands.iter().map(|c| (c.dist, c.id)).collect();
        select_neighbours_heuristic(&pairs, m, |a, b| {
            l2_sq(store.row(VectorId(a as u64)), store.row(VectorId(b as u64)))
        })
    }

    fn set_links(&mut self, node: u32, layer: usize, new: Vec<u32>) {
        let old = std::mem::take(&mut self.links[node as usize][layer]);
        for &o in &old {
            if !new.contains(&o) {
                let inb = &mut self.inbound[o as usize][layer];
                let p = inb.iter().position(|&x| x == node).expect("inbound mirror");
                inb.swap_remove(p);
                if inb.is_empty() {
                    self.orphans.insert((layer, o));
                } else if layer == 0 {
                    self.suspects.push(o);
                }
            }
        }
        for &n in &new {
            if !old.contains(&n) {
                self.inbound[n as usize][layer].push(node);
            }
        }
        self.links[node as usize][layer] = new;
    }

    fn add_link(&mut self, from: u32, to: u32, layer: usize) {
        self.links[from as usize][layer].push(to);
        self.inbound[to as usize][layer].push(from);
    }

    fn ensure_slot(&mut self, i: usize) {
        if i >= self.links.len() {
            self.links.resize_with(i + 1, Vec::new);
            self.inbound.resize_with(i + 1, Vec::new);
            self.present.resize(i + 1, false);
        }
    }

    /// Greedy descent from the entry point down to `stop` (exclusive).
    fn descend(&mut self, store: &DatasetStore<T>, query: &[T], stop: usize) -> Vec<Cand> {
        let e = self.entry.expect("non-empty graph");
        let mut eps = vec![Cand { dist: Self::dist(store, query, e), id: e }];
        let mut l = self.top;
        while l > stop {
            eps = self.search_layer(store, query, &eps, 1, l);
            l -= 1;
        }
        eps
    }

    /// Links an edge-free node with the given level into the graph.
    fn link_in(&mut self, store: &DatasetStore<T>, node: u32, level: usize) {
        let Some(_) = self.entry else {
            self.entry = Some(node);
            self.top = level;
            return;
        };
        let q = store.row(VectorId(node as u64));
        let mut eps = self.descend(store, q, level);
        for l in (0..=level.min(self.top)).rev() {
            let found = self.search_layer(store, q, &eps, self.params.ef_construction, l);
            let found_others: Vec<Cand> = found.iter().copied().filter(|c| c.id != node).collect();
            let chosen = self.select(store, &found_others, self.params.m);
            for &n in &chosen {
                self.add_link(node, n, l);
                self.add_link(n, node, l);
                if self.links[n as usize][l].len() > self.params.max_degree(l) {
                    self.shrink(store, n, l);
                }
            }
            eps = found_others;
            if eps.is_empty() {
                eps = found;
            }
        }
        if level > self.top {
            self.top = level;
            self.entry = Some(node);
        }
    }

    fn shrink(&mut self, store: &DatasetStore<T>, node: u32, layer: usize) {
        let base = store.row(VectorId(node as u64));
        let mut cands: Vec<Cand> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Cand { dist: Self::dist(store, base, n), id: n })
            .collect();
        cands.sort();
        let kept = self.select(store, &cands, self.params.max_degree(layer));
        self.set_links(node, layer, kept);
    }

    pub fn hnsw_insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        if !store.contains(id) {
            return Err(Error::UnknownId(id));
        }
        let i = id.index();
        if self.has(i) {
            return Err(Error::DuplicateId(id));
        }
        let level = assign_level(rng::uniform_open0(&mut self.rng), self.params.ml)?;
        self.ensure_slot(i);
        self.links[i] = vec![Vec::new(); level + 1];
        self.inbound[i] = vec![Vec::new(); level + 1];
        self.present[i] = true;
        self.count += 1;
        self.link_in(store, i as u32, level);
        self.reattach_orphans(store);
        self.check_suspects(store);
        self.inserts_since_check += 1;
        if self.inserts_since_check >= RECHECK_EVERY {
            self.reconnect_unreachable(store);
        }
        Ok(())
    }

    /// Unlinks `id`, reinserts it at its level and repairs thinned lists.
    pub fn hnsw_update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.update_inner(store, id)?;
        self.run_repairs(store);
        self.reattach_orphans(store);
        self.suspects.clear();
        self.reconnect_unreachable(store);
        Ok(())
    }

    fn update_inner(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        let i = id.index();
        if !self.has(i) || !store.contains(id) {
            return Err(Error::UnknownId(id));
        }
        let node = i as u32;
        if self.count == 1 {
            return Ok(());
        }
        let level = self.links[i].len() - 1;
        let threshold = self.params.m / 2;
        for l in 0..=level {
            for n in std::mem::take(&mut self.links[i][l]) {
                let inb = &mut self.inbound[n as usize][l];
                let p = inb.iter().position(|&x| x == node).expect("inbound mirror");
                inb.swap_remove(p);
                if inb.is_empty() {
                    self.orphans.insert((l, n));
                }
            }
            for p in std::mem::take(&mut self.inbound[i][l]) {
                let out = &mut self.links[p as usize][l];
                let pos = out.iter().position(|&x| x == node).expect("outbound mirror");
                out.remove(pos);
                if out.len() < threshold {
                    self.pending.insert((l, p));
                }
            }
        }
        if self.entry == Some(node) {
            self.reselect_entry(node);
        }
        self.link_in(store, node, level);
        Ok(())
    }

    fn reselect_entry(&mut self, excluded: u32) {
        let mut best: Option<(usize, u32)> = None;
        for (i, l) in self.links.iter().enumerate() {
            if !self.present[i] || i as u32 == excluded {
                continue;
            }
            let lv = l.len() - 1;
            if best.is_none_or(|(b, _)| lv > b) {
                best = Some((lv, i as u32));
            }
        }
        let (lv, e) = best.expect("another node exists");
        self.entry = Some(e);
        self.top = lv;
    }

    fn run_repairs(&mut self, store: &DatasetStore<T>) {
        let pending = std::mem::take(&mut self.pending);
        for (l, p) in pending {
            if self.links[p as usize][l].len() >= self.params.m / 2 {
                continue;
            }
            let base = store.row(VectorId(p as u64));
            let eps = if self.links[p as usize][l].is_empty() {
                // Isolated at this layer: start from the global entry.
                self.descend(store, base, l)
            } else {
                vec![Cand { dist: 0.0, id: p }]
            };
            let found: Vec<Cand> = self
                .search_layer(store, base, &eps, self.params.ef_construction, l)
                .into_iter()
                .filter(|c| c.id != p)
                .collect();
            let mut chosen = self.select(store, &found, self.params.m);
            // Existing links survive the repair.
            for &n in &self.links[p as usize][l] {
                if !chosen.contains(&n) {
                    chosen.push(n);
                }
            }
            chosen.truncate(self.params.max_degree(l).max(self.links[p as usize][l].len()));
            self.set_links(p, l, chosen);
            self.repairs += 1;
        }
    }

    /// Gives every node left without in-links one again.
    fn reattach_orphans(&mut self, store: &DatasetStore<T>) {
        while let Some((l, n)) = self.orphans.pop_first() {
            if self.has(n as usize)
                && self.links[n as usize].len() > l
                && self.inbound[n as usize][l].is_empty()
                && self.entry != Some(n)
            {
                self.attach(store, l, n);
            }
        }
    }

    /// Adds an in-link to `n` at `layer` from the nearest node reachable
    /// from the entry point. A full node `c` makes room by swapping a link
    /// `c -> w` for `c -> n` only when `n -> w` exists (or can be added),
    /// so nothing reachable before becomes unreachable. False when no
    /// link could be placed.
    fn attach(&mut self, store: &DatasetStore<T>, layer: usize, n: u32) -> bool {
        let base = store.row(VectorId(n as u64));
        // On layer 0 the search must stay on layer-0 links from the entry,
        // since descending through upper layers can land outside the part
        // of layer 0 the entry reaches.
        let eps = if layer == 0 {
            let e = self.entry.expect("non-empty graph");
            vec![Cand { dist: Self::dist(store, base, e), id: e }]
        } else {
            self.descend(store, base, layer)
        };
        let found: Vec<Cand> = self
            .search_layer(store, base, &eps, self.params.ef_construction, layer)
            .into_iter()
            .filter(|c| c.id != n && !self.links[c.id as usize][layer].contains(&n))
            .collect();
        let cap = self.params.max_degree(layer);
        if let Some(c) = found.iter().find(|c| self.links[c.id as usize][layer].len() < cap) {
            self.add_link(c.id, n, layer);
            return true;
        }
        let farthest_shared = |h: &Self, c: u32| -> Option<u32> {
            let from = store.row(VectorId(c as u64));
            h.links[c as usize][layer]
                .iter()
                .filter(|w| h.links[n as usize][layer].contains(w))
                .map(|&w| Cand { dist: Self::dist(store, from, w), id: w })
                .max()
                .map(|w| w.id)
        };
        for c in &found {
            if let Some(w) = farthest_shared(self, c.id) {
                self.replace_link(c.id, w, n, layer);
                return true;
            }
        }
        if let Some(c) = found.first() {
            if self.links[n as usize][layer].len() < cap {
                let from = store.row(VectorId(c.id as u64));
                let w = self.links[c.id as usize][layer]
                    .iter()
                    .filter(|&&w| w != n)
                    .map(|&w| Cand { dist: Self::dist(store, from, w), id: w })
                    .max()
                    .map(|w| w.id);
                if let Some(w) = w {
                    self.add_link(n, w, layer);
                    self.replace_link(c.id, w, n, layer);
                    return true;
                }
            }
        }
        false
    }

    fn replace_link(&mut self, from: u32, old: u32, new: u32, layer: usize) {
        let out = &mut self.links[from as usize][layer];
        let pos = out.iter().position(|&x| x == old).expect("link present");
        out[pos] = new;
        let inb = &mut self.inbound[old as usize][layer];
        let p = inb.iter().position(|&x| x == from).expect("inbound mirror");
        inb.swap_remove(p);
        self.inbound[new as usize][layer].push(from);
    }

    fn reachable_from_entry(&self) -> Vec<bool> {
        let mut seen = vec![false; self.links.len()];
        if let Some(e) = self.entry {
            self.mark_from(e, &mut seen);
        }
        seen
    }

    /// True when every node with a layer-0 path to `n` is known and the
    /// entry point is not among them, i.e. `n` is cut off. Gives up (false)
    /// after `ISLAND_BUDGET` nodes.
    fn cut_off(&self, n: u32) -> bool {
        let Some(e) = self.entry else { return false };
        let mut seen = vec![n];
        let mut at = 0;
        while at < seen.len() {
            let x = seen[at];
            at += 1;
            for &p in &self.inbound[x as usize][0] {
                if p == e {
                    return false;
                }
                if !seen.contains(&p) {
                    if seen.len() >= ISLAND_BUDGET {
                        return false;
                    }
                    seen.push(p);
                }
            }
        }
        n != e
    }

    fn check_suspects(&mut self, store: &DatasetStore<T>) {
        while let Some(n) = self.suspects.pop() {
            if self.cut_off(n) {
                self.attach(store, 0, n);
            }
            self.reattach_orphans(store);
        }
    }

    fn mark_from(&self, start: u32, seen: &mut [bool]) {
        let mut stack = vec![start];
        seen[start as usize] = true;
        while let Some(n) = stack.pop() {
            for &m in &self.links[n as usize][0] {
                if !std::mem::replace(&mut seen[m as usize], true) {
                    stack.push(m);
                }
            }
        }
    }

    /// Attaches every layer-0 node the entry point cannot reach.
    fn reconnect_unreachable(&mut self, store: &DatasetStore<T>) {
        self.inserts_since_check = 0;
        for _ in 0..4 {
            let mut seen = self.reachable_from_entry();
            let lost: Vec<u32> = (0..self.links.len() as u32)
                .filter(|&i| self.present[i as usize] && !seen[i as usize])
                .collect();
            if lost.is_empty() {
                return;
            }
            for u in lost {
                if !seen[u as usize] {
                    if self.attach(store, 0, u) {
                        self.mark_from(u, &mut seen);
                    }
                }
            }
            self.reattach_orphans(store);
        }
    }

    pub fn hnsw_build(&mut self, store: &DatasetStore<T>) -> Result<()> {
        for id in store.snapshot_ids() {
            self.hnsw_insert(store, id)?;
        }
        Ok(())
    }

    pub fn hnsw_search(
        &mut self,
        store: &DatasetStore<T>,
        query: &[T],
        k: usize,
        ef: usize,
    ) -> Result<NeighbourList> {
        check_vector(store.dim(), query)?;
        if ef < k {
            return Err(Error::InvalidParameter(format!("hnsw: ef_search ({ef}) must be >= k ({k})")));
        }
        if self.entry.is_none() {
            return Ok(NeighbourList::default());
        }
        let eps = self.descend(store, query, 0);
        let found = self.search_layer(store, query, &eps, ef, 0);
        Ok(NeighbourList::from_unsorted(
            found.into_iter().map(|c| Neighbour::new(VectorId(c.id as u64), c.dist)).collect(),
            k,
        ))
    }

    pub fn graph_stats(&self) -> GraphStats {
        let mut layer_counts = vec![0; self.top + 1];
        let mut degree_histogram = vec![Vec::new(); self.top + 1];
        for (i, lists) in self.links.iter().enumerate() {
            if !self.present[i] {
                continue;
            }
            for (l, list) in lists.iter().enumerate() {
                if l >= layer_counts.len() {
                    layer_counts.resize(l + 1, 0);
                    degree_histogram.resize(l + 1, Vec::new());
                }
                layer_counts[l] += 1;
                let h: &mut Vec<usize> = &mut degree_histogram[l];
                if h.len() <= list.len() {
                    h.resize(list.len() + 1, 0);
                }
                h[list.len()] += 1;
            }
        }
        GraphStats {
            nodes: self.len(),
            top_level: self.top,
            entry_point: self.entry.map(u64::from),
            layer_counts,
            degree_histogram,
        }
    }

    pub fn graph_stats_json(&self) -> String {
        serde_json::to_string_pretty(&self.graph_stats()).expect("plain data serialises")
    }

    /// Nodes not reachable from the entry point through layer-0 links.
    pub fn unreachable_count(&self) -> usize {
        let seen = self.reachable_from_entry();
        self.present.iter().zip(&seen).filter(|(p, s)| **p && !**s).count()
    }

    pub fn audit_structure(&self, store: &DatasetStore<T>) -> Vec<String> {
        let mut out = Vec::new();
        let mut max_level = 0;
        for i in 0..store.len() {
            if !self.has(i) {
                out.push(format!("hnsw: id {i} missing from graph"));
            }
        }
        for (i, lists) in self.links.iter().enumerate() {
            if !self.present[i] {
                continue;
            }
            max_level = max_level.max(lists.len() - 1);
            for (l, list) in lists.iter().enumerate() {
                if list.len() > self.params.max_degree(l) {
                    out.push(format!("hnsw: node {i} layer {l} degree {} over bound", list.len()));
                }
                let mut sorted = list.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != list.len() {
                    out.push(format!("hnsw: node {i} layer {l} has duplicate links"));
                }
                for &n in list {
                    if n as usize == i {
                        out.push(format!("hnsw: node {i} links to itself"));
                    } else if !self.has(n as usize) || self.links[n as usize].len() <= l {
                        out.push(format!("hnsw: node {i} layer {l} links to absent {n}"));
                    } else if !self.inbound[n as usize][l].contains(&(i as u32)) {
                        out.push(format!("hnsw: inbound mirror of {i}->{n} missing"));
                    }
                }
                for &p in &self.inbound[i][l] {
                    if !self.links[p as usize].get(l).is_some_and(|o| o.contains(&(i as u32))) {
                        out.push(format!("hnsw: stale inbound {p}->{i}"));
                    }
                }
            }
        }
        if let Some(e) = self.entry {
            if self.links[e as usize].len() - 1 != self.top || self.top != max_level {
                out.push(format!("hnsw: entry point {e} not on top layer"));
            }
        }
        let lost = self.unreachable_count();
        if lost > 0 {
            out.push(format!("hnsw: {lost} nodes unreachable on layer 0"));
        }
        out
    }
}

impl<T: Scalar> DynamicIndex<T> for Hnsw<T> {
    fn method(&self) -> &'static str {
        "hnsw"
    }
    fn build(&mut self, store: &DatasetStore<T>) -> Result<()> {
        self.hnsw_build(store)
    }
    fn insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.hnsw_insert(store, id)
    }
    /// Repairs are deferred to the end of the event block, so a list thinned
    /// several times within one block is rebuilt once.
    fn update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.defer_repairs = true;
        self.update_inner(store, id)
    }
    fn end_event_block(&mut self, store: &DatasetStore<T>) -> Result<()> {
        if self.defer_repairs {
            self.run_repairs(store);
            self.reattach_orphans(store);
            self.suspects.clear();
            self.reconnect_unreachable(store);
            self.defer_repairs = false;
        }
        Ok(())
    }
    fn search(&mut self, store: &DatasetStore<T>, query: &[T], k: usize) -> Result<NeighbourList> {
        let ef = self.params.ef_search.max(k);
        self.hnsw_search(store, query, k, ef)
    }
    fn memory_bytes(&self) -> usize {
        let lists: usize = self
            .links
            .iter()
            .chain(&self.inbound)
            .map(|ls| ls.capacity() * 24 + ls.iter().map(|l| l.capacity() * 4).sum::<usize>())
            .sum();
        lists + self.present.capacity() + self.scratch.visited.capacity() * 4
    }
    fn audit(&self, store: &DatasetStore<T>) -> Vec<String> {
        self.audit_structure(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::exact_knn;
    use crate::io::{gen_synthetic, SyntheticSpec};
    use crate::store::Event;

    fn synthetic(n: usize, seed: u64) -> DatasetStore<f32> {
        let spec = SyntheticSpec { n, dim: 16, clusters: 20, spread: 0.1, seed };
        let data = gen_synthetic::<f32>(&spec).unwrap();
        DatasetStore::from_rows(16, &data.vectors).unwrap()
    }

    fn built(store: &DatasetStore<f32>, params: HnswParams) -> Hnsw<f32> {
        let mut h = Hnsw::new(params, 7).unwrap();
        h.hnsw_build(store).unwrap();
        h
    }

    fn recall(h: &mut Hnsw<f32>, s: &DatasetStore<f32>, queries: &[Vec<f32>], ef: usize) -> f64 {
        let mut total = 0.0;
        for q in queries {
            let truth: BTreeSet<_> = exact_knn(s, q, 10).unwrap().ids().into_iter().collect();
            let got = h.hnsw_search(s, q, 10, ef).unwrap().ids();
            total += got.iter().filter(|i| truth.contains(i)).count() as f64 / truth.len() as f64;
        }
        total / queries.len() as f64
    }

    #[test]
    fn level_closed_forms() {
        assert_eq!(assign_level(1.0, 0.36).unwrap(), 0);
        assert_eq!(assign_level((-1.0f64).exp(), 1.0).unwrap(), 1);
        assert!(assign_level(0.0, 1.0).is_err());
        let ml = 1.0 / 16f64.ln();
        let mut r = rng::seeded(11);
        let hits = (0..100_000)
            .filter(|_| assign_level(rng::uniform_open0(&mut r), ml).unwrap() >= 1)
            .count();
        assert!((hits as f64 / 1e5 - 1.0 / 16.0).abs() < 0.01);
    }

    #[test]
    fn heuristic_on_a_line() {
        let pts = [0.0f64, 1.0, 2.0, 10.0];
        let d = |a: u32, b: u32| (pts[a as usize] - pts[b as usize]).powi(2);
        assert_eq!(select_neighbours_heuristic(&[(1.0, 1)], 2, d), vec![1]);
        // [10] is nearer to [1] (81) than to the base (100), so it is pruned
        // like [2].
        let cands = [(1.0, 1), (4.0, 2), (100.0, 3)];
        assert_eq!(select_neighbours_heuristic(&cands, 2, d), vec![1]);
        let spread = [0.0f64, 1.0, -1.5, 4.0];
        let d2 = |a: u32, b: u32| (spread[a as usize] - spread[b as usize]).powi(2);
        let cands = [(1.0, 1), (2.25, 2), (16.0, 3)];
        assert_eq!(select_neighbours_heuristic(&cands, 2, d2), vec![1, 2]);
    }

    proptest::proptest! {
        #[test]
        fn heuristic_output_is_a_prefix_respecting_subset(
            pts in proptest::collection::vec(-100.0f64..100.0, 2..30),
            m in 1usize..8,
        ) {
            let d = |a: u32, b: u32| (pts[a as usize] - pts[b as usize]).powi(2);
            let mut cands: Vec<(f64, u32)> = (1..pts.len() as u32).map(|i| (d(0, i), i)).collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let out = select_neighbours_heuristic(&cands, m, d);
            proptest::prop_assert!(out.len() <= m);
            proptest::prop_assert_eq!(out[0], cands[0].1);
            for o in &out {
                proptest::prop_assert!(cands.iter().any(|c| c.1 == *o));
            }
        }
    }

    #[test]
    fn first_and_second_insert() {
        let s = DatasetStore::from_rows(2, &[[0.0f32, 0.0], [1.0, 0.0]]).unwrap();
        let mut h = Hnsw::<f32>::new(HnswParams::default(), 1).unwrap();
        h.hnsw_insert(&s, VectorId(0)).unwrap();
        assert_eq!(h.entry_point(), Some(VectorId(0)));
        assert!(h.neighbours(VectorId(0), 0).is_empty());
        let one = h.hnsw_search(&s, &[5.0, 5.0], 1, 1).unwrap();
        assert_eq!(one.ids(), vec![VectorId(0)]);
        h.hnsw_insert(&s, VectorId(1)).unwrap();
        assert_eq!(h.neighbours(VectorId(0), 0), &[1]);
        assert_eq!(h.neighbours(VectorId(1), 0), &[0]);
        assert!(matches!(h.hnsw_insert(&s, VectorId(1)), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn single_node_update_changes_nothing() {
        let mut s = DatasetStore::from_rows(2, &[[0.0f32, 0.0]]).unwrap();
        let mut h = Hnsw::<f32>::new(HnswParams::default(), 1).unwrap();
        h.hnsw_build(&s).unwrap();
        s.apply_event(&Event::Update(VectorId(0), vec![3.0, 3.0])).unwrap();
        h.hnsw_update(&s, VectorId(0)).unwrap();
        assert_eq!(h.entry_point(), Some(VectorId(0)));
        assert!(h.audit_structure(&s).is_empty());
        assert!(h.hnsw_update(&s, VectorId(4)).is_err());
    }

    #[test]
    fn complete_graph_layer_is_exact() {
        let s = synthetic(50, 3);
        let mut h = Hnsw::<f32>::new(HnswParams::default(), 1).unwrap();
        h.ensure_slot(49);
        for i in 0..50u32 {
            h.present[i as usize] = true;
            h.links[i as usize] = vec![(0..50).filter(|&j| j != i).collect()];
            h.inbound[i as usize] = vec![Vec::new()];
        }
        h.entry = Some(0);
        let mut r = rng::seeded(4);
        for _ in 0..20 {
            let q: Vec<f32> = (0..16).map(|_| rng::uniform(&mut r) as f32).collect();
            for ef in [10, 20, 50] {
                let got = h.search_layer_ids(&s, &q, &[VectorId(0)], ef, 0);
                let want = exact_knn(&s, &q, ef).unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn build_respects_bounds_and_connectivity() {
        let s = synthetic(2000, 5);
        let h = built(&s, HnswParams::default());
        assert!(h.audit_structure(&s).is_empty(), "{:?}", h.audit_structure(&s));
        let stats = h.graph_stats();
        assert_eq!(stats.nodes, 2000);
        assert_eq!(stats.layer_counts[0], 2000);
        let json: serde_json::Value = serde_json::from_str(&h.graph_stats_json()).unwrap();
        assert_eq!(json["nodes"], 2000);
    }

    #[test]
    fn insertion_is_deterministic() {
        let s = synthetic(500, 6);
        let a = built(&s, HnswParams::default());
        let b = built(&s, HnswParams::default());
        assert_eq!(a.links, b.links);
        assert_eq!(a.entry, b.entry);
    }

    #[test]
    fn stored_vector_is_found() {
        let s = synthetic(1000, 8);
        let mut h = built(&s, HnswParams::default());
        for i in (0..1000).step_by(97) {
            let got = h.hnsw_search(&s, s.row(VectorId(i)), 10, 200).unwrap();
            assert!(got.ids().contains(&VectorId(i)));
        }
        assert!(h.hnsw_search(&s, s.row(VectorId(0)), 10, 5).is_err());
    }

    #[test]
    fn recall_monotone_in_ef() {
        let s = synthetic(3000, 9);
        let mut h = built(&s, HnswParams { ef_construction: 64, ..HnswParams::with_m(6) });
        let queries: Vec<Vec<f32>> = (0..200).map(|i| synthetic(200, 10).row(VectorId(i)).to_vec()).collect();
        let mut prev = 0.0;
        for ef in [50, 100, 200, 400] {
            let r = recall(&mut h, &s, &queries, ef);
            assert!(r + 0.02 >= prev, "ef={ef}: {r} < {prev}");
            prev = r;
        }
    }

    #[test]
    fn updates_keep_graph_healthy() {
        let mut s = synthetic(5000, 12);
        let p = HnswParams { ef_construction: 100, ..HnswParams::with_m(12) };
        let mut h = built(&s, p);
        let mut r = rng::seeded(13);
        for step in 0..20_000 {
            let id = VectorId(rng::below(&mut r, s.len()) as u64);
            let v: Vec<f32> = (0..16).map(|_| rng::uniform(&mut r) as f32).collect();
            s.apply_event(&Event::Update(id, v)).unwrap();
            if step % 2 == 0 {
                h.hnsw_update(&s, id).unwrap();
            } else {
                DynamicIndex::update(&mut h, &s, id).unwrap();
                DynamicIndex::end_event_block(&mut h, &s).unwrap();
            }
            if step % 5000 == 0 {
                let a = h.audit_structure(&s);
                assert!(a.is_empty(), "step {step}: {:?}", &a[..a.len().min(5)]);
            }
        }
        assert!(h.audit_structure(&s).is_empty(), "{:?}", h.audit_structure(&s));
        let queries: Vec<Vec<f32>> = (0..200).map(|i| s.row(VectorId(i * 7)).iter().map(|x| x + 0.01).collect()).collect();
        let dynamic = recall(&mut h, &s, &queries, 200);
        let mut fresh = built(&s, p);
        let rebuilt = recall(&mut fresh, &s, &queries, 200);
        assert!((dynamic - rebuilt).abs() <= 0.05, "{dynamic} vs {rebuilt}");
    }

    #[test]
    fn converging_clusters_stay_reachable() {
        // Tight, well separated clusters contracting towards their centres
        // shed the few links between clusters.
        let data = gen_synthetic::<f32>(&SyntheticSpec { n: 1500, dim: 32, clusters: 16, spread: 0.05, seed: 4 }).unwrap();
        let mut s = DatasetStore::from_rows(32, &data.vectors).unwrap();
        let mut h = built(&s, HnswParams { ef_construction: 64, ..HnswParams::with_m(8) });
        for round in 0..4 {
            for block in (0..1500u64).collect::<Vec<_>>().chunks(150) {
                for &i in block {
                    let c = &data.centres[data.labels[i as usize]];
                    let v: Vec<f32> = s.row(VectorId(i)).iter().zip(c).map(|(x, t)| 0.5 * x + 0.5 * t).collect();
                    s.apply_event(&Event::Update(VectorId(i), v)).unwrap();
                    DynamicIndex::update(&mut h, &s, VectorId(i)).unwrap();
                }
                DynamicIndex::end_event_block(&mut h, &s).unwrap();
                assert_eq!(h.unreachable_count(), 0, "round {round}");
            }
        }
        assert!(h.audit_structure(&s).is_empty(), "{:?}", h.audit_structure(&s));
    }
}
