//! The operation set every dynamic index implements, and the method registry.

use crate::baseline::SubsetScanner;
use crate::error::{Error, Result};
use crate::hnsw::{Hnsw, HnswParams};
use crate::ivfpq::{IvfPq, IvfPqParams};
use crate::kdtree::{KdParams, KdTree};
use crate::neighbours::NeighbourList;
use crate::params::{ParamReader, Params};
use crate::rpforest::{RpForest, RpForestParams};
use crate::scalar::Scalar;
use crate::store::{DatasetStore, VectorId};

/// A dynamic nearest-neighbour index over a [`DatasetStore`].
///
/// Indexes never own vectors; they read them from the store, which the
/// caller mutates *before* notifying the index of an event.
pub trait DynamicIndex<T: Scalar>: Send {
    fn method(&self) -> &'static str;

    /// (Re)builds from the full current store.
    fn build(&mut self, store: &DatasetStore<T>) -> Result<()>;

    /// `id` was just appended to the store.
    fn insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()>;

    /// The vector behind `id` was just overwritten.
    fn update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()>;

    /// Maintenance hook, called after every block of events.
    fn end_event_block(&mut self, _store: &DatasetStore<T>) -> Result<()> {
        Ok(())
    }

    fn search(&mut self, store: &DatasetStore<T>, query: &[T], k: usize) -> Result<NeighbourList>;

    /// Self-reported heap footprint.
    fn memory_bytes(&self) -> usize;

    /// Structural invariant violations against the current store; empty
    /// means healthy.
    fn audit(&self, store: &DatasetStore<T>) -> Vec<String>;
}

/// Exhaustive baseline wrapped as an index with no structure to maintain.
pub struct Exhaustive {
    scanner: SubsetScanner,
}

impl Exhaustive {
    pub fn new(fraction: f64, rotate: bool, seed: u64) -> Result<Self> {
        Ok(Self {
            scanner: SubsetScanner::new(fraction, rotate, seed)?,
        })
    }

    pub fn fraction(&self) -> f64 {
        self.scanner.fraction()
    }
}

impl<T: Scalar> DynamicIndex<T> for Exhaustive {
    fn method(&self) -> &'static str {
        "baseline"
    }
    fn build(&mut self, _store: &DatasetStore<T>) -> Result<()> {
        Ok(())
    }
    fn insert(&mut self, _store: &DatasetStore<T>, _id: VectorId) -> Result<()> {
        Ok(())
    }
    fn update(&mut self, _store: &DatasetStore<T>, _id: VectorId) -> Result<()> {
        Ok(())
    }
    fn search(&mut self, store: &DatasetStore<T>, query: &[T], k: usize) -> Result<NeighbourList> {
        self.scanner.search(store, query, k)
    }
    fn memory_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
    }
    fn audit(&self, _store: &DatasetStore<T>) -> Vec<String> {
        Vec::new()
    }
}

pub const METHODS: [&str; 5] = ["baseline", "kdtree", "rpforest", "hnsw", "ivfpq"];

/// Everything a method needs besides its own parameters.
#[derive(Debug, Clone, Copy)]
pub struct MethodContext {
    pub seed: u64,
    pub dim: usize,
    /// Size of the initial dataset the index is built on.
    pub initial_len: usize,
}

/// True for the `baseline` method at full scan, the speedup reference.
pub fn is_reference(method: &str, params: &Params) -> bool {
    method == "baseline"
        && ParamReader::new("baseline", params)
            .f64("p")
            .ok()
            .flatten()
            .is_none_or(|p| p >= 1.0)
}

/// Instantiates a registered method from its parameter map.
///
/// | method | parameters (defaults) |
/// |---|---|
/// | `baseline` | `p` (1.0), `rotate` (true) |
/// | `kdtree` | `leaf_capacity` (32), `max_leaves` (0 = unlimited), `rebuild_imbalance` (4.0) |
/// | `rpforest` | `n_trees` (10), `leaf_capacity` (32), `search_k` (0 = `n_trees * k`), `rebuild_every` (0) |
/// | `hnsw` | `m` (16), `ef_construction` (200), `ef_search` (100), `ml` (1/ln m) |
/// | `ivfpq` | `nlist` (ceil sqrt N0), `m` (largest divisor of d <= 8), `nbits` (8), `nprobe` (1), `retrain_every` (0), `rerank` (false) |
pub fn build_method<T: Scalar>(
    method: &str,
    params: &Params,
    ctx: MethodContext,
) -> Result<Box<dyn DynamicIndex<T>>> {
    let mut r = ParamReader::new(method, params);
    let index: Box<dyn DynamicIndex<T>> = match method {
        "baseline" => {
            let p = r.f64("p")?.unwrap_or(1.0);
            let rotate = r.bool("rotate")?.unwrap_or(true);
            Box::new(Exhaustive::new(p, rotate, ctx.seed)?)
        }
        "kdtree" => {
            let d = KdParams::default();
            let p = KdParams {
                leaf_capacity: r.usize("leaf_capacity")?.unwrap_or(d.leaf_capacity),
                max_leaves_visited: r.usize("max_leaves")?.filter(|&b| b > 0),
                rebuild_imbalance: r.f64("rebuild_imbalance")?.unwrap_or(d.rebuild_imbalance),
            };
            Box::new(KdTree::<T>::new(p)?)
        }
        "rpforest" => {
            let d = RpForestParams::default();
            let p = RpForestParams {
                n_trees: r.usize("n_trees")?.unwrap_or(d.n_trees),
                leaf_capacity: r.usize("leaf_capacity")?.unwrap_or(d.leaf_capacity),
                search_k: r.usize("search_k")?.filter(|&s| s > 0),
                rebuild_every: r.usize("rebuild_every")?.unwrap_or(d.rebuild_every),
            };
            Box::new(RpForest::<T>::new(p, ctx.seed)?)
        }
        "hnsw" => {
            let m = r.usize("m")?.unwrap_or(16);
            let mut p = HnswParams::with_m(m);
            p.ef_construction = r.usize("ef_construction")?.unwrap_or(p.ef_construction);
            p.ef_search = r.usize("ef_search")?.unwrap_or(p.ef_search);
            p.ml = r.f64("ml")?.unwrap_or(p.ml);
            Box::new(Hnsw::<T>::new(p, ctx.seed)?)
        }
        "ivfpq" => {
            let mut p = IvfPqParams::defaults_for(ctx.dim, ctx.initial_len);
            p.nlist = r.usize("nlist")?.unwrap_or(p.nlist);
            p.m = r.usize("m")?.unwrap_or(p.m);
            p.nbits = r.usize("nbits")?.unwrap_or(p.nbits);
            p.nprobe = r.usize("nprobe")?.unwrap_or(p.nprobe);
            p.retrain_every = r.usize("retrain_every")?.unwrap_or(p.retrain_every);
            p.rerank = r.bool("rerank")?.unwrap_or(p.rerank);
            Box::new(IvfPq::<T>::new(p, ctx.seed)?)
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown method `{other}` (expected one of {})",
                METHODS.join(", ")
            )))
        }
    };
    r.finish()?;
    Ok(index)
}
