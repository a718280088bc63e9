//! Dynamic approximate nearest-neighbour indexes and a benchmark harness
//! for datasets that change while they are being searched.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f32`, the type of the on-disk
//! formats.

pub mod baseline;
pub mod distance;
pub mod error;
pub mod harness;
pub mod hnsw;
pub mod index;
pub mod io;
pub mod ivfpq;
pub mod kdtree;
pub mod kmeans;
pub mod neighbours;
pub mod params;
pub mod report;
pub mod rng;
pub mod rpforest;
pub mod scalar;
pub mod scenario;
pub mod store;
pub mod workload;

pub use baseline::{exact_knn, ground_truth, subset_knn, GroundTruthCache, SubsetScanner};
pub use distance::{distance_sq, l2_sq};
pub use error::{Error, Result};
pub use index::{build_method, is_reference, DynamicIndex, MethodContext, METHODS};
pub use neighbours::{Neighbour, NeighbourList};
pub use params::{ParamValue, Params};
pub use scalar::Scalar;
pub use store::{Applied, VectorId};

pub type DatasetStore<T = f32> = store::DatasetStore<T>;
pub type Event<T = f32> = store::Event<T>;

pub type Store = store::DatasetStore<f32>;
pub type KdTree = kdtree::KdTree<f32>;
pub type RpForest = rpforest::RpForest<f32>;
pub type Hnsw = hnsw::Hnsw<f32>;
pub type IvfPq = ivfpq::IvfPq<f32>;
