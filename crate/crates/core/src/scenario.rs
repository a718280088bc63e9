//! Workload construction from a data source description, and the two
//! desk-scale workloads used by the acceptance suite.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{draw_around, gen_synthetic, read_fbin, read_fvecs, SyntheticSpec};
use crate::rng::derive_seed;
use crate::store::DatasetStore;
use crate::workload::{
    gen_odc, gen_ofl, reschedule, targets_from_knn, targets_from_labels, OdcSpec, OflSpec, Rate, RateSpec,
    WorkloadScript,
};

pub const DESK_DIM: usize = 64;
pub const DESK_CLUSTERS: usize = 32;
pub const DESK_SPREAD: f64 = 0.05;

/// Neighbours averaged into an OFL target when the data has no labels.
pub const KNN_TARGET_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Odc,
    Ofl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    /// Gaussian blobs; `n` counts only the base samples. Queries are fresh
    /// samples around the same centres, drawn with `seed + 1`.
    Synthetic { n: usize, dim: usize, clusters: usize, spread: f64 },
    Fvecs { path: PathBuf, queries: Option<PathBuf> },
    Fbin { path: PathBuf, queries: Option<PathBuf> },
}

/// Everything needed to generate one workload script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPlan {
    pub scenario: ScenarioKind,
    pub data: DataSource,
    pub seed: u64,
    /// Initial dataset size; OFL defaults to the whole base set.
    pub n0: Option<usize>,
    pub events: usize,
    pub searches: Option<usize>,
    pub event_batch: usize,
    pub search_batch: usize,
    /// OFL step size.
    pub eta: f64,
    /// Held-out queries (OFL without a query file).
    pub queries: usize,
    /// Event blocks per search block; `None` keeps plain alternation.
    pub rate: Option<Rate>,
}

/// A generated script plus the OFL targets it converges to.
#[derive(Debug, Clone)]
pub struct Workload {
    pub script: WorkloadScript<f32>,
    pub targets: Option<Vec<Vec<f64>>>,
}

struct Loaded {
    base: Vec<Vec<f32>>,
    queries: Option<Vec<Vec<f32>>>,
    centres: Option<(Vec<Vec<f32>>, Vec<usize>)>,
}

fn load(data: &DataSource, seed: u64, n_queries: usize) -> Result<Loaded> {
    match data {
        DataSource::Synthetic { n, dim, clusters, spread } => {
            let spec = SyntheticSpec { n: *n, dim: *dim, clusters: *clusters, spread: *spread, seed };
            let base = gen_synthetic::<f32>(&spec)?;
            let queries = draw_around(&base.centres, n_queries, *spread, seed.wrapping_add(1));
            Ok(Loaded {
                base: base.vectors,
                queries: Some(queries),
                centres: Some((base.centres, base.labels)),
            })
        }
        DataSource::Fvecs { path, queries } => Ok(Loaded {
            base: read_fvecs(path)?,
            queries: queries.as_ref().map(read_fvecs).transpose()?,
            centres: None,
        }),
        DataSource::Fbin { path, queries } => Ok(Loaded {
            base: read_fbin(path)?,
            queries: queries.as_ref().map(read_fbin).transpose()?,
            centres: None,
        }),
    }
}

fn dim_of(rows: &[Vec<f32>]) -> Result<usize> {
    rows.first()
        .map(Vec::len)
        .ok_or_else(|| Error::InsufficientData("data source is empty".into()))
}

impl WorkloadPlan {
    pub fn generate(&self) -> Result<Workload> {
        if self.event_batch == 0 || self.search_batch == 0 {
            return Err(Error::InvalidParameter("batch sizes must be >= 1".into()));
        }
        let loaded = load(&self.data, self.seed, self.queries)?;
        let dim = dim_of(&loaded.base)?;
        let mut workload = match self.scenario {
            ScenarioKind::Odc => {
                let pool = DatasetStore::from_rows(dim, &loaded.base)?;
                let n0 = self.n0.unwrap_or(pool.len().saturating_sub(self.events));
                let spec = OdcSpec {
                    n0,
                    n_events: self.events,
                    n_searches: self.searches,
                    event_batch: self.event_batch,
                    search_batch: self.search_batch,
                    seed: self.seed,
                };
                Workload { script: gen_odc(&pool, &spec)?, targets: None }
            }
            ScenarioKind::Ofl => {
                let (n0, held_out) = match loaded.queries {
                    Some(q) => (self.n0.unwrap_or(loaded.base.len()), q),
                    None => {
                        // Held-out suffix of the base file.
                        let n0 = self.n0.unwrap_or(loaded.base.len().saturating_sub(self.queries));
                        if self.queries == 0 || loaded.base.len() < n0 + self.queries {
                            return Err(Error::InsufficientData(format!(
                                "OFL needs {} base vectors for {n0} samples and {} held-out queries",
                                n0 + self.queries,
                                self.queries
                            )));
                        }
                        (n0, loaded.base[n0..n0 + self.queries].to_vec())
                    }
                };
                if n0 == 0 || loaded.base.len() < n0 {
                    return Err(Error::InsufficientData(format!(
                        "OFL needs {n0} base vectors, have {}",
                        loaded.base.len()
                    )));
                }
                let base = &loaded.base[..n0];
                let initial = DatasetStore::from_rows(dim, base)?;
                let queries = DatasetStore::from_rows(dim, &held_out)?;
                let targets = match &loaded.centres {
                    Some((centres, labels)) => targets_from_labels(centres, &labels[..n0]),
                    None => targets_from_knn(&initial, KNN_TARGET_K)?,
                };
                let spec = OflSpec {
                    n_events: self.events,
                    n_searches: self.searches,
                    eta: self.eta,
                    event_batch: self.event_batch,
                    search_batch: self.search_batch,
                    seed: derive_seed(self.seed, 1),
                };
                let mut script = gen_ofl(&initial, &targets, &queries, &spec)?;
                script.meta.seed = self.seed;
                Workload { script, targets: Some(targets) }
            }
        };
        if let Some(rate) = self.rate {
            workload.script = reschedule(
                &workload.script,
                &RateSpec { rate, event_batch: self.event_batch, search_batch: self.search_batch },
            )?;
        }
        Ok(workload)
    }
}

/// 10 000 initial samples grown by 10 000 additions, one event and one
/// search per block.
pub fn odc_desk_plan(seed: u64) -> WorkloadPlan {
    WorkloadPlan {
        scenario: ScenarioKind::Odc,
        data: DataSource::Synthetic { n: 20_000, dim: DESK_DIM, clusters: DESK_CLUSTERS, spread: DESK_SPREAD },
        seed,
        n0: Some(10_000),
        events: 10_000,
        searches: None,
        event_batch: 1,
        search_batch: 1,
        eta: 0.1,
        queries: 0,
        rate: None,
    }
}

/// 5 000 samples, 20 000 updates in blocks of 200, 1 000 held-out queries.
pub fn ofl_desk_plan(seed: u64) -> WorkloadPlan {
    WorkloadPlan {
        scenario: ScenarioKind::Ofl,
        data: DataSource::Synthetic { n: 5_000, dim: DESK_DIM, clusters: DESK_CLUSTERS, spread: DESK_SPREAD },
        seed,
        n0: None,
        events: 20_000,
        searches: None,
        event_batch: 200,
        search_batch: 200,
        eta: 0.1,
        queries: 1_000,
        rate: None,
    }
}

pub fn odc_desk(seed: u64) -> Result<Workload> {
    odc_desk_plan(seed).generate()
}

pub fn ofl_desk(seed: u64) -> Result<Workload> {
    ofl_desk_plan(seed).generate()
}
