//! Timed replay of a workload script against one index configuration.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::GroundTruthCache;
use crate::error::{Error, Result};
use crate::index::{build_method, is_reference, MethodContext, METHODS};
use crate::neighbours::NeighbourList;
use crate::params::{params_string, ParamValue, Params};
use crate::scalar::Scalar;
use crate::store::Applied;
use crate::workload::{Block, WorkloadScript};

pub const DEFAULT_K: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: String,
    pub params: Params,
    pub k: usize,
    pub seed: u64,
    /// Keep the returned ids of every search in the record.
    #[serde(default)]
    pub keep_results: bool,
    /// Run the structural audit after the replay (untimed).
    #[serde(default = "yes")]
    pub audit: bool,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn new(method: &str, params: Params) -> Self {
        Self { method: method.into(), params, k: DEFAULT_K, seed: 0, keep_results: false, audit: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !METHODS.contains(&self.method.as_str()) {
            return Err(Error::InvalidParameter(format!("unknown method `{}`", self.method)));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub query: u64,
    pub recall: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub method: String,
    pub params: Params,
    pub k: usize,
    pub seed: u64,
    /// Hex digest of the script the run replayed.
    pub script: String,
    pub build_s: f64,
    /// All event processing, the initial build included.
    pub event_s: f64,
    pub search_s: f64,
    /// Duration of each event block, in script order.
    pub block_s: Vec<f64>,
    pub searches: Vec<SearchRecord>,
    pub mean_recall: f64,
    pub peak_bytes: usize,
    pub audit: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn total_s(&self) -> f64 {
        self.search_s + self.event_s
    }

    pub fn params_string(&self) -> String {
        params_string(&self.params)
    }

    pub fn is_reference(&self) -> bool {
        self.error.is_none() && is_reference(&self.method, &self.params)
    }

    pub fn recalls(&self) -> Vec<f64> {
        self.searches.iter().map(|s| s.recall).collect()
    }

    fn failed(scenario: &str, config: &RunConfig, script: u64, error: String) -> Self {
        Self {
            scenario: scenario.into(),
            method: config.method.clone(),
            params: config.params.clone(),
            k: config.k,
            seed: config.seed,
            script: format!("{script:016x}"),
            build_s: 0.0,
            event_s: 0.0,
            search_s: 0.0,
            block_s: Vec::new(),
            searches: Vec::new(),
            mean_recall: 0.0,
            peak_bytes: 0,
            audit: Vec::new(),
            results: None,
            speedup: None,
            error: Some(error),
        }
    }
}

/// `|result ∩ truth| / |truth|` over ids, looking at the first `k` results.
/// An empty truth list scores 1.
pub fn recall(result: &NeighbourList, truth: &NeighbourList, k: usize) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let want: HashSet<_> = truth.iter().map(|n| n.id).collect();
    let hit = result.iter().take(k).filter(|n| want.contains(&n.id)).count();
    hit as f64 / want.len() as f64
}

/// Baseline total time over the method's total time.
pub fn speedup(method: &RunRecord, baseline: &RunRecord) -> Result<f64> {
    if method.script != baseline.script || method.k != baseline.k {
        return Err(Error::Mismatch(format!(
            "speedup needs the same script and k: {}/k={} vs {}/k={}",
            method.script, method.k, baseline.script, baseline.k
        )));
    }
    if method.error.is_some() || baseline.error.is_some() {
        return Err(Error::Mismatch("speedup of a failed run".into()));
    }
    Ok(baseline.total_s().max(f64::MIN_POSITIVE) / method.total_s().max(f64::MIN_POSITIVE))
}

/// Replays `script` against the configured method.
///
/// The build and every event block (including maintenance) count as event
/// time; each search counts as search time. Ground truth, scoring, memory
/// accounting and the audit run outside the timed regions.
pub fn run<T: Scalar>(
    config: &RunConfig,
    script: &WorkloadScript<T>,
    cache: &mut GroundTruthCache,
) -> Result<RunRecord> {
    config.validate()?;
    let digest = script.digest();
    cache.bind(digest)?;
    let mut store = script.initial_store()?;
    let ctx = MethodContext { seed: config.seed, dim: script.dim, initial_len: store.len() };
    let mut index = build_method::<T>(&config.method, &config.params, ctx)?;

    let t = Instant::now();
    index.build(&store)?;
    let build_s = t.elapsed().as_secs_f64();
    let mut event_s = build_s;
    let mut search_s = 0.0;
    let mut peak = store.memory_bytes() + index.memory_bytes();
    let mut block_s = Vec::new();
    let mut searches = Vec::with_capacity(script.meta.n_searches);
    let mut results = config.keep_results.then(Vec::new);

    for (b, block) in script.blocks.iter().enumerate() {
        match block {
            Block::Events(events) => {
                let t = Instant::now();
                for e in events {
                    match store.apply(e).map_err(|err| Error::Replay(format!("block {b}: {err}")))? {
                        Applied::Added(id) => index.insert(&store, id)?,
                        Applied::Updated(id) => index.update(&store, id)?,
                    }
                }
                index.end_event_block(&store)?;
                let dt = t.elapsed().as_secs_f64();
                event_s += dt;
                block_s.push(dt);
                peak = peak.max(store.memory_bytes() + index.memory_bytes());
            }
            Block::Searches(queries) => {
                for (qid, q) in queries {
                    let t = Instant::now();
                    let found = index.search(&store, q, config.k)?;
                    let dt = t.elapsed().as_secs_f64();
                    search_s += dt;
                    let truth = cache.get(&store, q, config.k)?;
                    searches.push(SearchRecord { query: *qid, recall: recall(&found, &truth, config.k), seconds: dt });
                    if let Some(r) = results.as_mut() {
                        r.push(found.ids().into_iter().map(|i| i.0).collect());
                    }
                }
            }
        }
    }
    let mean_recall = if searches.is_empty() {
        0.0
    } else {
        searches.iter().map(|s| s.recall).sum::<f64>() / searches.len() as f64
    };
    let audit = if config.audit { index.audit(&store) } else { Vec::new() };
    Ok(RunRecord {
        scenario: script.meta.scenario.clone(),
        method: config.method.clone(),
        params: config.params.clone(),
        k: config.k,
        seed: config.seed,
        script: format!("{digest:016x}"),
        build_s,
        event_s,
        search_s,
        block_s,
        searches,
        mean_recall,
        peak_bytes: peak,
        audit,
        results,
        speedup: None,
        error: None,
    })
}

/// Fills `cache` with the exact answer to every search of `script`.
pub fn warm_cache<T: Scalar>(script: &WorkloadScript<T>, k: usize, cache: &mut GroundTruthCache) -> Result<()> {
    cache.bind(script.digest())?;
    let mut store = script.initial_store()?;
    for block in &script.blocks {
        match block {
            Block::Events(events) => {
                for e in events {
                    store.apply_event(e)?;
                }
            }
            Block::Searches(queries) => {
                for (_, q) in queries {
                    cache.get(&store, q, k)?;
                }
            }
        }
    }
    Ok(())
}

/// Re-scores stored raw results against a fresh replay of the script.
pub fn rescore<T: Scalar>(record: &RunRecord, script: &WorkloadScript<T>) -> Result<Vec<f64>> {
    let raw = record
        .results
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("record has no raw results".into()))?;
    let mut store = script.initial_store()?;
    let mut out = Vec::with_capacity(raw.len());
    let mut next = raw.iter();
    for block in &script.blocks {
        match block {
            Block::Events(events) => {
                for e in events {
                    store.apply_event(e)?;
                }
            }
            Block::Searches(queries) => {
                for (_, q) in queries {
                    let ids = next.next().ok_or_else(|| Error::Mismatch("fewer results than searches".into()))?;
                    let truth = crate::baseline::exact_knn(&store, q, record.k)?;
                    let found = NeighbourList::from_unsorted(
                        ids.iter().map(|&i| crate::neighbours::Neighbour::new(crate::store::VectorId(i), 0.0)).collect(),
                        usize::MAX,
                    );
                    out.push(recall(&found, &truth, record.k));
                }
            }
        }
    }
    Ok(out)
}

/// Cartesian product of a parameter grid; keys in sorted order, the last
/// key varying fastest.
pub fn expand_grid(grid: &BTreeMap<String, Vec<ParamValue>>) -> Vec<Params> {
    let mut out = vec![Params::new()];
    for (key, values) in grid {
        out = out
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    out
}

/// One run per grid point on the same script and seed. Failed points are
/// recorded with `error` set instead of aborting the sweep.
pub fn sweep<T: Scalar>(
    method: &str,
    grid: &[Params],
    base: &RunConfig,
    script: &WorkloadScript<T>,
    cache: &mut GroundTruthCache,
) -> Result<Vec<RunRecord>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    Ok(grid
        .iter()
        .map(|p| {
            let config = RunConfig { method: method.into(), params: p.clone(), ..base.clone() };
            run(&config, script, cache).unwrap_or_else(|e| {
                RunRecord::failed(&script.meta.scenario, &config, script.digest(), e.to_string())
            })
        })
        .collect())
}

/// Fills `speedup` on every completed record from the exhaustive reference
/// of the same script and k.
pub fn assign_speedups(records: &mut [RunRecord]) -> Result<()> {
    let refs: Vec<RunRecord> = records.iter().filter(|r| r.is_reference()).cloned().collect();
    for r in records.iter_mut().filter(|r| r.error.is_none()) {
        let base = refs
            .iter()
            .find(|b| b.script == r.script && b.k == r.k)
            .ok_or_else(|| Error::Mismatch(format!("no exhaustive reference for script {}", r.script)))?;
        r.speedup = Some(speedup(r, base)?);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub recall: f64,
    pub speedup: f64,
    /// Position of the record in the input.
    pub record: usize,
}

/// Frontier of `(recall, speedup)` points, sorted by recall ascending.
///
/// A point is dropped when another has both coordinates at least as large
/// and one strictly larger.
pub fn pareto_points(points: &[(f64, f64)]) -> Vec<ParetoPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b].0.total_cmp(&points[a].0).then(points[b].1.total_cmp(&points[a].1)).then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut best_higher = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let r = points[order[i]].0;
        let group_max = points[order[i]].1;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == r {
            let (pr, ps) = points[order[j]];
            if ps == group_max && ps > best_higher {
                out.push(ParetoPoint { recall: pr, speedup: ps, record: order[j] });
            }
            j += 1;
        }
        best_higher = best_higher.max(group_max);
        i = j;
    }
    out.sort_by(|a, b| a.recall.total_cmp(&b.recall).then(a.record.cmp(&b.record)));
    out
}

/// Frontier over the records that completed and carry a speedup.
pub fn pareto(records: &[RunRecord]) -> Vec<ParetoPoint> {
    let idx: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].error.is_none() && records[i].speedup.is_some())
        .collect();
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (records[i].mean_recall, records[i].speedup.expect("filtered")))
        .collect();
    pareto_points(&pts)
        .into_iter()
        .map(|p| ParetoPoint { record: idx[p.record], ..p })
        .collect()
}
