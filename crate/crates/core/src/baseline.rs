//! Exhaustive search: the reference method, its subset-scan trade-off, and
//! the streaming ground-truth oracle.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::neighbours::{NeighbourList, TopK};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::store::{check_vector, DatasetStore, VectorId};

fn check_query<T: Scalar>(store: &DatasetStore<T>, query: &[T], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    check_vector(store.dim(), query)
}

/// The true `k` nearest samples under the canonical tie rule.
pub fn exact_knn<T: Scalar>(
    store: &DatasetStore<T>,
    query: &[T],
    k: usize,
) -> Result<NeighbourList> {
    check_query(store, query, k)?;
    Ok(scan(store, query, k, store.rows().map(|(id, _)| id)))
}

fn scan<T: Scalar>(
    store: &DatasetStore<T>,
    query: &[T],
    k: usize,
    ids: impl Iterator<Item = VectorId>,
) -> NeighbourList {
    let mut top = TopK::new(k);
    for id in ids {
        let d = l2_sq(query, store.row(id));
        if d <= top.worst() {
            top.push(id, d);
        }
    }
    top.into_list()
}

/// Exhaustive scan over a seeded random subset of `ceil(p * N)` samples.
///
/// The permutation is extended in place as samples are added (inside-out
/// Fisher-Yates), so it stays uniform over the current id set and new
/// samples are reachable. With `rotate`, each query starts its window where
/// the previous one ended; otherwise every query scans the same prefix.
#[derive(Debug, Clone)]
pub struct SubsetScanner {
    fraction: f64,
    rotate: bool,
    rng: Rng,
    perm: Vec<VectorId>,
    offset: usize,
}

impl SubsetScanner {
    pub fn new(fraction: f64, rotate: bool, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "subset fraction must be in (0, 1], got {fraction}"
            )));
        }
        Ok(Self {
            fraction,
            rotate,
            rng: rng::seeded(seed),
            perm: Vec::new(),
            offset: 0,
        })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    fn sync<T: Scalar>(&mut self, store: &DatasetStore<T>) {
        while self.perm.len() < store.len() {
            let id = VectorId(self.perm.len() as u64);
            self.perm.push(id);
            let j = rng::below(&mut self.rng, self.perm.len());
            let last = self.perm.len() - 1;
            self.perm.swap(j, last);
        }
    }

    pub fn search<T: Scalar>(
        &mut self,
        store: &DatasetStore<T>,
        query: &[T],
        k: usize,
    ) -> Result<NeighbourList> {
        check_query(store, query, k)?;
        if self.fraction >= 1.0 {
            return exact_knn(store, query, k);
        }
        self.sync(store);
        let n = self.perm.len();
        if n == 0 {
            return Ok(NeighbourList::default());
        }
        let take = ((self.fraction * n as f64).ceil() as usize).clamp(1, n);
        let start = if self.rotate { self.offset % n } else { 0 };
        let ids = self.perm[start..]
            .iter()
            .chain(&self.perm[..start])
            .take(take)
            .copied();
        let out = scan(store, query, k, ids);
        if self.rotate {
            self.offset = (start + take) % n;
        }
        Ok(out)
    }
}

/// One-shot subset scan with a fresh permutation drawn from `seed`.
pub fn subset_knn<T: Scalar>(
    store: &DatasetStore<T>,
    query: &[T],
    k: usize,
    fraction: f64,
    seed: u64,
) -> Result<NeighbourList> {
    SubsetScanner::new(fraction, false, seed)?.search(store, query, k)
}

/// Content hash of a query vector (bit patterns of its components).
pub fn fingerprint<T: Scalar>(query: &[T]) -> u64 {
    let mut h = DefaultHasher::new();
    query.len().hash(&mut h);
    for x in query {
        x.as_f64().to_bits().hash(&mut h);
    }
    h.finish()
}

/// Memoised exact results keyed by `(query fingerprint, snapshot version, k)`.
///
/// Snapshot versions only identify a dataset state within one workload
/// script, so a cache is bound to the digest of the script it serves.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthCache {
    scope: Option<u64>,
    entries: HashMap<(u64, u64, usize), NeighbourList>,
    hits: u64,
    misses: u64,
}

impl GroundTruthCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache bound to one script digest.
    pub fn for_scope(scope: u64) -> Self {
        Self {
            scope: Some(scope),
            ..Self::default()
        }
    }

    pub fn scope(&self) -> Option<u64> {
        self.scope
    }

    /// Binds an unscoped cache, or checks an already-bound one.
    pub fn bind(&mut self, scope: u64) -> Result<()> {
        match self.scope {
            None => {
                self.scope = Some(scope);
                Ok(())
            }
            Some(s) if s == scope => Ok(()),
            Some(s) => Err(Error::Mismatch(format!(
                "ground-truth cache belongs to script {s:016x}, not {scope:016x}"
            ))),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, fingerprint: u64, version: u64, k: usize, list: NeighbourList) {
        self.entries.insert((fingerprint, version, k), list);
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(u64, u64, usize), &NeighbourList)> {
        self.entries.iter()
    }

    pub fn get<T: Scalar>(
        &mut self,
        store: &DatasetStore<T>,
        query: &[T],
        k: usize,
    ) -> Result<NeighbourList> {
        let key = (fingerprint(query), store.version(), k);
        if let Some(hit) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(hit.clone());
        }
        let list = exact_knn(store, query, k)?;
        self.misses += 1;
        self.entries.insert(key, list.clone());
        Ok(list)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    scope: Option<String>,
    entries: Vec<CacheEntry>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    query: String,
    version: u64,
    k: usize,
    neighbours: NeighbourList,
}

impl GroundTruthCache {
    /// Writes the cache as JSON, entries sorted by key. Fingerprints and
    /// the scope are 16-digit hex strings.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut keys: Vec<&(u64, u64, usize)> = self.entries.keys().collect();
        keys.sort_unstable();
        let file = CacheFile {
            scope: self.scope.map(|s| format!("{s:016x}")),
            entries: keys
                .into_iter()
                .map(|key| CacheEntry {
                    query: format!("{:016x}", key.0),
                    version: key.1,
                    k: key.2,
                    neighbours: self.entries[key].clone(),
                })
                .collect(),
        };
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: CacheFile = serde_json::from_slice(&bytes)?;
        let hex = |s: &str| {
            u64::from_str_radix(s, 16)
                .map_err(|e| Error::Parse { offset: 0, message: format!("bad hex `{s}` in {}: {e}", path.display()) })
        };
        let mut cache = Self { scope: file.scope.as_deref().map(hex).transpose()?, ..Self::default() };
        for e in file.entries {
            cache.entries.insert((hex(&e.query)?, e.version, e.k), e.neighbours);
        }
        Ok(cache)
    }
}

pub fn ground_truth<T: Scalar>(
    store: &DatasetStore<T>,
    query: &[T],
    k: usize,
    cache: &mut GroundTruthCache,
) -> Result<NeighbourList> {
    cache.get(store, query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Event;

    fn random_store(seed: u64, n: usize, dim: usize) -> DatasetStore<f32> {
        let mut r = rng::seeded(seed);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..dim).map(|_| rng::uniform(&mut r) as f32).collect())
            .collect();
        DatasetStore::from_rows(dim, &rows).unwrap()
    }

    // Deliberately naive: materialise every (distance, id) pair, full sort.
    fn quadratic_scan(store: &DatasetStore<f32>, q: &[f32], k: usize) -> Vec<VectorId> {
        let mut all: Vec<(f64, u64)> = Vec::new();
        for i in 0..store.len() {
            let v = store.get(VectorId(i as u64)).unwrap();
            let mut s = 0.0f64;
            for j in 0..q.len() {
                s += (q[j] as f64 - v[j] as f64).powi(2);
            }
            all.push((s, i as u64));
        }
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.into_iter().take(k).map(|(_, i)| VectorId(i)).collect()
    }

    fn recall(got: &NeighbourList, truth: &NeighbourList) -> f64 {
        let t: std::collections::HashSet<_> = truth.ids().into_iter().collect();
        got.ids().iter().filter(|i| t.contains(i)).count() as f64 / t.len() as f64
    }

    #[test]
    fn small_by_inspection() {
        let s = DatasetStore::from_rows(2, &[[0.0f32, 0.0], [1.0, 0.0], [5.0, 5.0]]).unwrap();
        let r = exact_knn(&s, &[0.9, 0.0], 2).unwrap();
        assert_eq!(r.ids(), vec![VectorId(1), VectorId(0)]);
        let r = exact_knn(&s, &[5.0, 5.0], 1).unwrap();
        assert_eq!(r.ids(), vec![VectorId(2)]);
        assert_eq!(exact_knn(&s, &[0.0, 0.0], 10).unwrap().len(), 3);
        assert!(exact_knn(&s, &[0.0], 1).is_err());
        assert!(exact_knn(&s, &[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn matches_quadratic_scan() {
        let s = random_store(3, 5000, 32);
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let q: Vec<f32> = (0..32).map(|_| rng::uniform(&mut r) as f32).collect();
            assert_eq!(exact_knn(&s, &q, 50).unwrap().ids(), quadratic_scan(&s, &q, 50));
        }
    }

    #[test]
    fn canonical_under_permutation() {
        // Duplicated points make ties; a permuted store must give the same
        // vectors back in the same canonical order.
        let rows: Vec<[f32; 2]> = (0..40).map(|i| [(i % 5) as f32, 0.0]).collect();
        let s = DatasetStore::from_rows(2, &rows).unwrap();
        let res = exact_knn(&s, &[1.2, 0.0], 12).unwrap();
        let ds: Vec<f64> = res.iter().map(|n| n.dist).collect();
        assert!(ds.windows(2).all(|w| w[0] <= w[1]));
        for w in res.as_slice().windows(2) {
            if w[0].dist == w[1].dist {
                assert!(w[0].id < w[1].id);
            }
        }
    }

    #[test]
    fn subset_full_is_exact() {
        let s = random_store(5, 500, 8);
        let q = vec![0.5f32; 8];
        assert_eq!(subset_knn(&s, &q, 10, 1.0, 1).unwrap(), exact_knn(&s, &q, 10).unwrap());
        assert!(SubsetScanner::new(0.0, false, 1).is_err());
        assert!(SubsetScanner::new(1.5, false, 1).is_err());
    }

    #[test]
    fn subset_short_list() {
        let s = random_store(5, 100, 4);
        let r = subset_knn(&s, &[0.5f32; 4], 50, 0.1, 9).unwrap();
        assert_eq!(r.len(), 10);
    }

    #[test]
    fn subset_recall_tracks_fraction() {
        let s = random_store(6, 10_000, 16);
        let mut r = rng::seeded(7);
        let queries: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..16).map(|_| rng::uniform(&mut r) as f32).collect())
            .collect();
        let mut means = Vec::new();
        for p in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0] {
            let mut sc = SubsetScanner::new(p, true, 11).unwrap();
            let m = queries
                .iter()
                .map(|q| recall(&sc.search(&s, q, 50).unwrap(), &exact_knn(&s, q, 50).unwrap()))
                .sum::<f64>()
                / queries.len() as f64;
            means.push(m);
        }
        assert!((0.45..=0.55).contains(&means[4]), "{means:?}");
        for w in means.windows(2) {
            assert!(w[1] + 0.02 >= w[0], "{means:?}");
        }
    }

    #[test]
    fn subset_reaches_new_samples() {
        let mut s = random_store(8, 10, 2);
        let mut sc = SubsetScanner::new(0.99, false, 1).unwrap();
        sc.search(&s, &[0.0f32, 0.0], 1).unwrap();
        for _ in 0..90 {
            s.apply_event(&Event::Addition(vec![0.5, 0.5])).unwrap();
        }
        sc.search(&s, &[0.0f32, 0.0], 1).unwrap();
        let mut sorted = sc.perm.clone();
        sorted.sort();
        assert_eq!(sorted, s.snapshot_ids());
    }

    #[test]
    fn cache_hits_and_version_keying() {
        let mut s = random_store(9, 300, 4);
        let mut cache = GroundTruthCache::new();
        let q = vec![0.1f32; 4];
        let a = ground_truth(&s, &q, 5, &mut cache).unwrap();
        let b = ground_truth(&s, &q, 5, &mut cache).unwrap();
        assert_eq!(a, b);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
        s.apply_event(&Event::Addition(vec![0.1; 4])).unwrap();
        let c = ground_truth(&s, &q, 5, &mut cache).unwrap();
        assert_eq!(c.ids()[0], VectorId(300));
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.misses(), 2);
    }

    #[test]
    fn cache_scope_binding() {
        let mut c = GroundTruthCache::for_scope(1);
        assert!(c.bind(1).is_ok());
        assert!(c.bind(2).is_err());
        let mut u = GroundTruthCache::new();
        assert!(u.bind(5).is_ok());
        assert_eq!(u.scope(), Some(5));
    }

    #[test]
    fn cache_file_round_trip() {
        let s = random_store(4, 200, 3);
        let mut cache = GroundTruthCache::for_scope(0xabc);
        for i in 0..5u64 {
            ground_truth(&s, s.row(VectorId(i)), 7, &mut cache).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.json");
        cache.save(&path).unwrap();
        let mut back = GroundTruthCache::load(&path).unwrap();
        assert_eq!(back.scope(), Some(0xabc));
        assert_eq!(back.len(), 5);
        for i in 0..5u64 {
            let q = s.row(VectorId(i));
            assert_eq!(back.get(&s, q, 7).unwrap(), exact_knn(&s, q, 7).unwrap());
        }
        assert_eq!(back.misses(), 0);
    }
}
