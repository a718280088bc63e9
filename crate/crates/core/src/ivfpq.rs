//! Inverted file over k-means cells with product-quantised residuals,
//! scored by asymmetric distance tables.

use std::marker::PhantomData;
use std::path::Path;

use crate::distance::l2_sq;
use crate::error::{Error, Result};
use crate::index::DynamicIndex;
use crate::kmeans::{self, kmeans};
use crate::neighbours::{NeighbourList, TopK};
use crate::rng;
use crate::scalar::Scalar;
use crate::store::{check_vector, DatasetStore, VectorId};

/// ADC shortlist size per requested neighbour when exact reranking is on.
pub const RERANK_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvfPqParams {
    pub nlist: usize,
    pub m: usize,
    pub nbits: usize,
    pub nprobe: usize,
    /// Events between retrainings; 0 disables.
    pub retrain_every: usize,
    pub rerank: bool,
}

impl IvfPqParams {
    /// `nlist = ceil(sqrt(n0))`, `m` = largest divisor of `dim` up to 8,
    /// 8 bits per code.
    pub fn defaults_for(dim: usize, n0: usize) -> Self {
        Self {
            nlist: ((n0 as f64).sqrt().ceil() as usize).max(1),
            m: (1..=8.min(dim.max(1))).rev().find(|m| dim % m == 0).unwrap_or(1),
            nbits: 8,
            nprobe: 1,
            retrain_every: 0,
            rerank: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nlist == 0 || self.m == 0 || !(1..=8).contains(&self.nbits) {
            return Err(Error::InvalidParameter(
                "ivfpq: nlist, m >= 1 and nbits in 1..=8 required".into(),
            ));
        }
        if self.nprobe == 0 || self.nprobe > self.nlist {
            return Err(Error::InvalidParameter(format!(
                "ivfpq: nprobe must be in 1..={}",
                self.nlist
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseQuantiser {
    pub dim: usize,
    /// `nlist * dim` row-major.
    pub centroids: Vec<f64>,
}

impl CoarseQuantiser {
    pub fn nlist(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Nearest cell, lowest index on ties.
    pub fn assign<T: Scalar>(&self, x: &[T]) -> usize {
        let x: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        kmeans::nearest(&self.centroids, self.dim, &x).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    pub m: usize,
    pub ksub: usize,
    pub dsub: usize,
    /// `m * ksub * dsub`: sub-space, then centroid, then coordinate.
    pub centroids: Vec<f64>,
}

impl PqCodebook {
    pub fn sub_centroid(&self, j: usize, c: usize) -> &[f64] {
        let at = (j * self.ksub + c) * self.dsub;
        &self.centroids[at..at + self.dsub]
    }

    pub fn encode(&self, residual: &[f64]) -> Vec<u8> {
        (0..self.m)
            .map(|j| {
                let sub = &residual[j * self.dsub..(j + 1) * self.dsub];
                let block = &self.centroids[j * self.ksub * self.dsub..(j + 1) * self.ksub * self.dsub];
                kmeans::nearest(block, self.dsub, sub).0 as u8
            })
            .collect()
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f64> {
        code.iter()
            .enumerate()
            .flat_map(|(j, &c)| self.sub_centroid(j, c as usize).iter().copied())
            .collect()
    }

    /// `m * ksub` squared sub-distances from a query residual.
    pub fn adc_table(&self, residual: &[f64]) -> Vec<f64> {
        let mut table = Vec::with_capacity(self.m * self.ksub);
        for j in 0..self.m {
            let sub = &residual[j * self.dsub..(j + 1) * self.dsub];
            for c in 0..self.ksub {
                table.push(kmeans::sq(sub, self.sub_centroid(j, c)));
            }
        }
        table
    }

    #[inline]
    pub fn adc_score(&self, table: &[f64], code: &[u8]) -> f64 {
        code.iter().enumerate().map(|(j, &c)| table[j * self.ksub + c as usize]).sum()
    }
}

fn residual<T: Scalar>(x: &[T], centroid: &[f64]) -> Vec<f64> {
    x.iter().zip(centroid).map(|(v, c)| v.as_f64() - c).collect()
}

/// Trains the coarse quantiser and residual codebooks on every stored vector.
pub fn ivfpq_train<T: Scalar>(
    store: &DatasetStore<T>,
    nlist: usize,
    m: usize,
    nbits: usize,
    seed: u64,
) -> Result<(CoarseQuantiser, PqCodebook)> {
    let dim = store.dim();
    if m == 0 || dim % m != 0 {
        return Err(Error::InvalidParameter(format!("ivfpq: m={m} must divide dim={dim}")));
    }
    if !(1..=8).contains(&nbits) {
        return Err(Error::InvalidParameter(format!("ivfpq: nbits={nbits} outside 1..=8")));
    }
    let ksub = 1usize << nbits;
    let need = nlist.max(ksub);
    if store.len() < need {
        return Err(Error::InsufficientData(format!(
            "ivfpq: {} vectors, training needs {need}",
            store.len()
        )));
    }
    let points: Vec<f64> = store.as_flat().iter().map(|v| v.as_f64()).collect();
    let coarse = kmeans(&points, dim, nlist, rng::derive_seed(seed, 0), kmeans::MAX_ITERS, kmeans::TOL)?;
    let mut residuals = points;
    for row in residuals.chunks_exact_mut(dim) {
        let (c, _) = coarse.nearest(row);
        for (x, cv) in row.iter_mut().zip(coarse.centroid(c)) {
            *x -= cv;
        }
    }
    let dsub = dim / m;
    let n = store.len();
    let mut centroids = Vec::with_capacity(m * ksub * dsub);
    for j in 0..m {
        let sub: Vec<f64> = (0..n)
            .flat_map(|i| residuals[i * dim + j * dsub..i * dim + (j + 1) * dsub].iter().copied())
            .collect();
        let km = kmeans(&sub, dsub, ksub, rng::derive_seed(seed, 1 + j as u64), kmeans::MAX_ITERS, kmeans::TOL)?;
        centroids.extend_from_slice(&km.centroids);
    }
    Ok((
        CoarseQuantiser { dim, centroids: coarse.centroids },
        PqCodebook { m, ksub, dsub, centroids },
    ))
}

#[derive(Debug, Clone, Default)]
struct InvertedList {
    ids: Vec<VectorId>,
    /// `ids.len() * m` bytes.
    codes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct IvfPq<T> {
    params: IvfPqParams,
    seed: u64,
    coarse: Option<CoarseQuantiser>,
    codebook: Option<PqCodebook>,
    lists: Vec<InvertedList>,
    /// id -> (list, position).
    locator: Vec<(u32, u32)>,
    events_since_train: usize,
    retrain_count: usize,
    _scalar: PhantomData<T>,
}

const UNPLACED: (u32, u32) = (u32::MAX, u32::MAX);

impl<T: Scalar> IvfPq<T> {
    pub fn new(params: IvfPqParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            seed,
            coarse: None,
            codebook: None,
            lists: Vec::new(),
            locator: Vec::new(),
            events_since_train: 0,
            retrain_count: 0,
            _scalar: PhantomData,
        })
    }

    pub fn params(&self) -> &IvfPqParams {
        &self.params
    }

    pub fn set_nprobe(&mut self, nprobe: usize) -> Result<()> {
        let p = IvfPqParams { nprobe, ..self.params };
        p.validate()?;
        self.params = p;
        Ok(())
    }

    pub fn coarse(&self) -> Option<&CoarseQuantiser> {
        self.coarse.as_ref()
    }

    pub fn codebook(&self) -> Option<&PqCodebook> {
        self.codebook.as_ref()
    }

    pub fn retrain_count(&self) -> usize {
        self.retrain_count
    }

    /// List index holding `id`.
    pub fn list_of(&self, id: VectorId) -> Option<usize> {
        self.locator
            .get(id.index())
            .filter(|l| **l != UNPLACED)
            .map(|l| l.0 as usize)
    }

    pub fn list_len(&self, list: usize) -> usize {
        self.lists[list].ids.len()
    }

    fn trained(&self) -> Result<(&CoarseQuantiser, &PqCodebook)> {
        match (&self.coarse, &self.codebook) {
            (Some(c), Some(b)) => Ok((c, b)),
            _ => Err(Error::Untrained),
        }
    }

    /// Trains on the whole store and encodes every vector.
    pub fn train_and_fill(&mut self, store: &DatasetStore<T>) -> Result<()> {
        let p = self.params;
        let (coarse, codebook) = ivfpq_train(store, p.nlist, p.m, p.nbits, self.seed)?;
        self.coarse = Some(coarse);
        self.codebook = Some(codebook);
        self.lists = vec![InvertedList::default(); p.nlist];
        self.locator = vec![UNPLACED; store.len()];
        for id in store.snapshot_ids() {
            self.place(store, id);
        }
        self.events_since_train = 0;
        Ok(())
    }

    fn place(&mut self, store: &DatasetStore<T>, id: VectorId) {
        let (coarse, codebook) = self.trained().expect("trained");
        let x = store.row(id);
        let list = coarse.assign(x);
        let code = codebook.encode(&residual(x, coarse.centroid(list)));
        let l = &mut self.lists[list];
        let pos = l.ids.len();
        l.ids.push(id);
        l.codes.extend_from_slice(&code);
        if id.index() >= self.locator.len() {
            self.locator.resize(id.index() + 1, UNPLACED);
        }
        self.locator[id.index()] = (list as u32, pos as u32);
    }

    fn unplace(&mut self, id: VectorId) {
        let (list, pos) = self.locator[id.index()];
        let m = self.params.m;
        let l = &mut self.lists[list as usize];
        let last = l.ids.len() - 1;
        let pos = pos as usize;
        l.ids.swap_remove(pos);
        if pos != last {
            l.codes.copy_within(last * m..(last + 1) * m, pos * m);
            self.locator[l.ids[pos].index()] = (list, pos as u32);
        }
        l.codes.truncate(last * m);
        self.locator[id.index()] = UNPLACED;
    }

    pub fn ivfpq_insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.trained()?;
        if !store.contains(id) {
            return Err(Error::UnknownId(id));
        }
        if self.list_of(id).is_some() {
            return Err(Error::DuplicateId(id));
        }
        self.place(store, id);
        self.events_since_train += 1;
        Ok(())
    }

    pub fn ivfpq_update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.trained()?;
        if self.list_of(id).is_none() || !store.contains(id) {
            return Err(Error::UnknownId(id));
        }
        self.unplace(id);
        self.place(store, id);
        self.events_since_train += 1;
        Ok(())
    }

    /// Retrains once `retrain_every` events have accrued.
    pub fn maintain(&mut self, store: &DatasetStore<T>) -> Result<bool> {
        let due = self.params.retrain_every > 0 && self.events_since_train >= self.params.retrain_every;
        if due {
            self.train_and_fill(store)?;
            self.retrain_count += 1;
        }
        Ok(due)
    }

    pub fn ivfpq_search(
        &self,
        store: &DatasetStore<T>,
        query: &[T],
        k: usize,
        nprobe: usize,
    ) -> Result<NeighbourList> {
        let (coarse, codebook) = self.trained()?;
        check_vector(store.dim(), query)?;
        if nprobe == 0 || nprobe > coarse.nlist() {
            return Err(Error::InvalidParameter(format!(
                "ivfpq: nprobe {nprobe} outside 1..={}",
                coarse.nlist()
            )));
        }
        let q: Vec<f64> = query.iter().map(|v| v.as_f64()).collect();
        let mut cells: Vec<(f64, usize)> = coarse
            .centroids
            .chunks_exact(coarse.dim)
            .map(|c| kmeans::sq(c, &q))
            .zip(0..)
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let shortlist = if self.params.rerank { k.saturating_mul(RERANK_FACTOR) } else { k };
        let mut top = TopK::new(shortlist);
        let m = codebook.m;
        for &(_, c) in &cells[..nprobe] {
            let list = &self.lists[c];
            if list.ids.is_empty() {
                continue;
            }
            let table = codebook.adc_table(&residual(query, coarse.centroid(c)));
            for (id, code) in list.ids.iter().zip(list.codes.chunks_exact(m)) {
                top.push(*id, codebook.adc_score(&table, code));
            }
        }
        let found = top.into_list();
        if !self.params.rerank {
            return Ok(found);
        }
        let mut exact = TopK::new(k);
        for n in found.iter() {
            exact.push(n.id, l2_sq(query, store.row(n.id)));
        }
        Ok(exact.into_list())
    }

    /// Number of codes scanned by a search with `nprobe` cells.
    pub fn codes_scanned(&self, query: &[T], nprobe: usize) -> Result<usize> {
        let (coarse, _) = self.trained()?;
        let q: Vec<f64> = query.iter().map(|v| v.as_f64()).collect();
        let mut cells: Vec<(f64, usize)> = coarse
            .centroids
            .chunks_exact(coarse.dim)
            .map(|c| kmeans::sq(c, &q))
            .zip(0..)
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(cells[..nprobe.min(cells.len())].iter().map(|&(_, c)| self.lists[c].ids.len()).sum())
    }

    /// Stored code of `id`.
    pub fn code_of(&self, id: VectorId) -> Option<&[u8]> {
        let (list, pos) = *self.locator.get(id.index()).filter(|l| **l != UNPLACED)?;
        let m = self.params.m;
        Some(&self.lists[list as usize].codes[pos as usize * m..(pos as usize + 1) * m])
    }

    /// Mean squared reconstruction error over the store.
    pub fn quantisation_error(&self, store: &DatasetStore<T>) -> Result<f64> {
        let (coarse, codebook) = self.trained()?;
        let mut total = 0.0;
        for (id, x) in store.rows() {
            let (list, _) = self.locator[id.index()];
            let mut rec = codebook.decode(self.code_of(id).ok_or(Error::UnknownId(id))?);
            for (r, c) in rec.iter_mut().zip(coarse.centroid(list as usize)) {
                *r += c;
            }
            total += x.iter().zip(&rec).map(|(a, b)| (a.as_f64() - b).powi(2)).sum::<f64>();
        }
        Ok(total / store.len().max(1) as f64)
    }

    /// Coarse centroids then sub-centroids, little-endian f32.
    pub fn export_codebooks(&self) -> Result<Vec<u8>> {
        let (coarse, codebook) = self.trained()?;
        Ok(coarse
            .centroids
            .iter()
            .chain(&codebook.centroids)
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect())
    }

    /// Writes `coarse.f32` and `pq.f32` into `dir`.
    pub fn write_codebooks(&self, dir: &Path) -> Result<()> {
        let (coarse, codebook) = self.trained()?;
        for (name, vals) in [("coarse.f32", &coarse.centroids), ("pq.f32", &codebook.centroids)] {
            let bytes: Vec<u8> = vals.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn audit_structure(&self, store: &DatasetStore<T>) -> Vec<String> {
        let mut out = Vec::new();
        let Ok((coarse, codebook)) = self.trained() else {
            if !store.is_empty() {
                out.push("ivfpq: untrained with a non-empty store".into());
            }
            return out;
        };
        let mut seen = vec![0u32; store.len()];
        for (li, list) in self.lists.iter().enumerate() {
            if list.codes.len() != list.ids.len() * codebook.m {
                out.push(format!("ivfpq: list {li} code length mismatch"));
            }
            if list.codes.iter().any(|&c| c as usize >= codebook.ksub) {
                out.push(format!("ivfpq: list {li} holds an out-of-range code"));
            }
            for (pos, &id) in list.ids.iter().enumerate() {
                if !store.contains(id) {
                    out.push(format!("ivfpq: unknown id {id} in list {li}"));
                    continue;
                }
                seen[id.index()] += 1;
                if self.locator[id.index()] != (li as u32, pos as u32) {
                    out.push(format!("ivfpq: stale locator for {id}"));
                }
                if coarse.assign(store.row(id)) != li {
                    out.push(format!("ivfpq: {id} is not in its nearest cell"));
                }
            }
        }
        for (i, &c) in seen.iter().enumerate() {
            if c != 1 {
                out.push(format!("ivfpq: id {i} appears in {c} lists"));
            }
        }
        out
    }
}

impl<T: Scalar> DynamicIndex<T> for IvfPq<T> {
    fn method(&self) -> &'static str {
        "ivfpq"
    }
    fn build(&mut self, store: &DatasetStore<T>) -> Result<()> {
        self.train_and_fill(store)
    }
    fn insert(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.ivfpq_insert(store, id)
    }
    fn update(&mut self, store: &DatasetStore<T>, id: VectorId) -> Result<()> {
        self.ivfpq_update(store, id)
    }
    fn end_event_block(&mut self, store: &DatasetStore<T>) -> Result<()> {
        self.maintain(store).map(|_| ())
    }
    fn search(&mut self, store: &DatasetStore<T>, query: &[T], k: usize) -> Result<NeighbourList> {
        self.ivfpq_search(store, query, k, self.params.nprobe)
    }
    fn memory_bytes(&self) -> usize {
        let lists: usize = self
            .lists
            .iter()
            .map(|l| l.ids.capacity() * 8 + l.codes.capacity() + 48)
            .sum();
        let books = self.coarse.as_ref().map_or(0, |c| c.centroids.capacity() * 8)
            + self.codebook.as_ref().map_or(0, |b| b.centroids.capacity() * 8);
        lists + books + self.locator.capacity() * 8
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

    fn params(nlist: usize, m: usize, nbits: usize) -> IvfPqParams {
        IvfPqParams { nlist, m, nbits, nprobe: 1, retrain_every: 0, rerank: false }
    }

    fn synthetic(n: usize, seed: u64) -> DatasetStore<f32> {
        let spec = SyntheticSpec { n, dim: 16, clusters: 16, spread: 0.1, seed };
        DatasetStore::from_rows(16, &gen_synthetic::<f32>(&spec).unwrap().vectors).unwrap()
    }

    /// Integer grid on which 2-bit codes per coordinate are lossless.
    fn lossless_store() -> DatasetStore<f32> {
        let mut rows = Vec::new();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    rows.push([a as f32, b as f32, c as f32, ((a + b + c) % 4) as f32]);
                }
            }
        }
        DatasetStore::from_rows(4, &rows).unwrap()
    }

    #[test]
    fn defaults() {
        let p = IvfPqParams::defaults_for(64, 10_000);
        assert_eq!((p.nlist, p.m, p.nbits, p.nprobe), (100, 8, 8, 1));
        assert_eq!(IvfPqParams::defaults_for(12, 10).m, 6);
        assert_eq!(IvfPqParams::defaults_for(7, 10).m, 7);
        assert_eq!(IvfPqParams::defaults_for(11, 10).m, 1);
    }

    #[test]
    fn two_points_reproduce_residuals() {
        let s = DatasetStore::from_rows(2, &[[0.0f32, 0.0], [2.0, 4.0]]).unwrap();
        let (coarse, book) = ivfpq_train(&s, 1, 1, 1, 5).unwrap();
        assert_eq!(coarse.centroids, vec![1.0, 2.0]);
        let mut subs = vec![book.sub_centroid(0, 0).to_vec(), book.sub_centroid(0, 1).to_vec()];
        subs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(subs, vec![vec![-1.0, -2.0], vec![1.0, 2.0]]);
        assert!(matches!(ivfpq_train(&s, 1, 1, 2, 5), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let s = synthetic(600, 1);
        assert_eq!(ivfpq_train(&s, 8, 4, 4, 3).unwrap(), ivfpq_train(&s, 8, 4, 4, 3).unwrap());
    }

    #[test]
    fn more_bits_less_error() {
        let s = synthetic(3000, 2);
        let mut coarse = IvfPq::<f32>::new(params(8, 4, 4), 1).unwrap();
        coarse.train_and_fill(&s).unwrap();
        let mut fine = IvfPq::<f32>::new(params(8, 4, 8), 1).unwrap();
        fine.train_and_fill(&s).unwrap();
        assert!(fine.quantisation_error(&s).unwrap() < coarse.quantisation_error(&s).unwrap());
    }

    #[test]
    fn lossless_codes_are_exact() {
        let s = lossless_store();
        let mut ix = IvfPq::<f32>::new(params(1, 4, 2), 3).unwrap();
        ix.train_and_fill(&s).unwrap();
        assert_eq!(ix.quantisation_error(&s).unwrap(), 0.0);
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let q: Vec<f32> = (0..4).map(|_| (rng::below(&mut r, 9) as f32) * 0.5 - 0.25).collect();
            for k in [1, 5, 20] {
                assert_eq!(ix.ivfpq_search(&s, &q, k, 1).unwrap(), exact_knn(&s, &q, k).unwrap());
            }
        }
    }

    #[test]
    fn centroid_insert_encodes_small_residual() {
        let mut s = synthetic(500, 3);
        let mut ix = IvfPq::<f32>::new(params(4, 4, 4), 1).unwrap();
        ix.train_and_fill(&s).unwrap();
        let centre: Vec<f32> = ix.coarse().unwrap().centroid(2).iter().map(|&v| v as f32).collect();
        let id = s.apply(&Event::Addition(centre.clone())).unwrap().id();
        ix.ivfpq_insert(&s, id).unwrap();
        assert_eq!(ix.list_of(id), Some(2));
        let book = ix.codebook().unwrap();
        let zero = vec![0.0; 16];
        assert_eq!(ix.code_of(id).unwrap(), book.encode(&zero).as_slice());
    }

    #[test]
    fn adc_matches_decode_distance() {
        let s = synthetic(2000, 4);
        let mut ix = IvfPq::<f32>::new(params(8, 4, 6), 2).unwrap();
        ix.train_and_fill(&s).unwrap();
        let (coarse, book) = ix.trained().unwrap();
        let q: Vec<f32> = s.row(VectorId(17)).iter().map(|v| v + 0.05).collect();
        for i in (0..2000).step_by(13) {
            let id = VectorId(i);
            let list = ix.list_of(id).unwrap();
            let table = book.adc_table(&residual(&q, coarse.centroid(list)));
            let adc = book.adc_score(&table, ix.code_of(id).unwrap());
            let rec: Vec<f64> = book.decode(ix.code_of(id).unwrap());
            let qr = residual(&q, coarse.centroid(list));
            let direct = kmeans::sq(&qr, &rec);
            assert!((adc - direct).abs() <= 1e-5 * direct.max(1e-12));
        }
    }

    #[test]
    fn full_probe_scans_every_code_once() {
        let s = synthetic(1000, 6);
        let mut ix = IvfPq::<f32>::new(params(10, 4, 4), 2).unwrap();
        ix.train_and_fill(&s).unwrap();
        assert_eq!(ix.codes_scanned(s.row(VectorId(0)), 10).unwrap(), 1000);
        let all = ix.ivfpq_search(&s, s.row(VectorId(0)), 1000, 10).unwrap();
        let mut ids = all.ids();
        ids.sort();
        assert_eq!(ids, s.snapshot_ids());
    }

    #[test]
    fn events_follow_nearest_cell() {
        let mut s = synthetic(3000, 7);
        let mut ix = IvfPq::<f32>::new(params(16, 4, 4), 2).unwrap();
        ix.train_and_fill(&s).unwrap();
        let extra = synthetic(3000, 8);
        let mut r = rng::seeded(9);
        let mut next = 0;
        for _ in 0..10_000 {
            if rng::uniform(&mut r) < 0.3 {
                let id = s.apply(&Event::Addition(extra.row(VectorId(next)).to_vec())).unwrap().id();
                next += 1;
                ix.ivfpq_insert(&s, id).unwrap();
            } else {
                let id = VectorId(rng::below(&mut r, s.len()) as u64);
                let donor = extra.row(VectorId(rng::below(&mut r, 3000) as u64)).to_vec();
                s.apply_event(&Event::Update(id, donor)).unwrap();
                ix.ivfpq_update(&s, id).unwrap();
            }
        }
        assert!(ix.audit_structure(&s).is_empty(), "{:?}", &ix.audit_structure(&s)[..3]);
        let coarse = ix.coarse().unwrap();
        for (id, x) in s.rows() {
            assert_eq!(ix.list_of(id), Some(coarse.assign(x)));
        }
    }

    #[test]
    fn moving_across_cells_relocates() {
        let s0 = DatasetStore::from_rows(1, &[[0.0f32], [0.1], [10.0], [10.1]]).unwrap();
        let mut ix = IvfPq::<f32>::new(params(2, 1, 1), 1).unwrap();
        ix.train_and_fill(&s0).unwrap();
        let mut s = s0.clone();
        let before = ix.list_of(VectorId(0)).unwrap();
        s.apply_event(&Event::Update(VectorId(0), vec![10.05])).unwrap();
        ix.ivfpq_update(&s, VectorId(0)).unwrap();
        assert_eq!(ix.list_of(VectorId(0)), ix.list_of(VectorId(2)));
        assert_ne!(ix.list_of(VectorId(0)), Some(before));
        assert!(ix.audit_structure(&s).is_empty());
    }

    #[test]
    fn recall_monotone_in_nprobe_and_retraining_keeps_ids() {
        let mut s = synthetic(4000, 10);
        let mut ix = IvfPq::<f32>::new(IvfPqParams { retrain_every: 100, ..params(16, 8, 6) }, 3).unwrap();
        ix.train_and_fill(&s).unwrap();
        let queries = synthetic(200, 11);
        let mut prev = 0.0;
        for nprobe in [1, 2, 4, 8, 16] {
            let mut total = 0.0;
            for (_, q) in queries.rows() {
                let truth = exact_knn(&s, q, 10).unwrap().ids();
                let got = ix.ivfpq_search(&s, q, 10, nprobe).unwrap().ids();
                total += got.iter().filter(|i| truth.contains(i)).count() as f64 / 10.0;
            }
            let r = total / 200.0;
            assert!(r + 0.02 >= prev, "nprobe={nprobe}: {r} < {prev}");
            prev = r;
        }
        for i in 0..100 {
            s.apply_event(&Event::Update(VectorId(i), queries.row(VectorId(i)).to_vec())).unwrap();
            ix.ivfpq_update(&s, VectorId(i)).unwrap();
        }
        assert!(DynamicIndex::end_event_block(&mut ix, &s).is_ok());
        assert_eq!(ix.retrain_count(), 1);
        assert!(ix.audit_structure(&s).is_empty());
        let bytes = ix.export_codebooks().unwrap();
        assert_eq!(bytes.len(), (16 * 16 + 8 * 64 * 2) * 4);
    }

    #[test]
    fn untrained_and_bad_probe() {
        let s = synthetic(100, 12);
        let mut ix = IvfPq::<f32>::new(params(4, 4, 2), 1).unwrap();
        assert!(matches!(ix.ivfpq_insert(&s, VectorId(0)), Err(Error::Untrained)));
        assert!(matches!(ix.ivfpq_search(&s, s.row(VectorId(0)), 1, 1), Err(Error::Untrained)));
        ix.train_and_fill(&s).unwrap();
        assert!(ix.ivfpq_search(&s, s.row(VectorId(0)), 1, 5).is_err());
        assert!(IvfPq::<f32>::new(IvfPqParams { nprobe: 9, ..params(4, 4, 2) }, 1).is_err());
    }
}
