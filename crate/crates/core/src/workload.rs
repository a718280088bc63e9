//! Deterministic dynamic workloads: growing (ODC) and converging (OFL)
//! scenarios, rate/batch rescheduling, and the `DYNW` binary container.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::exact_knn;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::store::{DatasetStore, Event, VectorId};

pub const MAGIC: &[u8; 4] = b"DYNW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Block<T> {
    Events(Vec<Event<T>>),
    /// `(query id, vector)`; query ids number the search stream from 0.
    Searches(Vec<(u64, Vec<T>)>),
}

impl<T> Block<T> {
    pub fn len(&self) -> usize {
        match self {
            Block::Events(e) => e.len(),
            Block::Searches(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_events(&self) -> bool {
        matches!(self, Block::Events(_))
    }
}

/// Positive rational number of event blocks per search block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate {
    pub num: u64,
    pub den: u64,
}

impl Rate {
    pub const ONE: Rate = Rate { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidParameter(format!("rate {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `ceil(j * num / den)`.
    fn events_after_round(self, j: u64) -> u64 {
        (j * self.num).div_ceil(self.den)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("rate `{s}` is not `n` or `n/d`"));
        match s.split_once('/') {
            Some((n, d)) => Rate::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => Rate::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSpec {
    pub rate: Rate,
    pub event_batch: usize,
    pub search_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptMeta {
    pub scenario: String,
    pub seed: u64,
    pub n0: usize,
    pub n_events: usize,
    pub n_searches: usize,
    pub event_batch: usize,
    pub search_batch: usize,
    pub rate: Rate,
    /// Step size of the convergence model, OFL only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// True when the generator lengthened the event stream for a rate run.
    #[serde(default)]
    pub extended: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadScript<T> {
    pub meta: ScriptMeta,
    pub dim: usize,
    /// `n0 * dim`, row-major.
    pub initial: Vec<T>,
    pub blocks: Vec<Block<T>>,
}

impl<T: Scalar> WorkloadScript<T> {
    pub fn initial_store(&self) -> Result<DatasetStore<T>> {
        DatasetStore::from_flat(self.dim, self.initial.clone())
    }

    pub fn events(&self) -> impl Iterator<Item = &Event<T>> + '_ {
        self.blocks.iter().flat_map(|b| match b {
            Block::Events(e) => e.as_slice(),
            Block::Searches(_) => &[],
        })
    }

    pub fn searches(&self) -> impl Iterator<Item = &(u64, Vec<T>)> + '_ {
        self.blocks.iter().flat_map(|b| match b {
            Block::Searches(s) => s.as_slice(),
            Block::Events(_) => &[],
        })
    }

    pub fn event_count(&self) -> usize {
        self.events().count()
    }

    pub fn search_count(&self) -> usize {
        self.searches().count()
    }

    /// Kind sequence as a string of `E` and `S`, for inspection.
    pub fn shape(&self) -> String {
        self.blocks.iter().map(|b| if b.is_events() { 'E' } else { 'S' }).collect()
    }

    /// Stable 64-bit digest of metadata and every vector component.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        h.write(serde_json::to_string(&self.meta).expect("plain data").as_bytes());
        h.write_usize(self.dim);
        let mut put = |v: &[T]| {
            h.write_usize(v.len());
            for x in v {
                h.write_u64(x.as_f64().to_bits());
            }
        };
        put(&self.initial);
        for b in &self.blocks {
            match b {
                Block::Events(es) => {
                    for e in es {
                        match e {
                            Event::Addition(v) => put(v),
                            Event::Update(id, v) => {
                                put(&[T::from_f64(id.0 as f64)]);
                                put(v)
                            }
                        }
                    }
                }
                Block::Searches(qs) => {
                    for (q, v) in qs {
                        put(&[T::from_f64(*q as f64)]);
                        put(v);
                    }
                }
            }
        }
        h.finish()
    }

    /// Applies every event in order, checking each references a live id.
    pub fn replay(&self) -> Result<DatasetStore<T>> {
        let mut store = self.initial_store()?;
        for (i, e) in self.events().enumerate() {
            store
                .apply_event(e)
                .map_err(|err| Error::Replay(format!("event {i}: {err}")))?;
        }
        Ok(store)
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("plain data");
        let mut out = Vec::with_capacity(64 + meta.len() + self.initial.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&((self.initial.len() / self.dim.max(1)) as u64).to_le_bytes());
        let put = |out: &mut Vec<u8>, v: &[T]| {
            for x in v {
                out.extend_from_slice(&x.as_f32().to_le_bytes());
            }
        };
        put(&mut out, &self.initial);
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for b in &self.blocks {
            out.push(if b.is_events() { 0 } else { 1 });
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            match b {
                Block::Events(es) => {
                    for e in es {
                        let (tag, id) = match e {
                            Event::Addition(_) => (0u8, u64::MAX),
                            Event::Update(id, _) => (1u8, id.0),
                        };
                        out.push(tag);
                        out.extend_from_slice(&id.to_le_bytes());
                        put(&mut out, e.vector());
                    }
                }
                Block::Searches(qs) => {
                    for (q, v) in qs {
                        out.extend_from_slice(&q.to_le_bytes());
                        put(&mut out, v);
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse { offset: 0, message: "missing DYNW magic".into() });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(r.err(format!("unsupported container version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: ScriptMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.err("dimension 0"));
        }
        let n0 = r.u64()? as usize;
        let initial = r.floats(n0.checked_mul(dim).ok_or_else(|| r.err("initial size overflows"))?)?;
        let n_blocks = r.u64()?;
        let mut blocks = Vec::new();
        for _ in 0..n_blocks {
            let kind = r.take(1)?[0];
            let count = r.u64()? as usize;
            match kind {
                0 => {
                    let mut es = Vec::with_capacity(count.min(1 << 16));
                    for _ in 0..count {
                        let tag = r.take(1)?[0];
                        let id = r.u64()?;
                        let v = r.floats(dim)?;
                        es.push(match tag {
                            0 => Event::Addition(v),
                            1 => Event::Update(VectorId(id), v),
                            t => return Err(r.err(format!("unknown event tag {t}"))),
                        });
                    }
                    blocks.push(Block::Events(es));
                }
                1 => {
                    let mut qs = Vec::with_capacity(count.min(1 << 16));
                    for _ in 0..count {
                        let q = r.u64()?;
                        qs.push((q, r.floats(dim)?));
                    }
                    blocks.push(Block::Searches(qs));
                }
                k => return Err(r.err(format!("unknown block kind {k}"))),
            }
        }
        if r.at != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { meta, dim, initial, blocks })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.at as u64, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated: wanted {n} bytes")));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflows"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect())
    }
}

fn chunk<X: Clone>(items: &[X], size: usize) -> Vec<Vec<X>> {
    items.chunks(size.max(1)).map(<[X]>::to_vec).collect()
}

/// Alternates blocks from two streams, `lead` first, one event block per
/// search block, then drains whichever stream is left.
fn alternate<T>(events: Vec<Vec<Event<T>>>, searches: Vec<Vec<(u64, Vec<T>)>>, events_lead: bool) -> Vec<Block<T>> {
    interleave(events, searches, events_lead, Rate::ONE)
}

/// Round `j` (from 1) emits event blocks until `ceil(j * rate)` have been
/// emitted in total, and one search block; the leading kind goes first.
fn interleave<T>(
    events: Vec<Vec<Event<T>>>,
    searches: Vec<Vec<(u64, Vec<T>)>>,
    events_lead: bool,
    rate: Rate,
) -> Vec<Block<T>> {
    let mut out = Vec::with_capacity(events.len() + searches.len());
    let mut ev = events.into_iter().peekable();
    let mut emitted = 0u64;
    let mut round = 0u64;
    for s in searches {
        round += 1;
        let target = rate.events_after_round(round);
        let mut pending = Some(s);
        if !events_lead {
            out.extend(pending.take().map(Block::Searches));
        }
        while emitted < target {
            let Some(e) = ev.next() else { break };
            out.push(Block::Events(e));
            emitted += 1;
        }
        out.extend(pending.map(Block::Searches));
    }
    out.extend(ev.map(Block::Events));
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdcSpec {
    pub n0: usize,
    pub n_events: usize,
    /// Defaults to `n_events`.
    pub n_searches: Option<usize>,
    pub event_batch: usize,
    pub search_batch: usize,
    pub seed: u64,
}

impl OdcSpec {
    pub fn new(n0: usize, n_events: usize) -> Self {
        Self { n0, n_events, n_searches: None, event_batch: 1, search_batch: 1, seed: 0 }
    }
}

/// Online data collection: the first `n0` pool vectors form the initial
/// dataset; every later pool vector is searched for and then appended.
pub fn gen_odc<T: Scalar>(pool: &DatasetStore<T>, spec: &OdcSpec) -> Result<WorkloadScript<T>> {
    let n_searches = spec.n_searches.unwrap_or(spec.n_events);
    let need = spec.n0 + spec.n_events.max(n_searches);
    if pool.len() < need {
        return Err(Error::InsufficientData(format!("ODC needs {need} pool vectors, have {}", pool.len())));
    }
    if spec.event_batch == 0 || spec.search_batch == 0 {
        return Err(Error::InvalidParameter("batch sizes must be >= 1".into()));
    }
    let row = |i: usize| pool.row(VectorId(i as u64)).to_vec();
    let initial = pool.as_flat()[..spec.n0 * pool.dim()].to_vec();
    let events: Vec<Event<T>> = (0..spec.n_events).map(|i| Event::Addition(row(spec.n0 + i))).collect();
    let searches: Vec<(u64, Vec<T>)> = (0..n_searches).map(|i| (i as u64, row(spec.n0 + i))).collect();
    Ok(WorkloadScript {
        meta: ScriptMeta {
            scenario: "odc".into(),
            seed: spec.seed,
            n0: spec.n0,
            n_events: spec.n_events,
            n_searches,
            event_batch: spec.event_batch,
            search_batch: spec.search_batch,
            rate: Rate::ONE,
            eta: None,
            extended: false,
        },
        dim: pool.dim(),
        initial,
        blocks: alternate(chunk(&events, spec.event_batch), chunk(&searches, spec.search_batch), false),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OflSpec {
    pub n_events: usize,
    /// Defaults to `n_events`.
    pub n_searches: Option<usize>,
    pub eta: f64,
    pub event_batch: usize,
    pub search_batch: usize,
    pub seed: u64,
}

impl OflSpec {
    pub fn new(n_events: usize) -> Self {
        Self { n_events, n_searches: None, eta: 0.1, event_batch: 200, search_batch: 200, seed: 0 }
    }
}

/// Target of each sample: its cluster centre.
pub fn targets_from_labels<T: Scalar>(centres: &[Vec<T>], labels: &[usize]) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&l| centres[l].iter().map(|x| x.as_f64()).collect())
        .collect()
}

/// Target of each sample: the mean of its `k` exact nearest neighbours,
/// itself excluded.
pub fn targets_from_knn<T: Scalar>(store: &DatasetStore<T>, k: usize) -> Result<Vec<Vec<f64>>> {
    if store.len() < 2 {
        return Err(Error::InsufficientData("neighbour targets need at least 2 samples".into()));
    }
    let mut out = Vec::with_capacity(store.len());
    for (id, x) in store.rows() {
        let found = exact_knn(store, x, k + 1)?;
        let others: Vec<VectorId> = found.ids().into_iter().filter(|&n| n != id).take(k).collect();
        let mut mean = vec![0.0; store.dim()];
        for n in &others {
            for (m, v) in mean.iter_mut().zip(store.row(*n)) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= others.len() as f64);
        out.push(mean);
    }
    Ok(out)
}

/// Online feature learning: every sample drifts towards a fixed target.
///
/// Update events visit samples in the order of one seeded permutation,
/// cycled; each sets `x <- (1 - eta) * x + eta * target` (in f64). Search
/// blocks take queries round-robin from `queries`. Blocks start with events.
pub fn gen_ofl<T: Scalar>(
    initial: &DatasetStore<T>,
    targets: &[Vec<f64>],
    queries: &DatasetStore<T>,
    spec: &OflSpec,
) -> Result<WorkloadScript<T>> {
    if !(spec.eta > 0.0 && spec.eta <= 1.0) {
        return Err(Error::InvalidParameter(format!("eta {} outside (0, 1]", spec.eta)));
    }
    if initial.is_empty() || queries.is_empty() {
        return Err(Error::InsufficientData("OFL needs samples and queries".into()));
    }
    if targets.len() != initial.len() || queries.dim() != initial.dim() {
        return Err(Error::Mismatch("OFL targets/queries do not match the dataset".into()));
    }
    if spec.event_batch == 0 || spec.search_batch == 0 {
        return Err(Error::InvalidParameter("batch sizes must be >= 1".into()));
    }
    let n0 = initial.len();
    let mut order: Vec<usize> = (0..n0).collect();
    let mut r = rng::seeded(spec.seed);
    rng::shuffle(&mut r, &mut order);
    let mut current: Vec<Vec<T>> = initial.rows().map(|(_, v)| v.to_vec()).collect();
    let mut events = Vec::with_capacity(spec.n_events);
    for e in 0..spec.n_events {
        let i = order[e % n0];
        let next: Vec<T> = current[i]
            .iter()
            .zip(&targets[i])
            .map(|(x, t)| T::from_f64((1.0 - spec.eta) * x.as_f64() + spec.eta * t))
            .collect();
        current[i] = next.clone();
        events.push(Event::Update(VectorId(i as u64), next));
    }
    let n_searches = spec.n_searches.unwrap_or(spec.n_events);
    let searches: Vec<(u64, Vec<T>)> = (0..n_searches)
        .map(|s| (s as u64, queries.row(VectorId((s % queries.len()) as u64)).to_vec()))
        .collect();
    Ok(WorkloadScript {
        meta: ScriptMeta {
            scenario: "ofl".into(),
            seed: spec.seed,
            n0,
            n_events: spec.n_events,
            n_searches,
            event_batch: spec.event_batch,
            search_batch: spec.search_batch,
            rate: Rate::ONE,
            eta: Some(spec.eta),
            extended: false,
        },
        dim: initial.dim(),
        initial: initial.as_flat().to_vec(),
        blocks: alternate(chunk(&events, spec.event_batch), chunk(&searches, spec.search_batch), true),
    })
}

/// Mean Euclidean distance from each sample to its target.
pub fn mean_distance_to_target<T: Scalar>(store: &DatasetStore<T>, targets: &[Vec<f64>]) -> f64 {
    let total: f64 = store
        .rows()
        .zip(targets)
        .map(|((_, x), t)| x.iter().zip(t).map(|(a, b)| (a.as_f64() - b).powi(2)).sum::<f64>().sqrt())
        .sum();
    total / store.len().max(1) as f64
}

/// Re-chunks both streams to new batch sizes and interleaves them at
/// `rate` event blocks per search block, keeping the leading block kind.
pub fn reschedule<T: Scalar>(script: &WorkloadScript<T>, spec: &RateSpec) -> Result<WorkloadScript<T>> {
    if spec.event_batch == 0 || spec.search_batch == 0 {
        return Err(Error::InvalidParameter("batch sizes must be >= 1".into()));
    }
    let rate = Rate::new(spec.rate.num, spec.rate.den)?;
    let events: Vec<Event<T>> = script.events().cloned().collect();
    let searches: Vec<(u64, Vec<T>)> = script.searches().cloned().collect();
    let events_lead = script.blocks.first().is_none_or(|b| b.is_events());
    let mut meta = script.meta.clone();
    meta.event_batch = spec.event_batch;
    meta.search_batch = spec.search_batch;
    meta.rate = rate;
    Ok(WorkloadScript {
        meta,
        dim: script.dim,
        initial: script.initial.clone(),
        blocks: interleave(
            chunk(&events, spec.event_batch),
            chunk(&searches, spec.search_batch),
            events_lead,
            rate,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{gen_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn pool(n: usize, dim: usize, seed: u64) -> DatasetStore<f32> {
        let mut r = rng::seeded(seed);
        let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng::uniform(&mut r) as f32).collect()).collect();
        DatasetStore::from_rows(dim, &rows).unwrap()
    }

    fn ofl_fixture(n0: usize, n_events: usize, eta: f64) -> (DatasetStore<f32>, Vec<Vec<f64>>, WorkloadScript<f32>) {
        let data = gen_synthetic::<f32>(&SyntheticSpec { n: n0 + 50, dim: 8, clusters: 5, spread: 0.1, seed: 3 }).unwrap();
        let initial = DatasetStore::from_rows(8, &data.vectors[..n0]).unwrap();
        let queries = DatasetStore::from_rows(8, &data.vectors[n0..]).unwrap();
        let targets = targets_from_labels(&data.centres, &data.labels[..n0]);
        let spec = OflSpec { eta, seed: 4, event_batch: 20, search_batch: 20, ..OflSpec::new(n_events) };
        let script = gen_ofl(&initial, &targets, &queries, &spec).unwrap();
        (initial, targets, script)
    }

    #[test]
    fn odc_structure() {
        let p = pool(4, 2, 1);
        let s = gen_odc(&p, &OdcSpec::new(2, 2)).unwrap();
        assert_eq!(s.shape(), "SESE");
        let row = |i: u64| p.row(VectorId(i)).to_vec();
        assert_eq!(s.blocks[0], Block::Searches(vec![(0, row(2))]));
        assert_eq!(s.blocks[1], Block::Events(vec![Event::Addition(row(2))]));
        assert_eq!(s.blocks[2], Block::Searches(vec![(1, row(3))]));
        assert_eq!(s.blocks[3], Block::Events(vec![Event::Addition(row(3))]));

        let only = gen_odc(&p, &OdcSpec { n_searches: Some(2), ..OdcSpec::new(2, 0) }).unwrap();
        assert_eq!(only.shape(), "SS");
        assert!(gen_odc(&p, &OdcSpec::new(2, 3)).is_err());
    }

    #[test]
    fn odc_replay_is_the_pool_prefix() {
        let p = pool(300, 4, 2);
        let s = gen_odc(&p, &OdcSpec { event_batch: 7, search_batch: 7, ..OdcSpec::new(100, 150) }).unwrap();
        let end = s.replay().unwrap();
        assert_eq!(end.as_flat(), &p.as_flat()[..250 * 4]);
        assert_eq!(s, gen_odc(&p, &OdcSpec { event_batch: 7, search_batch: 7, ..OdcSpec::new(100, 150) }).unwrap());
    }

    #[test]
    fn ofl_eta_one_pins_to_target() {
        let (_, targets, s) = ofl_fixture(30, 30, 1.0);
        let end = s.replay().unwrap();
        for (id, x) in end.rows() {
            let t: Vec<f32> = targets[id.index()].iter().map(|&v| v as f32).collect();
            assert_eq!(x, t.as_slice());
        }
        assert_eq!(&s.shape()[..2], "ES");
    }

    #[test]
    fn ofl_decay_closed_form() {
        let (initial, targets, s) = ofl_fixture(500, 10_000, 0.1);
        let before = mean_distance_to_target(&initial, &targets);
        let after = mean_distance_to_target(&s.replay().unwrap(), &targets);
        let predicted = before * 0.9f64.powi(20);
        assert!(((after - predicted) / predicted).abs() < 1e-5, "{after} vs {predicted}");
        assert_eq!(s.replay().unwrap(), s.replay().unwrap());
        assert!(gen_ofl(&initial, &targets, &initial, &OflSpec { eta: 0.0, ..OflSpec::new(1) }).is_err());
        assert!(gen_ofl(&initial, &targets, &initial, &OflSpec { eta: 1.5, ..OflSpec::new(1) }).is_err());
    }

    #[test]
    fn knn_targets_exclude_self() {
        let s = DatasetStore::from_rows(1, &[[0.0f32], [1.0], [3.0], [10.0]]).unwrap();
        let t = targets_from_knn(&s, 2).unwrap();
        assert_eq!(t[0], vec![2.0]);
        assert_eq!(t[3], vec![2.0]);
    }

    #[test]
    fn reschedule_identity_and_rechunk() {
        let (_, _, s) = ofl_fixture(40, 400, 0.1);
        let same = reschedule(&s, &RateSpec { rate: Rate::ONE, event_batch: 20, search_batch: 20 }).unwrap();
        assert_eq!(same, s);
        let wide = reschedule(&s, &RateSpec { rate: Rate::new(1, 2).unwrap(), event_batch: 40, search_batch: 20 }).unwrap();
        let count = |sc: &WorkloadScript<f32>| sc.blocks.iter().filter(|b| b.is_events()).count();
        assert_eq!(count(&wide) * 2, count(&s));
        assert!(wide.blocks.iter().filter(|b| b.is_events()).all(|b| b.len() == 40));
        assert_eq!(&wide.shape()[..6], "ESSESS");
        let fast = reschedule(&s, &RateSpec { rate: Rate::new(4, 1).unwrap(), event_batch: 20, search_batch: 20 }).unwrap();
        assert_eq!(&fast.shape()[..10], "EEEESEEEES");
        assert!(Rate::new(0, 1).is_err());
        assert_eq!("3/6".parse::<Rate>().unwrap(), Rate { num: 1, den: 2 });
        assert_eq!(Rate::new(8, 1).unwrap().to_string(), "8");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn reschedule_preserves_streams(num in 1u64..6, den in 1u64..6, be in 1usize..50, bs in 1usize..50) {
            let p = pool(200, 3, 9);
            let s = gen_odc(&p, &OdcSpec { event_batch: 5, search_batch: 5, ..OdcSpec::new(50, 120) }).unwrap();
            let r = reschedule(&s, &RateSpec { rate: Rate::new(num, den).unwrap(), event_batch: be, search_batch: bs }).unwrap();
            prop_assert!(r.events().eq(s.events()));
            prop_assert!(r.searches().eq(s.searches()));
            prop_assert_eq!(r.replay().unwrap(), s.replay().unwrap());
        }
    }

    #[test]
    fn container_round_trip_and_errors() {
        let (_, _, s) = ofl_fixture(20, 50, 0.1);
        let bytes = s.encode();
        assert_eq!(&bytes[..4], b"DYNW");
        let back = WorkloadScript::<f32>::decode(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
        let p = pool(30, 3, 1);
        let o = gen_odc(&p, &OdcSpec::new(10, 20)).unwrap();
        assert_eq!(WorkloadScript::<f32>::decode(&o.encode()).unwrap(), o);
        assert_ne!(o.digest(), s.digest());

        assert!(matches!(WorkloadScript::<f32>::decode(b"NOPE"), Err(Error::Parse { offset: 0, .. })));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(WorkloadScript::<f32>::decode(cut), Err(Error::Parse { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WorkloadScript::<f32>::decode(&extra).is_err());
    }

    #[test]
    fn replay_rejects_dangling_update() {
        let (_, _, mut s) = ofl_fixture(20, 20, 0.1);
        s.blocks.insert(0, Block::Events(vec![Event::Update(VectorId(99), vec![0.0; 8])]));
        assert!(matches!(s.replay(), Err(Error::Replay(_))));
    }
}
