//! The mutable dataset every index and the oracle observe.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stable sample identifier, assigned densely in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorId(pub u64);

impl VectorId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for VectorId {
    fn from(i: usize) -> Self {
        VectorId(i as u64)
    }
}

impl fmt::Display for VectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event<T> {
    Addition(Vec<T>),
    Update(VectorId, Vec<T>),
}

impl<T> Event<T> {
    pub fn vector(&self) -> &[T] {
        match self {
            Event::Addition(v) | Event::Update(_, v) => v,
        }
    }
}

/// Outcome of applying one event: which id it touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Added(VectorId),
    Updated(VectorId),
}

impl Applied {
    pub fn id(self) -> VectorId {
        match self {
            Applied::Added(id) | Applied::Updated(id) => id,
        }
    }
}

pub(crate) fn check_vector<T: Scalar>(dim: usize, v: &[T]) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(pos));
    }
    Ok(())
}

/// Fixed-dimension vectors stored row-major; ids are row numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStore<T> {
    dim: usize,
    data: Vec<T>,
    version: u64,
}

impl<T: Scalar> DatasetStore<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            data: Vec::new(),
            version: 0,
        })
    }

    /// A store holding `rows` as ids `0..rows.len()`. Counts as a fresh
    /// store: the snapshot version starts at zero.
    pub fn from_rows<R: AsRef<[T]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut store = Self::new(dim)?;
        store.data.reserve(rows.len() * dim);
        for r in rows {
            check_vector(dim, r.as_ref())?;
            store.data.extend_from_slice(r.as_ref());
        }
        Ok(store)
    }

    /// Same as [`from_rows`](Self::from_rows) for a flat row-major buffer.
    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "flat buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        for row in data.chunks_exact(dim) {
            check_vector(dim, row)?;
        }
        Ok(Self {
            dim,
            data,
            version: 0,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn version(&self) -> u64 {
        self.version
    }

    #[inline]
    pub fn contains(&self, id: VectorId) -> bool {
        id.index() < self.len()
    }

    pub fn get(&self, id: VectorId) -> Option<&[T]> {
        let i = id.index();
        (i < self.len()).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Unchecked row access for index internals.
    #[inline]
    pub fn row(&self, id: VectorId) -> &[T] {
        let i = id.index();
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (VectorId, &[T])> + '_ {
        self.data
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, r)| (VectorId(i as u64), r))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    /// Ids in ascending order.
    pub fn snapshot_ids(&self) -> Vec<VectorId> {
        (0..self.len() as u64).map(VectorId).collect()
    }

    pub fn apply_event(&mut self, event: &Event<T>) -> Result<u64> {
        self.apply(event).map(|_| self.version)
    }

    /// Applies one event and reports the touched id. Bumps the snapshot
    /// version by exactly one on success and leaves the store untouched on
    /// error.
    pub fn apply(&mut self, event: &Event<T>) -> Result<Applied> {
        let applied = match event {
            Event::Addition(v) => {
                check_vector(self.dim, v)?;
                let id = VectorId(self.len() as u64);
                self.data.extend_from_slice(v);
                Applied::Added(id)
            }
            Event::Update(id, v) => {
                if !self.contains(*id) {
                    return Err(Error::UnknownId(*id));
                }
                check_vector(self.dim, v)?;
                let i = id.index();
                self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
                Applied::Updated(*id)
            }
        };
        self.version += 1;
        Ok(applied)
    }

    pub fn memory_bytes(&self) -> usize {
        self.data.capacity() * std::mem::size_of::<T>() + std::mem::size_of::<Self>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn random_script(seed: u64, n: usize, dim: usize) -> Vec<Event<f32>> {
        let mut r = rng::seeded(seed);
        let mut size = 0usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng::uniform(&mut r) as f32).collect();
            if size == 0 || rng::uniform(&mut r) < 0.5 {
                out.push(Event::Addition(v));
                size += 1;
            } else {
                out.push(Event::Update(VectorId(rng::below(&mut r, size) as u64), v));
            }
        }
        out
    }

    #[test]
    fn first_addition() {
        let mut s = DatasetStore::<f32>::new(2).unwrap();
        let v = s.apply_event(&Event::Addition(vec![1.0, 2.0])).unwrap();
        assert_eq!((s.len(), v), (1, 1));
        assert_eq!(s.get(VectorId(0)).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn update_overwrites() {
        let mut s = DatasetStore::<f32>::new(2).unwrap();
        s.apply_event(&Event::Addition(vec![1.0, 2.0])).unwrap();
        let v = s
            .apply_event(&Event::Update(VectorId(0), vec![9.0, 9.0]))
            .unwrap();
        assert_eq!((s.len(), v), (1, 2));
        assert_eq!(s.row(VectorId(0)), &[9.0, 9.0]);
    }

    #[test]
    fn invalid_events_rejected_without_mutation() {
        let mut s = DatasetStore::<f32>::new(2).unwrap();
        assert!(matches!(
            s.apply_event(&Event::Update(VectorId(0), vec![1.0, 1.0])),
            Err(Error::UnknownId(_))
        ));
        assert!(matches!(
            s.apply_event(&Event::Addition(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.apply_event(&Event::Addition(vec![1.0, f32::NAN])),
            Err(Error::NonFinite(1))
        ));
        assert_eq!((s.len(), s.version()), (0, 0));
        assert!(DatasetStore::<f32>::new(0).is_err());
    }

    #[test]
    fn snapshot_ids_dense() {
        let mut s = DatasetStore::<f32>::new(1).unwrap();
        assert!(s.snapshot_ids().is_empty());
        for i in 0..3 {
            s.apply_event(&Event::Addition(vec![i as f32])).unwrap();
        }
        assert_eq!(s.snapshot_ids(), vec![VectorId(0), VectorId(1), VectorId(2)]);
    }

    #[test]
    fn updates_never_change_id_set() {
        let mut s = DatasetStore::<f32>::new(4).unwrap();
        let mut r = rng::seeded(1);
        for _ in 0..1000 {
            let v = (0..4).map(|_| rng::uniform(&mut r) as f32).collect();
            s.apply_event(&Event::Addition(v)).unwrap();
        }
        for _ in 0..500 {
            let id = VectorId(rng::below(&mut r, 1000) as u64);
            let v = (0..4).map(|_| rng::uniform(&mut r) as f32).collect();
            s.apply_event(&Event::Update(id, v)).unwrap();
        }
        assert_eq!(s.snapshot_ids(), (0..1000u64).map(VectorId).collect::<Vec<_>>());
        assert_eq!(s.version(), 1500);
    }

    #[test]
    fn replay_is_deterministic() {
        let script = random_script(77, 1000, 8);
        let replay = || {
            let mut s = DatasetStore::<f32>::new(8).unwrap();
            for e in &script {
                s.apply_event(e).unwrap();
            }
            s
        };
        assert_eq!(replay(), replay());
    }

    proptest! {
        #[test]
        fn version_counts_mutations(seed in any::<u64>(), n in 0usize..300) {
            let script = random_script(seed, n, 3);
            let mut s = DatasetStore::<f32>::new(3).unwrap();
            let mut added = 0;
            for e in &script {
                if matches!(e, Event::Addition(_)) { added += 1; }
                s.apply_event(e).unwrap();
            }
            prop_assert_eq!(s.version(), n as u64);
            prop_assert_eq!(s.len(), added);
        }
    }
}
