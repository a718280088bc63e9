//! Corpus loaders (`fvecs`, `fbin`) and the seeded synthetic generator.
//!
//! Layouts, all little-endian:
//! - `fvecs`: repeated records `[i32 d][d x f32]`.
//! - `fbin`: `[i32 n][i32 d][n*d x f32]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_i32(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_f32s(bytes: &[u8], at: usize, n: usize) -> Vec<f32> {
    bytes[at..at + 4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::new();
    let mut at = 0usize;
    let mut dim: Option<usize> = None;
    while at < bytes.len() {
        if bytes.len() - at < 4 {
            return Err(parse_err(at, "truncated dimension header"));
        }
        let d = read_i32(bytes, at);
        if d <= 0 {
            return Err(parse_err(at, format!("non-positive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            Some(expected) if expected != d => {
                return Err(parse_err(
                    at,
                    format!("inconsistent dimension {d}, expected {expected}"),
                ))
            }
            _ => dim = Some(d),
        }
        if bytes.len() - at - 4 < 4 * d {
            return Err(parse_err(at, format!("truncated record of dimension {d}")));
        }
        out.push(read_f32s(bytes, at + 4, d));
        at += 4 + 4 * d;
    }
    Ok(out)
}

pub fn encode_fvecs(vectors: &[Vec<f32>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vectors.iter().map(|v| 4 + 4 * v.len()).sum());
    for v in vectors {
        out.extend_from_slice(&(v.len() as i32).to_le_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn parse_fbin(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    if bytes.len() < 8 {
        return Err(parse_err(0, "truncated fbin header"));
    }
    let n = read_i32(bytes, 0);
    let d = read_i32(bytes, 4);
    if n < 0 {
        return Err(parse_err(0, format!("negative vector count {n}")));
    }
    if d <= 0 {
        return Err(parse_err(4, format!("non-positive dimension {d}")));
    }
    let (n, d) = (n as usize, d as usize);
    let expected = 4 * n * d;
    if bytes.len() - 8 != expected {
        return Err(parse_err(
            8,
            format!(
                "payload is {} bytes, header declares {n} x {d} (= {expected} bytes)",
                bytes.len() - 8
            ),
        ));
    }
    Ok((0..n).map(|i| read_f32s(bytes, 8 + 4 * i * d, d)).collect())
}

/// Encodes as fbin. All vectors must share `dim`; an empty set still records
/// the dimension in the header.
pub fn encode_fbin(dim: usize, vectors: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * dim * vectors.len());
    out.extend_from_slice(&(vectors.len() as i32).to_le_bytes());
    out.extend_from_slice(&(dim as i32).to_le_bytes());
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_fvecs(&bytes)
}

pub fn write_fvecs(path: impl AsRef<Path>, vectors: &[Vec<f32>]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fvecs(vectors)).map_err(|e| Error::io(path, e))
}

pub fn read_fbin(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_fbin(&bytes)
}

pub fn write_fbin(path: impl AsRef<Path>, dim: usize, vectors: &[Vec<f32>]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fbin(dim, vectors)?).map_err(|e| Error::io(path, e))
}

/// Scales every non-zero row to unit length, after which squared Euclidean
/// distance ranks identically to cosine distance.
pub fn l2_normalize<T: Scalar>(vectors: &mut [Vec<T>]) {
    for v in vectors {
        let norm = v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x = T::from_f64(x.as_f64() / norm);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Per-component standard deviation around the cluster centre.
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dim == 0 || self.clusters == 0 {
            return Err(Error::InvalidParameter(
                "synthetic n, dim and clusters must be at least 1".into(),
            ));
        }
        if !(self.spread > 0.0) || !self.spread.is_finite() {
            return Err(Error::InvalidParameter("synthetic spread must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T> {
    pub vectors: Vec<Vec<T>>,
    pub centres: Vec<Vec<T>>,
    /// `labels[i] == i % clusters`.
    pub labels: Vec<usize>,
}

/// Gaussian blobs around uniform centres.
///
/// One ChaCha8 stream seeded with `spec.seed`: first `clusters * dim`
/// uniforms for the centres (row-major), then `dim` Box-Muller deviates per
/// sample in sample order. Sample `i` belongs to cluster `i % clusters`.
pub fn gen_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let mut r = rng::seeded(spec.seed);
    let centres: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| (0..spec.dim).map(|_| rng::uniform(&mut r)).collect())
        .collect();
    let mut vectors = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.clusters;
        let v = centres[c]
            .iter()
            .map(|&m| T::from_f64(m + spec.spread * rng::gaussian(&mut r)))
            .collect();
        vectors.push(v);
        labels.push(c);
    }
    let centres = centres
        .into_iter()
        .map(|c| c.into_iter().map(T::from_f64).collect())
        .collect();
    Ok(SyntheticData {
        vectors,
        centres,
        labels,
    })
}

/// Fresh samples around existing centres: sample `i` is centre `i % c`
/// plus Gaussian noise from a ChaCha8 stream seeded with `seed`.
pub fn draw_around<T: Scalar>(centres: &[Vec<T>], n: usize, spread: f64, seed: u64) -> Vec<Vec<T>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            centres[i % centres.len()]
                .iter()
                .map(|&m| T::from_f64(m.as_f64() + spread * rng::gaussian(&mut r)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::l2_sq;
    use proptest::prelude::*;

    #[test]
    fn fvecs_hand_record() {
        let mut bytes = vec![2, 0, 0, 0];
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 12);
        assert_eq!(parse_fvecs(&bytes).unwrap(), vec![vec![1.0, 2.0]]);
        assert!(parse_fvecs(&[]).unwrap().is_empty());
    }

    #[test]
    fn fvecs_errors_name_offsets() {
        let mut bytes = encode_fvecs(&[vec![1.0, 2.0]]);
        bytes.extend_from_slice(&3i32.to_le_bytes());
        bytes.extend_from_slice(&[0; 12]);
        match parse_fvecs(&bytes).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 12),
            e => panic!("{e}"),
        }
        let truncated = &encode_fvecs(&[vec![1.0, 2.0]])[..10];
        assert!(matches!(parse_fvecs(truncated), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(
            parse_fvecs(&0i32.to_le_bytes()),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(parse_fvecs(&[1, 0]), Err(Error::Parse { .. })));
    }

    #[test]
    fn fbin_cases() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        bytes.extend_from_slice(&4.0f32.to_le_bytes());
        assert_eq!(parse_fbin(&bytes).unwrap(), vec![vec![3.0, 4.0]]);

        let mut empty = 0i32.to_le_bytes().to_vec();
        empty.extend_from_slice(&96i32.to_le_bytes());
        assert!(parse_fbin(&empty).unwrap().is_empty());

        bytes.pop();
        assert!(matches!(parse_fbin(&bytes), Err(Error::Parse { offset: 8, .. })));
        let mut extra = encode_fbin(2, &[vec![1.0, 1.0]]).unwrap();
        extra.extend_from_slice(&[0; 4]);
        assert!(parse_fbin(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vs = vec![vec![1.0f32, -2.5, 3.0], vec![0.0, 1e-7, f32::MAX]];
        let p = dir.path().join("a.fvecs");
        write_fvecs(&p, &vs).unwrap();
        assert_eq!(read_fvecs(&p).unwrap(), vs);
        let q = dir.path().join("a.fbin");
        write_fbin(&q, 3, &vs).unwrap();
        assert_eq!(read_fbin(&q).unwrap(), vs);
        assert!(matches!(read_fvecs(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        // Any parseable fvecs byte string re-encodes to itself.
        #[test]
        fn fvecs_bytes_round_trip(dim in 1usize..9, rows in 0usize..6, seed in any::<u64>()) {
            let mut r = rng::seeded(seed);
            let mut bytes = Vec::new();
            for _ in 0..rows {
                bytes.extend_from_slice(&(dim as i32).to_le_bytes());
                for _ in 0..dim {
                    let bits = (rand_chacha::rand_core::RngCore::next_u32(&mut r)) & 0x7F7F_FFFF;
                    bytes.extend_from_slice(&bits.to_le_bytes());
                }
            }
            let parsed = parse_fvecs(&bytes).unwrap();
            prop_assert_eq!(encode_fvecs(&parsed), bytes);
        }
    }

    #[test]
    fn synthetic_degenerate_spread() {
        let spec = SyntheticSpec { n: 4, dim: 2, clusters: 1, spread: 1e-9, seed: 7 };
        let d = gen_synthetic::<f32>(&spec).unwrap();
        for v in &d.vectors {
            assert!(l2_sq(v, &d.vectors[0]) < 1e-12);
        }
    }

    #[test]
    fn synthetic_deterministic() {
        let spec = SyntheticSpec { n: 100, dim: 5, clusters: 3, spread: 0.1, seed: 7 };
        let a = gen_synthetic::<f32>(&spec).unwrap();
        let b = gen_synthetic::<f32>(&spec).unwrap();
        let bits = |d: &SyntheticData<f32>| -> Vec<u32> {
            d.vectors.iter().flatten().map(|x| x.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(gen_synthetic::<f32>(&SyntheticSpec { seed: 8, ..spec }).unwrap(), a);
    }

    #[test]
    fn synthetic_rejects_invalid() {
        let ok = SyntheticSpec { n: 1, dim: 1, clusters: 1, spread: 0.1, seed: 0 };
        assert!(gen_synthetic::<f32>(&SyntheticSpec { n: 0, ..ok }).is_err());
        assert!(gen_synthetic::<f32>(&SyntheticSpec { clusters: 0, ..ok }).is_err());
        assert!(gen_synthetic::<f32>(&SyntheticSpec { spread: 0.0, ..ok }).is_err());
    }

    #[test]
    fn synthetic_clusters_recoverable() {
        let spec = SyntheticSpec { n: 10_000, dim: 64, clusters: 32, spread: 0.05, seed: 1 };
        let d = gen_synthetic::<f32>(&spec).unwrap();
        let hits = d
            .vectors
            .iter()
            .zip(&d.labels)
            .filter(|(v, &label)| {
                let nearest = (0..spec.clusters)
                    .min_by(|&a, &b| l2_sq(v, &d.centres[a]).total_cmp(&l2_sq(v, &d.centres[b])))
                    .unwrap();
                nearest == label
            })
            .count();
        assert!(hits as f64 / spec.n as f64 >= 0.99, "{hits}");
    }

    #[test]
    fn normalize_unit_rows() {
        let mut v = vec![vec![3.0f32, 4.0], vec![0.0, 0.0]];
        l2_normalize(&mut v);
        assert_eq!(v[0], vec![0.6, 0.8]);
        assert_eq!(v[1], vec![0.0, 0.0]);
    }
}
