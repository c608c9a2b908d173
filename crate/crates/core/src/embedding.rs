//! Vector primitives and the `EMB1` embedding file format.
//!
//! Values are stored as `f32`; every reduction (norms, dot products) is
//! accumulated in `f64`.
//!
//! File layout, all little-endian:
//!
//! | bytes      | content                        |
//! |------------|--------------------------------|
//! | 0..4       | ASCII `EMB1`                   |
//! | 4..8       | `u32` dimension                |
//! | 8..16      | `u64` row count                |
//! | 16..       | `rows * dim` `f32`, row-major  |

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 16;

/// Norms at or below this are treated as zero vectors.
pub const NORM_FLOOR: f64 = 1e-12;

/// A single finite vector of dimension at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimZero);
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    /// Rounds an `f64` vector to `f32` storage.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub(crate) fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-normalized `f64` copy of a row, or `None` for a zero row.
pub(crate) fn unit_f64(row: &[f32]) -> Option<Vec<f64>> {
    let n = norm(row);
    if n <= NORM_FLOOR {
        return None;
    }
    Some(row.iter().map(|&x| x as f64 / n).collect())
}

pub fn l2_normalize(v: &Embedding) -> Result<Embedding> {
    let n = v.norm();
    if n <= NORM_FLOOR {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(Embedding {
        values: v.values.iter().map(|&x| (x as f64 / n) as f32).collect(),
    })
}

/// Cosine similarity: dot of the normalized vectors, clamped to `[-1, 1]`.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    cosine_slices(u.as_slice(), v.as_slice())
}

pub(crate) fn cosine_slices(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    for n in [nu, nv] {
        if n <= NORM_FLOOR {
            return Err(Error::ZeroVector { norm: n });
        }
    }
    let dot: f64 = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| (a as f64 / nu) * (b as f64 / nv))
        .sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Row-major matrix of embeddings sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimZero);
        }
        Ok(Self {
            dim,
            data: Vec::new(),
        })
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimZero);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch {
                left: data.len() % dim,
                right: dim,
            });
        }
        check_finite(&data)?;
        Ok(Self { dim, data })
    }

    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<[f32]>,
    {
        let mut m = Self::new(dim)?;
        for row in rows {
            m.push(row.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                left: row.len(),
                right: self.dim,
            });
        }
        check_finite(row)?;
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embedding(&self, i: usize) -> Embedding {
        Embedding {
            values: self.row(i).to_vec(),
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f32) -> Result<Self> {
        Self::from_flat(self.dim, self.data.iter().map(|&v| v * c).collect())
    }

    /// Unit-normalized `f64` rows. Fails on the first zero row.
    pub(crate) fn unit_rows_f64(&self) -> Result<Vec<Vec<f64>>> {
        self.iter()
            .map(|r| unit_f64(r).ok_or(Error::ZeroVector { norm: norm(r) }))
            .collect()
    }
}

/// Writes `m` in `EMB1` layout and returns the number of bytes written.
pub fn write_embeddings<W: Write>(m: &EmbeddingMatrix, mut sink: W) -> Result<u64> {
    let dim = u32::try_from(m.dim).map_err(|_| Error::DimMismatch {
        left: m.dim,
        right: u32::MAX as usize,
    })?;
    let mut buf = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len() as u64)
}

pub fn read_embeddings<R: Read>(mut source: R) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_embeddings(&bytes)
}

pub fn parse_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if dim == 0 {
        return Err(Error::DimZero);
    }
    let payload = (rows as u128) * (dim as u128) * 4;
    let found = (bytes.len() - HEADER_LEN) as u128;
    if found < payload {
        return Err(Error::TruncatedFile {
            expected: (HEADER_LEN as u128 + payload).min(u64::MAX as u128) as u64,
            found: bytes.len() as u64,
        });
    }
    if found > payload {
        return Err(Error::TrailingData {
            extra: (found - payload) as u64,
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::from_flat(dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&emb(&[3.0, 4.0])).unwrap().as_slice(), &[0.6, 0.8]);
        assert_eq!(l2_normalize(&emb(&[1.0, 0.0, 0.0])).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(matches!(
            l2_normalize(&emb(&[0.0, 0.0])),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&emb(&[1.0, 1.0]), &emb(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        let c = cosine(&emb(&[3.0, 4.0]), &emb(&[4.0, 3.0])).unwrap();
        assert!((c - 0.96).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])),
            Err(Error::DimMismatch { left: 2, right: 3 })
        ));
        assert!(matches!(
            cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 0.0])),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn embedding_rejects_nan() {
        assert!(matches!(
            Embedding::new(vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(Embedding::new(vec![]), Err(Error::DimZero)));
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let m = EmbeddingMatrix::new(4).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_embeddings(&m, &mut buf).unwrap(), 16);
        assert_eq!(buf.len(), 16);
        let back = read_embeddings(&buf[..]).unwrap();
        assert_eq!(back.rows(), 0);
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn single_row_layout() {
        let m = EmbeddingMatrix::from_rows(2, [[0.5f32, -1.0]]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_embeddings(&m, &mut buf).unwrap(), 24);
        assert_eq!(&buf[..4], b"EMB1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..20], &0.5f32.to_le_bytes());
        assert_eq!(&buf[20..24], &(-1.0f32).to_le_bytes());
        assert_eq!(read_embeddings(&buf[..]).unwrap(), m);
    }

    #[test]
    fn read_errors() {
        let mut buf = Vec::new();
        write_embeddings(&EmbeddingMatrix::from_rows(2, [[1.0f32, 2.0]]).unwrap(), &mut buf)
            .unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(parse_embeddings(&bad), Err(Error::BadMagic { .. })));

        assert!(matches!(
            parse_embeddings(&buf[..buf.len() - 1]),
            Err(Error::TruncatedFile { expected: 24, found: 23 })
        ));
        assert!(matches!(
            parse_embeddings(&buf[..10]),
            Err(Error::TruncatedFile { .. })
        ));

        let mut zero = buf.clone();
        zero[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(parse_embeddings(&zero), Err(Error::DimZero)));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(parse_embeddings(&long), Err(Error::TrailingData { extra: 1 })));
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f32>> {
        (1usize..16)
            .prop_flat_map(|d| proptest::collection::vec(-100.0f32..100.0, d))
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn normalize_is_scale_invariant(v in nonzero_vec(), c in 0.01f32..100.0) {
            let a = l2_normalize(&emb(&v)).unwrap();
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            let b = l2_normalize(&emb(&scaled)).unwrap();
            prop_assert!((a.norm() - 1.0).abs() <= 1e-6);
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-7, "{x} vs {y}");
            }
        }

        #[test]
        fn cosine_ignores_normalization(pair in (1usize..16).prop_flat_map(|d| (
            proptest::collection::vec(-10.0f32..10.0, d),
            proptest::collection::vec(-10.0f32..10.0, d),
        )).prop_filter("nonzero", |(u, v)| norm(u) > 1e-3 && norm(v) > 1e-3)) {
            let (u, v) = (emb(&pair.0), emb(&pair.1));
            let raw = cosine(&u, &v).unwrap();
            let unit = cosine(&l2_normalize(&u).unwrap(), &l2_normalize(&v).unwrap()).unwrap();
            prop_assert!((raw - unit).abs() <= 1e-6);
            prop_assert!((raw - cosine(&v, &u).unwrap()).abs() <= 1e-15);
            prop_assert!((-1.0..=1.0).contains(&raw));
        }

        #[test]
        fn write_read_write_is_byte_identical(
            (dim, data) in (1usize..8).prop_flat_map(|d| (
                Just(d),
                proptest::collection::vec(-1e6f32..1e6, 0..=d * 10).prop_map(move |mut v| {
                    v.truncate(v.len() / d * d);
                    v
                }),
            ))
        ) {
            let m = EmbeddingMatrix::from_flat(dim, data).unwrap();
            let mut first = Vec::new();
            write_embeddings(&m, &mut first).unwrap();
            let back = read_embeddings(&first[..]).unwrap();
            let mut second = Vec::new();
            write_embeddings(&back, &mut second).unwrap();
            prop_assert_eq!(first, second);
            prop_assert_eq!(back, m);
        }
    }
}
