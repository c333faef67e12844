//! Dense embedding matrices and the `XEMB` binary file format.
//!
//! Layout: `b"XEMB"`, version byte `0x01`, `u32` LE row count, `u32` LE
//! dimension, then `rows * dim` little-endian `f32` values in row-major order.
//! Values are widened to `f64` in memory.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{EmbeddingError, Error, Result};

pub const XEMB_MAGIC: &[u8; 4] = b"XEMB";
pub const XEMB_VERSION: u8 = 0x01;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// One row per example (full rendered example text).
    ExampleText,
    /// One row per (example, choice) pair in canonical pair order.
    PairText,
}

impl EmbeddingKind {
    pub fn expected_rows(self, dataset: &Dataset) -> usize {
        match self {
            EmbeddingKind::ExampleText => dataset.len(),
            EmbeddingKind::PairText => dataset.n_pairs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub kind: EmbeddingKind,
    pub task_name: String,
    pub role: Role,
    pub data: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Wraps an in-memory matrix, applying the same checks as [`load_embeddings`].
    pub fn from_array(data: Array2<f64>, expected: &Dataset, kind: EmbeddingKind) -> Result<Self> {
        check_alignment(&data, expected, kind)?;
        Ok(EmbeddingMatrix {
            kind,
            task_name: expected.task_name.clone(),
            role: expected.role,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Rows of `subset`'s examples, taken from a matrix aligned with `pool`.
    /// Every example of `subset` must exist in `pool` (matched by id).
    pub fn subset(&self, pool: &Dataset, subset: &Dataset) -> Result<EmbeddingMatrix> {
        check_alignment(&self.data, pool, self.kind)?;
        let offsets = pool.pair_offsets();
        let index: std::collections::HashMap<&str, usize> = pool
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(self.kind.expected_rows(subset));
        for ex in &subset.examples {
            let &pi = index.get(ex.id.as_str()).ok_or_else(|| {
                Error::Validation(format!("example {:?} is not part of the pool", ex.id))
            })?;
            match self.kind {
                EmbeddingKind::ExampleText => rows.push(pi),
                EmbeddingKind::PairText => {
                    let n = pool.examples[pi].n_choices();
                    if n != ex.n_choices() {
                        return Err(Error::Validation(format!(
                            "example {:?} has {} choices but the pool copy has {n}",
                            ex.id,
                            ex.n_choices()
                        )));
                    }
                    rows.extend(offsets[pi]..offsets[pi] + n);
                }
            }
        }
        let data = self.data.select(Axis(0), &rows);
        EmbeddingMatrix::from_array(data, subset, self.kind)
    }
}

fn check_alignment(data: &Array2<f64>, expected: &Dataset, kind: EmbeddingKind) -> Result<()> {
    let want = kind.expected_rows(expected);
    if data.nrows() != want {
        return Err(EmbeddingError::RowCount {
            expected: want,
            found: data.nrows(),
        }
        .into());
    }
    validate_rows(data)?;
    Ok(())
}

fn validate_rows(data: &Array2<f64>) -> Result<(), EmbeddingError> {
    if data.ncols() == 0 && data.nrows() > 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    for (r, row) in data.outer_iter().enumerate() {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { row: r, col: c });
        }
        if row.iter().all(|&v| v == 0.0) {
            return Err(EmbeddingError::ZeroRow(r));
        }
    }
    Ok(())
}

/// Decodes an `XEMB` payload; checks framing and finiteness but not alignment.
pub fn decode_xemb(bytes: &[u8]) -> Result<Array2<f64>, EmbeddingError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != XEMB_MAGIC {
            return Err(EmbeddingError::BadMagic {
                found: bytes[..4].to_vec(),
            });
        }
        return Err(EmbeddingError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != XEMB_MAGIC {
        return Err(EmbeddingError::BadMagic {
            found: bytes[..4].to_vec(),
        });
    }
    if bytes[4] != XEMB_VERSION {
        return Err(EmbeddingError::UnsupportedVersion(bytes[4]));
    }
    let n_rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + n_rows * dim * 4;
    let payload = &bytes[HEADER_LEN..];
    if bytes.len() < expected {
        return Err(EmbeddingError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EmbeddingError::TrailingBytes(bytes.len() - expected));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite {
            row: pos / dim,
            col: pos % dim,
        });
    }
    Ok(Array2::from_shape_vec((n_rows, dim), values).expect("shape checked above"))
}

pub fn encode_xemb(data: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(XEMB_MAGIC);
    out.push(XEMB_VERSION);
    out.extend_from_slice(&(data.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u32).to_le_bytes());
    for v in data.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected: &Dataset,
    kind: EmbeddingKind,
) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = decode_xemb(&bytes)?;
    EmbeddingMatrix::from_array(data, expected, kind)
}

pub fn write_embeddings(path: impl AsRef<Path>, data: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_xemb(data)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use ndarray::array;

    fn dataset(choice_counts: &[usize]) -> Dataset {
        let examples = choice_counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                Example::new(
                    format!("e{i}"),
                    "q",
                    (0..n).map(|c| format!("c{c}")).collect(),
                    None,
                )
                .unwrap()
            })
            .collect();
        Dataset::new(Role::TargetSeed, "t", "", examples).unwrap()
    }

    fn raw(n: u32, d: u32, vals: &[f32]) -> Vec<u8> {
        let mut b = b"XEMB\x01".to_vec();
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        for v in vals {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn accepts_aligned_example_matrix() {
        let ds = dataset(&[2, 2]);
        let m = decode_xemb(&raw(2, 3, &[1., 2., 3., 4., 5., 6.])).unwrap();
        let em = EmbeddingMatrix::from_array(m, &ds, EmbeddingKind::ExampleText).unwrap();
        assert_eq!((em.n_rows(), em.dim()), (2, 3));
        assert_eq!(em.row(1).to_vec(), vec![4., 5., 6.]);
    }

    #[test]
    fn pair_row_count_mismatch() {
        let ds = dataset(&[2, 2]);
        let m = decode_xemb(&raw(5, 1, &[1.; 5])).unwrap();
        let err = EmbeddingMatrix::from_array(m, &ds, EmbeddingKind::PairText).unwrap_err();
        assert!(matches!(
            err,
            Error::Embedding(EmbeddingError::RowCount { expected: 4, found: 5 })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            decode_xemb(&raw(1, 2, &[1.0, f32::NAN])).unwrap_err(),
            EmbeddingError::NonFinite { row: 0, col: 1 }
        );
        assert!(matches!(
            decode_xemb(&raw(1, 1, &[f32::INFINITY])),
            Err(EmbeddingError::NonFinite { .. })
        ));
    }

    #[test]
    fn framing_errors_are_distinct() {
        let mut bad = raw(1, 1, &[1.0]);
        bad[0] = b'Y';
        assert!(matches!(decode_xemb(&bad), Err(EmbeddingError::BadMagic { .. })));

        let mut v2 = raw(1, 1, &[1.0]);
        v2[4] = 2;
        assert_eq!(decode_xemb(&v2).unwrap_err(), EmbeddingError::UnsupportedVersion(2));

        let short = raw(2, 2, &[1.0, 2.0, 3.0]);
        assert_eq!(
            decode_xemb(&short).unwrap_err(),
            EmbeddingError::Truncated { expected: 29, found: 25 }
        );
        assert!(matches!(decode_xemb(b"XE"), Err(EmbeddingError::Truncated { .. })));

        let mut long = raw(1, 1, &[1.0]);
        long.push(0);
        assert_eq!(decode_xemb(&long).unwrap_err(), EmbeddingError::TrailingBytes(1));
    }

    #[test]
    fn zero_row_rejected_on_alignment() {
        let ds = dataset(&[1, 1]);
        let m = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            EmbeddingMatrix::from_array(m, &ds, EmbeddingKind::ExampleText),
            Err(Error::Embedding(EmbeddingError::ZeroRow(1)))
        ));
    }

    #[test]
    fn file_round_trip() {
        let ds = dataset(&[3]);
        let m = array![[0.5, -1.25], [2.0, 3.0], [1.0, 1.0]];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_embeddings(f.path(), &m).unwrap();
        let back = load_embeddings(f.path(), &ds, EmbeddingKind::PairText).unwrap();
        assert_eq!(back.data, m);
    }

    #[test]
    fn subset_gathers_pair_rows_in_subset_order() {
        let pool = dataset(&[2, 3, 1]);
        let data = Array2::from_shape_fn((6, 1), |(r, _)| r as f64 + 1.0);
        let em = EmbeddingMatrix::from_array(data, &pool, EmbeddingKind::PairText).unwrap();
        let sub = Dataset::new(
            Role::TargetUnlabeled,
            "t",
            "",
            vec![pool.examples[2].clone(), pool.examples[0].clone()],
        )
        .unwrap();
        let s = em.subset(&pool, &sub).unwrap();
        assert_eq!(s.data.column(0).to_vec(), vec![6.0, 1.0, 2.0]);
        assert_eq!(s.role, Role::TargetUnlabeled);
    }
}
