//! Dimension-checked embedding types and the numeric primitives built on them.
//!
//! Values are stored as `f32`. Every reduction (norms, dots, means) accumulates
//! in `f64` and narrows once at the end. Non-finite values are rejected when a
//! vector or matrix is constructed, so the operations below never see NaN or
//! infinity in their inputs.

use crate::error::{Error, Result};

/// A single embedding with a fixed, non-zero dimension and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    /// Builds from `f64` values, failing if any of them overflows `f32`.
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

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| (v as f64 * factor) as f32).collect())
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// Row-major matrix of embeddings sharing one dimension. Zero rows is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
        }
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::InvalidArgument("rows * dim overflows".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "matrix data has {} values, expected {rows} x {dim} = {expected}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { rows, dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    /// Stacks vectors into a matrix. All must share `dim`.
    pub fn from_vectors(dim: usize, vectors: &[EmbeddingVector]) -> Result<Self> {
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for (i, v) in vectors.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: v.dim(),
                }
                .in_row(i));
            }
            data.extend_from_slice(v.as_slice());
        }
        Ok(Self {
            rows: vectors.len(),
            dim,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.len(),
                }
                .in_row(i));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_vector(&self, i: usize) -> EmbeddingVector {
        EmbeddingVector {
            values: self.row(i).to_vec(),
        }
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// Copies the listed rows, in the listed order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            dim: self.dim,
            data,
        }
    }

    /// Normalizes every row to unit length. Zero rows are reported by index.
    pub fn normalized_rows(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, row) in self.iter_rows().enumerate() {
            let n = norm(row);
            if n == 0.0 {
                return Err(Error::ZeroVector { row: Some(i) });
            }
            data.extend(row.iter().map(|&v| (v as f64 / n) as f32));
        }
        Ok(Self {
            rows: self.rows,
            dim: self.dim,
            data,
        })
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Dot product accumulated in `f64`, summed left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |acc, (&x, &y)| acc + x as f64 * y as f64)
}

pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch { expected: a, actual: b });
    }
    Ok(())
}

pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector { row: None });
    }
    Ok(EmbeddingVector {
        values: v.values.iter().map(|&x| (x as f64 / n) as f32).collect(),
    })
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector { row: None });
    }
    Ok(clamp_unit(dot(a, b) / (na * nb)))
}

/// Clamps to `[-1, 1]` and folds `-0.0` into `0.0` so scores order cleanly.
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0) + 0.0
}

/// Component-wise arithmetic mean of all rows.
pub fn mean_pool(m: &EmbeddingMatrix) -> Result<EmbeddingVector> {
    mean_of_rows(m, 0..m.rows())
}

/// Mean of a subset of rows, in the order given.
pub(crate) fn mean_of_rows<I>(m: &EmbeddingMatrix, rows: I) -> Result<EmbeddingVector>
where
    I: IntoIterator<Item = usize>,
{
    let mut acc = vec![0.0f64; m.dim()];
    let mut count = 0usize;
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(m.row(r)) {
            *a += v as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = count as f64;
    Ok(EmbeddingVector {
        values: acc.into_iter().map(|s| (s / k) as f32).collect(),
    })
}

/// `w1 * a + w2 * b`, without normalization.
pub fn weighted_fuse(a: &EmbeddingVector, b: &EmbeddingVector, w1: f64, w2: f64) -> Result<EmbeddingVector> {
    check_dims(a.dim(), b.dim())?;
    if !w1.is_finite() || !w2.is_finite() {
        return Err(Error::InvalidArgument("fusion weights must be finite".into()));
    }
    EmbeddingVector::new(
        a.values
            .iter()
            .zip(&b.values)
            .map(|(&x, &y)| (w1 * x as f64 + w2 * y as f64) as f32)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let n = l2_normalize(&v(&[3.0, 4.0])).unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((n.as_slice()[1] - 0.8).abs() < 1e-7);
        assert!((n.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_unit_is_identity() {
        assert_eq!(l2_normalize(&v(&[1.0, 0.0, 0.0])).unwrap(), v(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn normalize_zero_fails() {
        assert!(matches!(
            l2_normalize(&v(&[0.0, 0.0])),
            Err(Error::ZeroVector { row: None })
        ));
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(matches!(
            EmbeddingVector::new(vec![1.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(EmbeddingVector::new(vec![f32::INFINITY]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![0.0, f32::NEG_INFINITY]).is_err());
        assert!(EmbeddingMatrix::new(1, 0, vec![]).is_err());
        assert!(EmbeddingMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(EmbeddingVector::from_f64(&[1e300]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 5.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(Error::DimMismatch { expected: 1, actual: 2 })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn cosine_is_clamped() {
        let x = v(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        let s = cosine_similarity(&x, &x).unwrap();
        assert!(s <= 1.0);
        let neg = x.scaled(-1.0).unwrap();
        assert!(cosine_similarity(&x, &neg).unwrap() >= -1.0);
    }

    #[test]
    fn mean_pool_examples() {
        let m = EmbeddingMatrix::from_rows(2, &[[0.0f32, 2.0], [2.0, 0.0]]).unwrap();
        assert_eq!(mean_pool(&m).unwrap(), v(&[1.0, 1.0]));

        let row = [0.1f32, -0.7, 3.3];
        let m = EmbeddingMatrix::from_rows(3, &vec![row; 37]).unwrap();
        let mean = mean_pool(&m).unwrap();
        for (a, b) in mean.as_slice().iter().zip(row) {
            assert!((a - b).abs() < 1e-6);
        }

        assert!(matches!(
            mean_pool(&EmbeddingMatrix::empty(4).unwrap()),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn mean_pool_single_row_exact() {
        let m = EmbeddingMatrix::from_rows(3, &[[1.0e-3f32, 7.25, -2.5]]).unwrap();
        assert_eq!(mean_pool(&m).unwrap().as_slice(), m.row(0));
    }

    #[test]
    fn fuse_examples() {
        let a = v(&[1.0, -2.0]);
        let b = v(&[4.0, 9.0]);
        assert_eq!(weighted_fuse(&a, &b, 1.0, 0.0).unwrap(), a);

        let f = weighted_fuse(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 0.6, 0.4).unwrap();
        assert!((f.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((f.as_slice()[1] - 0.4).abs() < 1e-7);

        assert_eq!(weighted_fuse(&a, &a, 0.5, 0.5).unwrap(), a);
        assert!(matches!(
            weighted_fuse(&a, &v(&[1.0]), 0.5, 0.5),
            Err(Error::DimMismatch { .. })
        ));
        assert!(weighted_fuse(&a, &b, f64::NAN, 0.5).is_err());
    }
}
