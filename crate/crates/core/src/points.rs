use crate::error::{Error, Result};

/// A set of points in `dims`-dimensional space, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dims: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dims: usize, data: Vec<f64>) -> Result<Self> {
        if dims == 0 || data.len() % dims != 0 {
            return Err(Error::DimensionMismatch {
                what: "point buffer length",
                expected: dims,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn from_1d(values: Vec<f64>) -> Self {
        Self { dims: 1, data: values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(1, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * dims);
        for r in rows {
            if r.len() != dims {
                return Err(Error::DimensionMismatch {
                    what: "point",
                    expected: dims,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Values along one coordinate.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.rows().map(|r| r[d]).collect()
    }

    /// Per-dimension `(min, max)`.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dims];
        for r in self.rows() {
            for (b, &v) in out.iter_mut().zip(r) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        out
    }

    /// Points at the given row indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { dims: self.dims, data }
    }
}
