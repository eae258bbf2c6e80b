use crate::error::{Error, Result};

/// `n` points of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SampleBatch {
    pub fn new(n: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * dim {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{dim} batch",
                values.len()
            )));
        }
        Ok(Self { n, dim, values })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            values: vec![0.0; n * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            n: rows.len(),
            dim,
            values: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Copy of rows `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            n: range.len(),
            dim: self.dim,
            values: self.values[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: idx.len(),
            dim: self.dim,
            values,
        }
    }

    /// Stacks batches of equal dimension.
    pub fn concat(parts: &[SampleBatch], dim: usize) -> Result<Self> {
        if parts.iter().any(|p| p.dim != dim) {
            return Err(Error::Shape("concatenating batches of different dims".into()));
        }
        Ok(Self {
            n: parts.iter().map(|p| p.n).sum(),
            dim,
            values: parts.iter().flat_map(|p| p.values.iter().copied()).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(p) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at row {}, column {}",
                self.values[p],
                p / self.dim.max(1),
                p % self.dim.max(1)
            ))),
        }
    }

    pub(crate) fn same_shape(&self, other: &SampleBatch, what: &str) -> Result<()> {
        if self.n != other.n || self.dim != other.dim {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.n, self.dim, other.n, other.dim
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.n.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Population (1/n) covariance, row-major `dim x dim`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                let di = r[i] - m[i];
                for j in 0..d {
                    c[i * d + j] += di * (r[j] - m[j]);
                }
            }
        }
        let n = self.n.max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }
}
