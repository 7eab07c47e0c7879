use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `(batch, channels, length)` tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    batch: usize,
    channels: usize,
    length: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(batch: usize, channels: usize, length: usize, data: Vec<T>) -> Result<Self> {
        if batch * channels * length != data.len() {
            return Err(Error::dim(format!(
                "tensor ({batch}, {channels}, {length}) needs {} values, got {}",
                batch * channels * length,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Self {
            batch,
            channels,
            length,
            data,
        })
    }

    pub fn zeros(batch: usize, channels: usize, length: usize) -> Self {
        Self {
            batch,
            channels,
            length,
            data: vec![T::zero(); batch * channels * length],
        }
    }

    /// Builds a `(batch, features, 1)` tensor from feature rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let f = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * f);
        for r in rows {
            if r.len() != f {
                return Err(Error::dim("ragged feature rows"));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), f, 1, data)
    }

    pub(crate) fn from_parts(batch: usize, channels: usize, length: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(batch * channels * length, data.len());
        Self {
            batch,
            channels,
            length,
            data,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.length)
    }

    /// Values per sample, `channels * length`.
    pub fn sample_len(&self) -> usize {
        self.channels * self.length
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, l: usize) -> T {
        self.data[(b * self.channels + c) * self.length + l]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, l: usize) -> &mut T {
        &mut self.data[(b * self.channels + c) * self.length + l]
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Gathers the listed samples into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self::from_parts(indices.len(), self.channels, self.length, data)
    }

    /// Feature rows of a `(batch, features, 1)` or flattened tensor.
    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.batch).map(|b| self.sample(b).to_vec()).collect()
    }

    pub fn reshape(self, channels: usize, length: usize) -> Result<Self> {
        if channels * length != self.sample_len() {
            return Err(Error::dim(format!(
                "cannot reshape ({}, {}) samples to ({channels}, {length})",
                self.channels, self.length
            )));
        }
        Ok(Self::from_parts(self.batch, channels, length, self.data))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
