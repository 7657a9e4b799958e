//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor data", n, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.data.len() / self.shape[0];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "tensor add",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

/// `out += M·x` for a row-major `rows × cols` matrix.
#[inline]
pub(crate) fn gemv_acc<T: Scalar>(out: &mut [T], m: &[T], cols: usize, x: &[T]) {
    debug_assert_eq!(m.len(), out.len() * cols);
    debug_assert_eq!(x.len(), cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *o += acc;
    }
}

/// `out += Mᵀ·y` for a row-major `rows × cols` matrix.
#[inline]
pub(crate) fn gemv_t_acc<T: Scalar>(out: &mut [T], m: &[T], cols: usize, y: &[T]) {
    debug_assert_eq!(m.len(), y.len() * cols);
    debug_assert_eq!(out.len(), cols);
    for (yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if *yi == T::zero() {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += *a * *yi;
        }
    }
}

/// `G += y·xᵀ` (rank-one update of a row-major `len(y) × len(x)` matrix).
#[inline]
pub(crate) fn outer_acc<T: Scalar>(g: &mut [T], y: &[T], x: &[T]) {
    debug_assert_eq!(g.len(), y.len() * x.len());
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(x.len())) {
        if *yi == T::zero() {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += *yi * *a;
        }
    }
}
