//! Dense tensors backing the computation graph.
//!
//! Layouts: 4-D feature tensors are `[C, n0, n1, n2]` (channel-major, axis 2
//! fastest), vectors are `[C]`, scalars have an empty shape.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a zero-rank tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Channel count and spatial shape of a `[C, n0, n1, n2]` tensor.
    pub fn chw(&self) -> (usize, [usize; 3]) {
        debug_assert_eq!(self.shape.len(), 4, "expected a 4-D tensor");
        (self.shape[0], [self.shape[1], self.shape[2], self.shape[3]])
    }

    pub fn spatial_numel(&self) -> usize {
        let (_, s) = self.chw();
        s[0] * s[1] * s[2]
    }

    /// One channel plane of a 4-D tensor.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.spatial_numel();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other` (shapes must match).
    pub fn accumulate(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
