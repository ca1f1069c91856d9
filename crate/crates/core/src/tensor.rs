//! Dense row-major tensor over a generic scalar.
//!
//! Deliberately small: shape + flat data, with just the accessors the kernels
//! need. Kernels index the flat buffer directly for speed.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Rank-1 tensor holding a single value.
    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} incompatible with {} elements",
            shape,
            self.data.len()
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(a: &Self, b: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!(a.shape, b.shape, "zip shape mismatch");
        Tensor {
            shape: a.shape.clone(),
            data: a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    /// self += other * c
    pub fn add_scaled_assign(&mut self, other: &Self, c: S) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (x, &y) in self.data.iter_mut().zip(other.data.iter()) {
            *x = *x + y * c;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.add_scaled_assign(other, S::one());
    }

    pub fn scale_assign(&mut self, c: S) {
        for x in self.data.iter_mut() {
            *x = *x * c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(a: &Self, b: &Self) -> f64 {
        assert_eq!(a.shape, b.shape, "max_abs_diff shape mismatch");
        a.data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| (x - y).abs().to_f())
            .fold(0.0, f64::max)
    }

    /// Lossy elementwise conversion to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::from_f(x.to_f())).collect(),
        }
    }
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_and_indexing_layout() {
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.shape(), &[2, 3]);
        // row-major: element (1, 2) is at 1*3 + 2
        assert_eq!(t.data()[5], 5.0);
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
    }

    #[test]
    #[should_panic(expected = "shape")]
    fn from_vec_rejects_mismatch() {
        let _ = Tensor::<f64>::from_vec(&[2, 2], vec![1.0]);
    }

    #[test]
    fn add_scaled() {
        let mut a = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]);
        let b = Tensor::<f64>::from_vec(&[2], vec![10.0, 20.0]);
        a.add_scaled_assign(&b, 0.5);
        assert_eq!(a.data(), &[6.0, 12.0]);
    }
}
