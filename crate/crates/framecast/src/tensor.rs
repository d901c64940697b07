//! Dense row-major tensors and the raw kernels shared by the autodiff tape.
//!
//! A [`Tensor`] is an immutable shape + data pair; the data is behind an
//! `Arc` so clones are cheap and values can be shared across threads and
//! captured by backward closures without copying.

use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Scalar;

/// Errors from tensor construction and arithmetic.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?} (expected {expected})")]
    LengthMismatch {
        len: usize,
        shape: Vec<usize>,
        expected: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {got:?}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("index {index} out of bounds for {op} (limit {limit})")]
    OutOfBounds {
        op: &'static str,
        index: usize,
        limit: usize,
    },
}

pub type TensorResult<V> = Result<V, TensorError>;

/// Dense multi-dimensional array of scalars in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                shape,
                expected,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![T::zero(); len]),
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; len]),
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// 0-d-like scalar stored as shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// True when both tensors share the same underlying buffer.
    pub fn shares_data(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.data, &other.data)
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> TensorResult<T> {
        if self.len() != 1 {
            return Err(TensorError::BadRank {
                op: "item",
                expected: "a single-element tensor",
                got: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    /// Reinterprets the data with a new shape of equal length.
    pub fn reshape(&self, shape: Vec<usize>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.len() {
            return Err(TensorError::LengthMismatch {
                len: self.len(),
                shape,
                expected,
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> TensorResult<Self> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    pub fn add(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> TensorResult<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Rows/cols of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> TensorResult<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(TensorError::BadRank {
                op,
                expected: "a rank-2 tensor",
                got: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Matrix product `self @ other` for rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> TensorResult<Self> {
        let (m, k) = self.dims2("matmul lhs")?;
        let (k2, n) = other.dims2("matmul rhs")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); m * n];
        // i-k-j loop order keeps the innermost accesses contiguous.
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == T::zero() {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += av * bv;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `selfᵀ @ other` without materializing the transpose.
    pub fn matmul_t_lhs(&self, other: &Self) -> TensorResult<Self> {
        let (k, m) = self.dims2("matmul_t_lhs lhs")?;
        let (k2, n) = other.dims2("matmul_t_lhs rhs")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t_lhs",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let a_row = &a[p * m..(p + 1) * m];
            let b_row = &b[p * n..(p + 1) * n];
            for (i, &av) in a_row.iter().enumerate() {
                if av == T::zero() {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += av * bv;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `self @ otherᵀ` without materializing the transpose.
    pub fn matmul_t_rhs(&self, other: &Self) -> TensorResult<Self> {
        let (m, k) = self.dims2("matmul_t_rhs lhs")?;
        let (n, k2) = other.dims2("matmul_t_rhs rhs")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t_rhs",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                    acc += av * bv;
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Converts entries to `f64`, the storage precision of all file formats.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Builds a tensor from `f64` storage.
    pub fn from_f64_slice(shape: Vec<usize>, data: &[f64]) -> TensorResult<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }
}

/// Mutable builder for tensors assembled element by element.
///
/// Kept separate from [`Tensor`] so that finished tensors stay immutable.
#[derive(Clone, Debug)]
pub struct TensorBuilder<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TensorBuilder<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn set(&mut self, flat_index: usize, value: T) {
        self.data[flat_index] = value;
    }

    pub fn finish(self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data),
        }
    }
}
