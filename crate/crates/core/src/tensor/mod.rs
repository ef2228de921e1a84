//! Dense NHWC tensors and the numeric kernels built on them.
//!
//! Images are stored as `N x H x W x C`, row-major. Kernels are stored as
//! `kh x kw x Cin x Cout`, which lets a convolution be expressed as a single
//! matrix product over an im2col buffer. Every kernel is generic over
//! [`Scalar`] so the same code runs in `f32` for training and `f64` for
//! finite-difference checks.

mod activation;
pub(crate) mod conv;
mod dense;
mod gemm;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{activation, activation_backward, softmax_rows, ActivationKind};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, depthwise_separable_conv, ConvGrads,
    ConvSpec, Padding, SeparableOrder,
};
pub use dense::{dense, dense_backward, DenseGrads};
pub(crate) use gemm::gemm;
pub use pool::{max_pool2d, max_pool2d_backward, max_pool2d_padded, PoolIndices};

/// Floating point element type of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

/// Element type usable in tensors: `f32` for normal work, `f64` for oracles.
pub trait Scalar: Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + Sum + 'static {
    const DTYPE: DType;

    /// `C = A * B + beta * C` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices of
    /// the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense n-dimensional array, row-major.
///
/// Invariant: every shape entry is at least 1 and the product of the shape
/// equals `data.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidSpec(format!("tensor shape {shape:?} must be non-empty with all dims >= 1")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::InvalidSpec(format!(
                "shape {shape:?} holds {len} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// # Panics
    /// If the shape is empty or contains a zero.
    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = check_shape(&shape).expect("valid shape");
        Self { shape, data: vec![value; len] }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len = check_shape(&shape).expect("valid shape");
        Self { shape, data: (0..len).map(&mut f).collect() }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Leading dimension, the batch size for batched tensors.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements of one entry along the leading axis.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, index: usize) -> &[T] {
        let n = self.item_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn dims4(&self, context: &str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, h, w, c] => Ok([n, h, w, c]),
            _ => Err(Error::Shape {
                context: format!("{context} expects a rank-4 NHWC tensor"),
                expected: vec![],
                actual: self.shape.clone(),
            }),
        }
    }

    pub fn dims2(&self, context: &str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [n, d] => Ok([n, d]),
            _ => Err(Error::Shape {
                context: format!("{context} expects a rank-2 tensor"),
                expected: vec![],
                actual: self.shape.clone(),
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with the first non-finite element, if any.
    pub fn check_finite(&self, location: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(Error::Numeric {
                location: location.to_string(),
                index,
                value: self.data[index].to_f64().unwrap_or(f64::NAN),
            }),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("tensor add", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over all elements.
    pub fn max_rel_diff(&self, other: &Self, floor: f64) -> f64 {
        assert_eq!(self.shape, other.shape, "max_rel_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let (a, b) = (a.to_f64().unwrap(), b.to_f64().unwrap());
                (a - b).abs() / a.abs().max(b.abs()).max(floor)
            })
            .fold(0.0, f64::max)
    }
}
