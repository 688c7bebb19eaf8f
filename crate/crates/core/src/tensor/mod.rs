//! Dense tensors with a reverse-mode tape.
//!
//! The engine is deliberately small: it supports exactly the layers used by
//! the generator and discriminator (affine maps, strided convolutions and
//! their transposes, batch normalization, the four activations, dropout) and
//! the handful of elementwise/reduction ops needed to express the losses.
//!
//! Values live in [`Tensor`]. A forward pass is recorded on a [`Tape`], which
//! hands out [`Var`] handles; [`Tape::backward`] walks the recording in
//! reverse and accumulates gradients into every leaf that asked for one.
//!
//! Everything is generic over the [`Element`] type. Models train in `f32`;
//! `f64` instantiations exist so gradients can be checked against finite
//! differences without float32 roundoff dominating the comparison.

mod checkpoint;
mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::grad_check;
pub use optim::{Adam, AdamConfig};
pub use params::{BnStats, Param, ParamSet};
pub use tape::{BatchNormOut, Mode, Tape, Var};
pub use kernels::gemm;

use thiserror::Error;

/// Errors raised by tensor construction, forward ops and the optimizer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate batch in {0}: batch statistics need at least two values per channel")]
    DegenerateBatch(&'static str),
}

/// Scalar types the engine can run on.
pub trait Element:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + 'static
{
    /// Converts from `f64`, rounding as needed.
    fn of(v: f64) -> Self;

    /// Matrix product with explicit strides; see [`kernels::gemm`].
    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
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
    );
}

impl Element for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1)
    }
}

impl Element for f64 {
    fn of(v: f64) -> Self {
        v
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1)
    }
}

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> EngineError {
    EngineError::Dimension { op, detail: detail.into() }
}

/// A row-major dense array, float32 unless stated otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, EngineError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(dim_err("tensor", format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "extents must be positive");
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Samples i.i.d. normal entries.
    pub fn randn(shape: &[usize], mean: f64, std: f64, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, Normal};
        let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::of(dist.sample(rng));
        }
        t
    }

    /// Samples i.i.d. entries uniformly from `[low, high)`.
    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut impl rand::Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = T::of(rng.random_range(low..high));
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element to another precision.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.to_f64().unwrap_or(f64::NAN))).collect() }
    }

    /// Returns a tensor sharing the data under a new shape.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, EngineError> {
        Self::new(shape, self.data)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }
}
