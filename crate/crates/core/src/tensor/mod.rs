//! Dense row-major tensors and the layer zoo used by the ordering models.
//!
//! Everything is generic over [`Scalar`] so the same forward/backward code
//! runs in f32 for training and in f64 for finite-difference checks.

pub mod gradcheck;
pub mod ops;
pub mod optim;

use std::fmt;

use crate::error::{Error, Result};

/// Element type for tensors. Matrix products dispatch to matrixmultiply,
/// which keeps the two float widths on the same fast path.
pub trait Scalar: num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static {
    /// out = alpha * a(m x k) * b(k x n) + beta * out, with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

impl Scalar for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            );
        }
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.debug_check_finite("from_vec");
        Ok(t)
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    /// Dimension `i` of the shape; panics if out of range.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map_to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn map_from_f64(src: &Tensor<f64>) -> Tensor<T> {
        Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|v| T::from_f64(*v)).collect(),
        }
    }

    /// In debug builds every op output passes through here; a single NaN or
    /// infinity aborts loudly with the op name instead of poisoning training.
    pub fn debug_check_finite(&self, what: &str) {
        if cfg!(debug_assertions) {
            for (i, v) in self.data.iter().enumerate() {
                assert!(
                    v.is_finite(),
                    "non-finite value {v:?} at index {i} in {what} (shape {:?})",
                    self.shape
                );
            }
        }
    }

    /// Overflow in a layer output means the optimization ran away (inputs are
    /// validated upstream), so it surfaces as a divergence error in every
    /// build rather than a debug panic.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite value {v:?} at index {i} in {what} (shape {:?})",
                    self.shape
                )));
            }
        }
        Ok(())
    }
}

/// Weight/bias bundle shared by conv and dense layers. The same struct is
/// reused for gradients and momentum state so shapes always line up.
#[derive(Debug, Clone)]
pub struct ParamPair<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> ParamPair<T> {
    pub fn zeros_like(other: &ParamPair<T>) -> Self {
        ParamPair {
            w: Tensor::zeros(other.w.shape()),
            b: Tensor::zeros(other.b.shape()),
        }
    }
}
