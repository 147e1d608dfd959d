//! Dense tensors and a tape-based reverse-mode differentiation engine.

mod graph;
pub(crate) mod linalg;
mod ops;

pub use graph::{Function, Graph, Var};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major array with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} holds {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel], requires_grad: false, grad: None }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds from `f64` values, converting to the working precision.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64c(v)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::dim(
                "accumulate_grad",
                format!("gradient of {} elements for tensor {:?}", g.len(), self.shape),
            ));
        }
        let slot = self.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
        slot.iter_mut().zip(g).for_each(|(s, &v)| *s += v);
        Ok(())
    }

    pub fn scale_grad(&mut self, s: T) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value-only copy (drops gradient state).
    pub fn detached(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), requires_grad: false, grad: None }
    }
}

pub(crate) use ops::{sigmoid_scalar as sigmoid, softmax_in_place as softmax_row};
