//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to a shaped buffer of values
//! plus an optional gradient buffer (present exactly when the tensor
//! participates in differentiation). Operations live on a [`Tape`]: each op
//! computes its value eagerly, validates shapes and finiteness, and records
//! a backward closure when any input requires a gradient. Calling
//! [`Tape::backward`] on a scalar replays the closures in reverse order and
//! accumulates gradients into every participating tensor.
//!
//! Values are immutable once created except for gradient accumulation and
//! explicit parameter updates between steps; a tape must stay on the thread
//! that built it.

mod tape;

pub mod check;


pub use tape::{ConvChoice, Tape};

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

struct Data {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Shared handle to a tensor. Cloning aliases the same storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Data>>,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|d| *d == 0) {
        return Err(Error::shape(
            "tensor",
            format!("dimensions must be positive, got {shape:?}"),
        ));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} does not hold {len} values"),
        ));
    }
    Ok(())
}

pub(crate) fn ensure_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, values: Vec<f64>, with_grad: bool) -> Result<Tensor> {
        check_shape(&shape, values.len())?;
        ensure_finite("tensor", &values)?;
        let grad = with_grad.then(|| vec![0.0; values.len()]);
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Data {
                shape,
                values,
                grad,
            })),
        })
    }

    /// A constant: no gradient is tracked through it.
    pub fn constant(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        Self::build(shape, values, false)
    }

    /// A trainable leaf: gradients accumulate into it on `backward`.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        Self::build(shape, values, true)
    }

    /// A constant scalar with shape `[1]`.
    pub fn scalar(v: f64) -> Tensor {
        Self::build(vec![1], vec![v], false).expect("finite scalar")
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Self::build(shape, vec![0.0; numel], false).expect("zero tensor")
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().grad.is_some()
    }

    /// Snapshot of the values.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Runs `f` against the values without copying them.
    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().values)
    }

    /// The single value of a scalar tensor.
    ///
    /// # Panics
    /// Panics if the tensor holds more than one value.
    pub fn item(&self) -> f64 {
        let data = self.inner.borrow();
        assert_eq!(data.values.len(), 1, "item() on non-scalar tensor");
        data.values[0]
    }

    /// Snapshot of the accumulated gradient, if this tensor tracks one.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.inner.borrow_mut().grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer. Tensors without a gradient
    /// ignore the call, which lets backward closures treat constant and
    /// trainable inputs uniformly.
    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut data = self.inner.borrow_mut();
        if let Some(g) = data.grad.as_mut() {
            assert_eq!(g.len(), delta.len(), "gradient length mismatch");
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
    }

    /// Adds row-shaped gradient slices into selected rows of a rank-2
    /// tensor's gradient, without materializing a full-size buffer.
    pub(crate) fn accumulate_grad_rows(&self, width: usize, ids: &[usize], delta: &[f64]) {
        let mut data = self.inner.borrow_mut();
        if let Some(g) = data.grad.as_mut() {
            assert_eq!(delta.len(), ids.len() * width, "row gradient mismatch");
            for (k, &row) in ids.iter().enumerate() {
                for j in 0..width {
                    g[row * width + j] += delta[k * width + j];
                }
            }
        }
    }

    /// Replaces the values in place, keeping shape and gradient buffer.
    /// Used by the optimizer between steps and by finite-difference probes.
    pub fn set_values(&self, values: &[f64]) {
        let mut data = self.inner.borrow_mut();
        assert_eq!(data.values.len(), values.len(), "value length mismatch");
        data.values.copy_from_slice(values);
    }

    /// Overwrites the gradient buffer (used for global-norm clipping).
    pub fn set_grad(&self, grad: &[f64]) {
        let mut data = self.inner.borrow_mut();
        if let Some(g) = data.grad.as_mut() {
            assert_eq!(g.len(), grad.len(), "gradient length mismatch");
            g.copy_from_slice(grad);
        }
    }

    /// True when both handles alias the same storage.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let data = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &data.shape)
            .field("requires_grad", &data.grad.is_some())
            .field("values", &data.values)
            .finish()
    }
}
