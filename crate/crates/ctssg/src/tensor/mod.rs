//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major buffer with a shape and a unique
//! id. Differentiable operations live on [`Tape`]; each op records a
//! backward closure, and [`Tape::backward`] replays them in reverse to fill
//! a [`GradStore`]. Accumulation order is fixed by tape order, so gradients
//! are bit-reproducible.

mod gradcheck;
mod ops;
mod serialize;
mod tape;

pub use gradcheck::grad_check;
pub use serialize::{load_named, save_named, ParamManifest, ParamRecord};
pub use tape::{GradStore, Tape};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Immutable n-dimensional array. Cloning shares the underlying buffer.
#[derive(Debug, Clone)]
pub struct Tensor<F: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
    requires_grad: bool,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    /// Builds a constant (non-differentiable) tensor.
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            id: fresh_id(),
            shape,
            data: Arc::new(data),
            requires_grad: false,
        })
    }

    /// Builds a trainable leaf; gradients will be accumulated for it.
    pub fn param(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor {
            id: fresh_id(),
            shape,
            data: Arc::new(vec![F::ZERO; n]),
            requires_grad: false,
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            id: fresh_id(),
            shape: vec![],
            data: Arc::new(vec![v]),
            requires_grad: false,
        }
    }

    /// Internal constructor for op outputs; shares or takes ownership of
    /// the provided buffer.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<F>>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            id: fresh_id(),
            shape,
            data,
            requires_grad,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> &Arc<Vec<F>> {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Extracts the single element of a rank-0 or single-element tensor.
    pub fn scalar_value(&self) -> Result<F> {
        if self.data.len() != 1 {
            return Err(Error::dimension(format!(
                "expected scalar, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Copies out the buffer as f64, for metrics and oracles.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Same values, fresh id, requirement flag preserved. Used by the
    /// optimizer so updated parameters stay leaves.
    pub fn with_data(&self, data: Vec<F>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::dimension(format!(
                "replacement buffer has {} elements, tensor holds {}",
                data.len(),
                self.data.len()
            )));
        }
        Ok(Tensor {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: Arc::new(data),
            requires_grad: self.requires_grad,
        })
    }

    /// Same buffer and shape under a fresh id, with gradients disabled.
    /// Ops consuming only detached tensors record nothing on the tape.
    pub fn detached(&self) -> Self {
        Tensor {
            id: fresh_id(),
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_len_agree() {
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
        assert!(!t.requires_grad());
    }

    #[test]
    fn mismatched_buffer_is_rejected() {
        let r = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn ids_are_unique() {
        let a = Tensor::<f64>::zeros(vec![1]);
        let b = Tensor::<f64>::zeros(vec![1]);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn clone_shares_buffer() {
        let a = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = a.clone();
        assert!(Arc::ptr_eq(a.data_arc(), b.data_arc()));
        assert_eq!(a.id(), b.id());
    }

    #[test]
    fn scalar_value_rejects_vectors() {
        let t = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(t.scalar_value().is_err());
        let s = Tensor::<f64>::scalar(4.5);
        assert_eq!(s.scalar_value().unwrap(), 4.5);
        assert_eq!(s.rank(), 0);
    }
}
