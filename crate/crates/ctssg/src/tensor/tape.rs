//! Operation tape and gradient storage.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradient buffers keyed by tensor id, filled by [`Tape::backward`].
pub struct GradStore<F: Scalar> {
    bufs: HashMap<u64, Vec<F>>,
}

impl<F: Scalar> GradStore<F> {
    pub(crate) fn new() -> Self {
        GradStore {
            bufs: HashMap::new(),
        }
    }

    pub(crate) fn seed(&mut self, id: u64, buf: Vec<F>) {
        self.bufs.insert(id, buf);
    }

    /// Accumulation buffer for a tensor id, created zeroed on first use.
    pub(crate) fn accum(&mut self, id: u64, len: usize) -> &mut [F] {
        self.bufs.entry(id).or_insert_with(|| vec![F::ZERO; len])
    }

    pub(crate) fn get(&self, id: u64) -> Option<&[F]> {
        self.bufs.get(&id).map(|v| v.as_slice())
    }

    /// Gradient of `loss` with respect to `t`, shaped like `t`.
    /// `None` when no gradient flowed to it.
    pub fn grad(&self, t: &Tensor<F>) -> Option<Tensor<F>> {
        self.bufs.get(&t.id()).map(|buf| {
            Tensor::new(t.shape().to_vec(), buf.clone()).expect("gradient buffer matches tensor")
        })
    }

    /// Raw gradient buffer for a tensor, if any.
    pub fn grad_slice(&self, t: &Tensor<F>) -> Option<&[F]> {
        self.get(t.id())
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }
}

pub(crate) struct TapeOp<F: Scalar> {
    /// Id of the op's output tensor.
    pub output: u64,
    /// Propagates the output gradient into the inputs' buffers.
    pub backward: Box<dyn Fn(&[F], &mut GradStore<F>)>,
}

/// Records differentiable ops in execution order.
///
/// Holds `RefCell` state, so a tape is confined to the thread that created
/// it; batch parallelism uses one tape per sample.
pub struct Tape<F: Scalar> {
    ops: RefCell<Vec<TapeOp<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
        }
    }

    pub(crate) fn record(&self, output: u64, backward: Box<dyn Fn(&[F], &mut GradStore<F>)>) {
        self.ops.borrow_mut().push(TapeOp { output, backward });
    }

    pub fn op_count(&self) -> usize {
        self.ops.borrow().len()
    }

    /// Drops all recorded ops and the tensors captured by their closures.
    pub fn clear(&self) {
        self.ops.borrow_mut().clear();
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every tensor
    /// that participated and requires (or feeds something that requires)
    /// gradients.
    pub fn backward(&self, loss: &Tensor<F>) -> Result<GradStore<F>> {
        if loss.len() != 1 {
            return Err(Error::dimension(format!(
                "backward starts from a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.all_finite() {
            return Err(Error::numeric("loss is not finite".to_string()));
        }
        let mut store = GradStore::new();
        store.seed(loss.id(), vec![F::ONE]);
        let ops = self.ops.borrow();
        for op in ops.iter().rev() {
            // Clone the output gradient so the closure can borrow the store
            // mutably; buffers are small relative to forward activations.
            let g = match store.get(op.output) {
                Some(g) => g.to_vec(),
                None => continue,
            };
            (op.backward)(&g, &mut store);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn backward_requires_scalar_loss() {
        let tape = Tape::<f64>::new();
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(tape.backward(&t).is_err());
    }

    #[test]
    fn clear_releases_captured_buffers() {
        let tape = Tape::<f64>::new();
        let a = Tensor::<f64>::param(vec![2], vec![1.0, 2.0]).unwrap();
        let b = tape.mul(&a, &a).unwrap();
        let arc = b.data_arc().clone();
        assert!(Arc::strong_count(&arc) >= 2);
        drop(b);
        // The mul closure still holds operand copies of `a`; clearing the
        // tape must drop them.
        let a_arc = a.data_arc().clone();
        assert!(Arc::strong_count(&a_arc) > 2);
        tape.clear();
        assert_eq!(Arc::strong_count(&a_arc), 2);
        assert_eq!(tape.op_count(), 0);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let t = Tensor::new(vec![], vec![f64::NAN]).unwrap();
        assert!(matches!(tape.backward(&t), Err(Error::Numeric(_))));
    }
}
