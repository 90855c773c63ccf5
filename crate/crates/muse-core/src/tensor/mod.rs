//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Tensors are cheap handles (`Rc`) onto a value buffer plus the op that
//! produced it. Each forward op records its parents and a backward closure;
//! [`Tensor::backward`] walks the resulting DAG once in reverse topological
//! order, accumulating gradients additively into every tensor that requires
//! them. Graphs are rebuilt every step and freed when the loss handle drops.

mod batchnorm;
mod conv;
mod elementwise;
mod linear;
mod pool;
mod reduce;
mod select;
mod softmax;

pub mod gradcheck;

/// Plain-data softmax helpers shared with loss code that builds soft targets
/// outside the graph.
pub(crate) mod softmax_util {
    pub(crate) use super::softmax::log_softmax_rows as log_softmax_plain;
}

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;

use crate::elem::Elem;
use crate::error::{Error, Result};

pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &[Tensor<E>])>;

struct Inner<E: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    parents: Vec<Tensor<E>>,
    backward_fn: Option<BackwardFn<E>>,
}

/// An n-dimensional array of `E` with optional gradient tracking.
pub struct Tensor<E: Elem> {
    inner: Rc<Inner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

fn next_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(1);
    COUNTER.fetch_add(1, Ordering::Relaxed)
}

pub(crate) fn check_finite<E: Elem>(op: &'static str, data: &[E]) {
    if cfg!(debug_assertions) {
        for (i, v) in data.iter().enumerate() {
            assert!(
                v.is_finite(),
                "non-finite value {v} at index {i} in output of {op}"
            );
        }
    }
}

impl<E: Elem> Tensor<E> {
    fn build(
        data: Vec<E>,
        shape: Vec<usize>,
        requires_grad: bool,
        parents: Vec<Tensor<E>>,
        backward_fn: Option<BackwardFn<E>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward_fn,
            }),
        }
    }

    /// Leaf tensor without gradient tracking.
    pub fn new(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {:?} does not match {} elements", shape, data.len()),
            ));
        }
        Ok(Self::build(data, shape.to_vec(), false, Vec::new(), None))
    }

    /// Leaf tensor that accumulates gradients (a trainable parameter).
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "param",
                format!("shape {:?} does not match {} elements", shape, data.len()),
            ));
        }
        Ok(Self::build(data, shape.to_vec(), true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(vec![E::ZERO; n], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let n = shape.iter().product();
        Self::build(vec![value; n], shape.to_vec(), false, Vec::new(), None)
    }

    pub fn scalar(value: E) -> Self {
        Self::build(vec![value], vec![], false, Vec::new(), None)
    }

    /// Result of an op. Drops graph bookkeeping when no parent needs grads,
    /// so inference-mode forwards never retain buffers.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<E>,
        shape: Vec<usize>,
        parents: Vec<Tensor<E>>,
        backward_fn: BackwardFn<E>,
    ) -> Self {
        check_finite(op, &data);
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::build(data, shape, true, parents, Some(backward_fn))
        } else {
            Self::build(data, shape, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the value buffer (optimizer updates, loading).
    pub fn data_mut(&self) -> RefMut<'_, Vec<E>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Detached copy: same values, no history, no gradient tracking.
    pub fn detach(&self) -> Tensor<E> {
        Self::build(self.to_vec(), self.inner.shape.to_vec(), false, Vec::new(), None)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[E]) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += *b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    pub(crate) fn accumulate_grad_owned(&self, delta: Vec<E>) {
        if !self.inner.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => *slot = Some(delta),
        }
    }

    /// Nodes in topological order (parents before consumers), restricted to
    /// the subgraph that requires gradients.
    fn topo_order(&self) -> Vec<Tensor<E>> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        visited.insert(self.id());
        let mut stack: Vec<(Tensor<E>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, next_parent)) = stack.pop() {
            if next_parent < node.inner.parents.len() {
                let parent = node.inner.parents[next_parent].clone();
                stack.push((node, next_parent + 1));
                if parent.requires_grad() && visited.insert(parent.id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }

    /// Reverse-mode sweep from a scalar loss. Gradients of intermediate nodes
    /// are reset per call; leaf gradients accumulate until [`zero_grad`].
    ///
    /// Detached tensors act as constants and silently receive no gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::arg(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.inner.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        for node in &order {
            if node.inner.backward_fn.is_some() {
                *node.inner.grad.borrow_mut() = None;
            }
        }
        self.accumulate_grad_owned(vec![E::ONE]);
        for node in order.iter().rev() {
            if let Some(f) = &node.inner.backward_fn {
                let upstream = node
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .expect("node visited before its consumers");
                f(&upstream, &node.inner.parents);
            }
        }
        Ok(())
    }

    /// Copy with a new shape holding the same number of elements.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        let out = Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |up, parents| {
                parents[0].accumulate_grad(up);
            }),
        );
        Ok(out)
    }
}
