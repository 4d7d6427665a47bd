//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle onto a graph node. Ops build the graph
//! eagerly; [`Tensor::backward`] walks it once in reverse topological order
//! and accumulates gradients into every `requires_grad` leaf. Graphs are
//! built fresh each step and never reused.
//!
//! Shape misuse panics (it is a programming error, not a runtime condition);
//! all kernels are plain loops over row-major `Vec<f64>` buffers.

mod conv;
mod gradcheck;
mod init;
mod ops;

pub use gradcheck::grad_check;
pub use init::{kaiming_normal, trunc_normal};

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) type BackwardFn = Box<dyn Fn(&Node)>;

pub(crate) struct Node {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub parents: Vec<Tensor>,
    pub backward: Option<BackwardFn>,
    pub id: u64,
}

/// Handle onto an autodiff graph node. Cloning is O(1) and aliases the node.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<Node>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn from_node(node: Node) -> Self {
        Tensor { inner: Rc::new(RefCell::new(node)) }
    }

    /// New leaf tensor. `data.len()` must equal the product of `shape`.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "dimension error: data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor::from_node(Node {
            data,
            shape: shape.to_vec(),
            grad: None,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![0.0; numel], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(vec![value; numel], shape)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(vec![value], &[1])
    }

    /// Mark as a trainable leaf (gradients will be accumulated).
    pub fn requires_grad(self, flag: bool) -> Self {
        self.inner.borrow_mut().requires_grad = flag;
        self
    }

    /// In-place version of [`Tensor::requires_grad`] for existing leaves.
    pub fn set_requires_grad(&self, flag: bool) {
        self.inner.borrow_mut().requires_grad = flag;
    }

    /// Result node of an op. Parents and the backward closure are recorded
    /// only when some parent needs gradients.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let numel: usize = shape.iter().product();
        debug_assert_eq!(data.len(), numel);
        let needs = parents.iter().any(|p| p.needs_grad());
        Tensor::from_node(Node {
            data,
            shape,
            grad: None,
            requires_grad: needs,
            parents: if needs { parents } else { Vec::new() },
            backward: if needs { Some(backward) } else { None },
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.inner.borrow().shape[i]
    }

    pub fn ndim(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    /// Borrow the value buffer (row-major).
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |n| n.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> f64 {
        let n = self.inner.borrow();
        assert_eq!(n.data.len(), 1, "contract violation: item() on non-scalar");
        n.data[0]
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Mutate the value buffer in place (optimizer updates).
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().data);
    }

    /// Copy of the values as a fresh constant leaf, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        let n = self.inner.borrow();
        Tensor::from_vec(n.data.clone(), &n.shape)
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    ///
    /// Repeated calls without `zero_grad` keep accumulating.
    pub fn backward(&self) {
        {
            let n = self.inner.borrow();
            assert_eq!(
                n.data.len(),
                1,
                "contract violation: backward() requires a scalar loss, got shape {:?}",
                n.shape
            );
        }
        let order = self.topo_order();
        {
            let mut n = self.inner.borrow_mut();
            match &mut n.grad {
                Some(g) => g[0] += 1.0,
                None => n.grad = Some(vec![1.0]),
            }
        }
        for t in order.iter().rev() {
            let ran = {
                let n = t.inner.borrow();
                if n.grad.is_none() {
                    continue;
                }
                match &n.backward {
                    Some(f) => {
                        f(&n);
                        true
                    }
                    None => false,
                }
            };
            // Interior grads are scratch space for one pass; clearing them
            // keeps repeated backward() calls from double-counting while
            // leaf grads accumulate as documented.
            if ran {
                t.inner.borrow_mut().grad = None;
            }
        }
    }

    /// Post-order DFS over parents; parents precede children in the result.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // (tensor, parents_pushed)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            let id = t.inner.borrow().id;
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(id) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.inner.borrow().parents.iter() {
                stack.push((p.clone(), false));
            }
        }
        order
    }
}

/// Add `contrib` into the gradient buffer of `t`, allocating zeros on demand.
pub(crate) fn accumulate_grad(t: &Tensor, contrib: &[f64]) {
    if !t.needs_grad() {
        return;
    }
    let mut n = t.inner.borrow_mut();
    debug_assert_eq!(contrib.len(), n.data.len());
    match &mut n.grad {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        None => n.grad = Some(contrib.to_vec()),
    }
}

/// Like [`accumulate_grad`] but takes ownership to avoid a copy when fresh.
pub(crate) fn accumulate_grad_owned(t: &Tensor, contrib: Vec<f64>) {
    if !t.needs_grad() {
        return;
    }
    let mut n = t.inner.borrow_mut();
    debug_assert_eq!(contrib.len(), n.data.len());
    match &mut n.grad {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(&contrib) {
                *gi += ci;
            }
        }
        None => n.grad = Some(contrib),
    }
}
