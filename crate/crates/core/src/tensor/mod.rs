//! Dense row-major `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every op output keeps a reference to its parents and a backward closure.
//! Calling [`Tensor::backward`] walks the graph once in reverse topological
//! order; only leaf tensors (parameters) store gradients, so repeated
//! backward calls accumulate into leaves without double counting inner
//! nodes.

mod check;
mod ops;
mod shape;

pub use check::{grad_check, GradReport};
pub use ops::{log_sigmoid as scalar_log_sigmoid, sigmoid as scalar_sigmoid};
pub use shape::Shape;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("numeric-domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-deterministic loss builder: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Gradient of the op output in, one optional gradient per parent out.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Shape,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Reference-counted handle; cloning shares the underlying node.
#[derive(Clone)]
pub struct Tensor {
    node: Rc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.node.data.borrow();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape.dims())
            .field("data", &preview)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

impl Tensor {
    fn make(shape: Shape, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    pub fn new(data: Vec<f64>, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(TensorError::Dimension {
                op: "new",
                msg: format!("shape {:?} needs {} values, got {}", dims, shape.numel(), data.len()),
            });
        }
        Ok(Self::make(shape, data, false, None))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, dims: &[usize]) -> Result<Self> {
        let t = Self::new(data, dims)?;
        Ok(t.into_param())
    }

    fn into_param(self) -> Self {
        let data = self.node.data.borrow().clone();
        Self::make(self.node.shape.clone(), data, true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::make(Shape::scalar(), vec![v], false, None)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Self {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: &[usize], v: f64) -> Self {
        let shape = Shape::new(dims).expect("positive extents");
        let n = shape.numel();
        Self::make(shape, vec![v; n], false, None)
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        Self::make(Shape::new(&[n, n]).expect("positive"), d, false, None)
    }

    /// Builds an op output. Records the graph only when recording is on and
    /// some parent needs gradients.
    pub(crate) fn from_op(
        dims: Vec<usize>,
        data: Vec<f64>,
        op: &'static str,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Self {
        let shape = Shape::from_vec(dims);
        let needs = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if needs {
            let grad_fn = GradFn {
                op,
                parents,
                backward: Box::new(backward),
            };
            Self::make(shape, data, true, Some(grad_fn))
        } else {
            Self::make(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.node.shape.dims()
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.ndim()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.numel()
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.op)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    /// Overwrites values in place (optimizer updates, checkpoint loads).
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut d = self.node.data.borrow_mut();
        if d.len() != values.len() {
            return Err(TensorError::Dimension {
                op: "set_data",
                msg: format!("expected {} values, got {}", d.len(), values.len()),
            });
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.node.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Multiplies the stored gradient in place, if any.
    pub fn scale_grad(&self, factor: f64) {
        if let Some(g) = self.node.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.node.shape.clone(), self.to_vec(), false, None)
    }

    /// Reverse-mode sweep from a single-element loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        if self.is_leaf() {
            self.accumulate_grad(&[1.0]);
            return Ok(());
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in order.iter().rev() {
            let Some(grad_fn) = t.node.grad_fn.as_ref() else {
                continue;
            };
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            let parent_grads = (grad_fn.backward)(&g);
            debug_assert_eq!(parent_grads.len(), grad_fn.parents.len(), "{}", grad_fn.op);
            for (p, pg) in grad_fn.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel(), "grad size from {}", grad_fn.op);
                if p.is_leaf() {
                    p.accumulate_grad(&pg);
                } else {
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes needing gradients, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, children already pushed)
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.node.grad_fn.as_ref() {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
