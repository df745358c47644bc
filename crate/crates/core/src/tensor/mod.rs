//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations on
//! tensors that require gradients record the operation and its parents, so
//! the forward pass builds an acyclic graph that [`Tensor::backward`] walks
//! in reverse creation order. Node ids are handed out monotonically, and a
//! node is always created after its parents, so sorting by descending id is
//! a valid reverse topological order.
//!
//! Binary elementwise operations broadcast over trailing dimensions only:
//! the smaller operand's shape must equal a suffix of the larger operand's
//! shape (`[m, k] + [k]`, `[m, k] * []`). There is no rank promotion of
//! size-1 axes.

mod linalg;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use linalg::cholesky_factor;
pub use linalg::SYMMETRY_TOLERANCE;
use ops::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

struct GradFn {
    op: Op,
    parents: Vec<Tensor>,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad_fn: Mutex<Option<GradFn>>,
    consumed: AtomicBool,
    grad: Mutex<Option<Vec<f64>>>,
}

#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &self.node.data)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl Tensor {
    fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad_fn: Mutex::new(grad_fn),
                consumed: AtomicBool::new(false),
                grad: Mutex::new(None),
            }),
        }
    }

    fn with_requires(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Self::make(data, shape.to_vec(), requires_grad, None))
    }

    /// A constant tensor that does not participate in differentiation.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::with_requires(data, shape, false)
    }

    /// A leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::with_requires(data, shape, true)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![value], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::make(vec![0.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn eye(k: usize) -> Self {
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Self::make(data, vec![k, k], false, None)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(data, &[rows.len(), cols])
    }

    /// Records the result of an operation, attaching a graph node when any
    /// parent requires gradients.
    fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, parents: &[&Tensor]) -> Result<Self> {
        check_finite(&data, op.name())?;
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents: parents.iter().map(|&p| p.clone()).collect(),
        });
        Ok(Self::make(data, shape, requires_grad, grad_fn))
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    fn id(&self) -> u64 {
        self.node.id
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.node.data[0])
        } else {
            Err(Error::contract(format!(
                "item() needs a single-element tensor, got shape {:?}",
                self.shape()
            )))
        }
    }

    /// Entry `(i, j)` of a matrix.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.node.data[i * self.node.shape[1] + j]
    }

    /// The same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::make(self.node.data.clone(), self.node.shape.clone(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().expect("grad lock").clone()
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().expect("grad lock").take()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock") = None;
    }

    /// Propagates d(self)/d(leaf) into every reachable leaf that requires
    /// gradients. Gradients add onto whatever the leaves already hold. The
    /// recorded graph is released afterwards and cannot be walked again.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::contract(
                "loss does not depend on any tensor that requires gradients",
            ));
        }

        let mut visited = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !visited.insert(t.id()) {
                continue;
            }
            if t.node.consumed.load(Ordering::Acquire) {
                return Err(Error::State(
                    "graph was already consumed by an earlier backward pass".into(),
                ));
            }
            if let Some(gf) = t.node.grad_fn.lock().expect("grad_fn lock").as_ref() {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push(p.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for t in order {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let grad_fn = t.node.grad_fn.lock().expect("grad_fn lock").take();
            match grad_fn {
                Some(gf) => {
                    t.node.consumed.store(true, Ordering::Release);
                    let parent_grads = gf.op.backward(&gf.parents, &t, &g)?;
                    for (p, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}
