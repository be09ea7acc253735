//! Dense f64 tensors with a dynamic reverse-mode graph.
//!
//! Every operation returns a fresh, immutable [`Tensor`]. When any input
//! requires a gradient the result keeps a handle to its parents together
//! with a backward closure, so the graph is rebuilt on every forward pass and
//! released as soon as the last handle to the loss is dropped.
//!
//! [`Tensor::backward`] returns a [`Gradients`] table keyed by leaf identity.
//! Calling it twice on the same loss yields two identical tables; nothing is
//! stored inside the graph. Accumulation across calls happens in the
//! `grad` slot of a [`Parameter`](crate::param::Parameter) and is additive
//! until the slot is cleared.

mod gemm;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

pub use ops::{cosine_matrix, cosine_similarity, GeluMode};

pub(crate) use gemm::gemm;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Receives the parent tensors, the forward output and the output gradient;
/// returns one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&[Tensor], &[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    id: u64,
    op: &'static str,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

// Unlinks long parent chains without recursing once per node.
impl Drop for Node {
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                stack.append(&mut node.parents);
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("op", &self.0.op)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain { op })
    }
}

impl Tensor {
    fn make_leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Argument(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        check_finite("tensor", &data)?;
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op: "leaf",
            shape: shape.to_vec(),
            data,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        })))
    }

    /// A constant: never receives a gradient.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::make_leaf(shape, data, false)
    }

    /// A leaf that collects a gradient during backward.
    pub fn variable(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::make_leaf(shape, data, true)
    }

    pub fn leaf(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        Self::make_leaf(shape, data, requires_grad)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(&[], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub(crate) fn from_op<F>(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Result<Self>
    where
        F: Fn(&[Tensor], &[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        check_finite(op, &data)?;
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let (parents, backward): (Vec<Tensor>, Option<BackwardFn>) = if requires_grad {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op,
            shape,
            data,
            requires_grad,
            parents,
            backward,
        })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Extent of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.0.shape.last().copied().unwrap_or(1)
    }

    /// Product of all leading extents.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.0.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.0.data[row * c..(row + 1) * c]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        if !self.requires_grad() && self.0.parents.is_empty() {
            return self.clone();
        }
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            op: "detach",
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Parents-before-children order of every node that requires a gradient.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    /// Reverse-mode sweep from a scalar. Each node is visited exactly once.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let mut grads = Gradients::default();
        if !self.requires_grad() {
            return Ok(grads);
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    grads.by_id.insert(node.id(), g);
                }
                Some(backward) => {
                    let parent_grads = backward(&node.0.parents, &node.0.data, &g);
                    for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        check_finite(node.0.op, &pg)?;
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Gradients of one backward sweep, keyed by leaf.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_id: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, leaf: &Tensor) -> Option<&[f64]> {
        self.by_id.get(&leaf.id()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
