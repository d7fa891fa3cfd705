use std::cell::{Ref, RefCell};
use std::fmt;

use super::linalg::ConvGeom;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Recorded operation of a tape node, holding parent ids and whatever the
/// backward pass needs beyond the parents' values.
#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `y = scale · x + shift`
    Affine { x: usize, scale: T },
    /// Per-channel bias on a `[N, C, inner...]` tensor.
    AddBias { x: usize, b: usize, channels: usize, inner: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Transpose { x: usize, rows: usize, cols: usize },
    Reshape(usize),
    Relu(usize),
    Ln(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    SumLastAxis { x: usize, width: usize },
    LogSoftmax { x: usize, cols: usize },
    /// `cols` holds the batch patch matrix `(C·k·k) × (B·Ho·Wo)`.
    Conv2d { x: usize, w: usize, geom: ConvGeom, batch: usize, out_ch: usize, cols: Vec<T> },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    GlobalAvgPool { x: usize, spatial: usize },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        channels: usize,
        inner: usize,
        train: bool,
    },
    SelectRows { x: usize, idx: Vec<usize>, width: usize },
    RowNorm { x: usize, width: usize },
    CosineKernel { x: usize, width: usize, eps: T },
    TStudentKernel { x: usize, width: usize, degree: u32 },
    CondProb { k: usize, n: usize, floor: T },
    Jeffreys { a: usize, b: usize, n: usize },
}

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a computation.
///
/// Nodes are created in evaluation order, so reverse id order is a valid
/// topological order for the backward sweep. A tape is single-threaded.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a constant input. No gradient flows into it.
    pub fn constant(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false)
    }

    /// Records a differentiable input (a parameter or a probe variable).
    pub fn variable(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), true)
    }

    fn push_leaf(&self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value, op: Op::Leaf, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn push(
        &self,
        name: &str,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        parents: &[usize],
    ) -> Result<Var<'_, T>> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node { shape, value, op, requires_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Returns the gradient of `loss` with respect to every node that
    /// depends on a [`Tape::variable`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        if !root.requires_grad {
            return Err(Error::Untaped);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            if matches!(nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            super::backward::propagate(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes();
        let n = &nodes[self.id];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape consistent")
    }

    pub fn item(&self) -> T {
        self.tape.nodes()[self.id].value[0]
    }

    pub fn len(&self) -> usize {
        self.tape.nodes()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the loss.
    pub fn wrt(&self, v: &Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn wrt_id(&self, id: usize) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}
