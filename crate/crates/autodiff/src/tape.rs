//! Operation recording and the reverse sweep.
//!
//! A [`Tape`] stores every value produced during a forward pass together with
//! the op that produced it. Node ids grow monotonically, so inputs always
//! precede outputs and the reverse sweep is a single pass from the root down
//! to node 0. Parameters are referenced by index into a borrowed
//! [`ParamStore`]; their buffers are never copied onto the tape.

use std::fmt;

use crate::error::{AdError, Result};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::{check_shape, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
    pub(crate) gen: u32,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// Op families, used for fault injection and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    BatchMatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddBias,
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    MaskedSoftmax,
    Concat,
    SliceLast,
    Reshape,
    Gather,
    MaskedMeanPool,
    CrossEntropy,
    Sum,
    Mean,
    SelectStep,
    Stack,
    RepeatSteps,
    Blend,
}

impl OpKind {
    pub const ALL: [OpKind; 26] = [
        OpKind::Leaf,
        OpKind::Param,
        OpKind::MatMul,
        OpKind::BatchMatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddBias,
        OpKind::Relu,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::MaskedSoftmax,
        OpKind::Concat,
        OpKind::SliceLast,
        OpKind::Reshape,
        OpKind::Gather,
        OpKind::MaskedMeanPool,
        OpKind::CrossEntropy,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SelectStep,
        OpKind::Stack,
        OpKind::RepeatSteps,
        OpKind::Blend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::BatchMatMul => "batch_matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBias => "add_bias",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::MaskedSoftmax => "masked_softmax",
            OpKind::Concat => "concat",
            OpKind::SliceLast => "slice_last",
            OpKind::Reshape => "reshape",
            OpKind::Gather => "embedding_gather",
            OpKind::MaskedMeanPool => "masked_mean_pool",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SelectStep => "select_step",
            OpKind::Stack => "stack",
            OpKind::RepeatSteps => "repeat_steps",
            OpKind::Blend => "blend",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        OpKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(usize),
    MatMul { a: usize, b: usize, trans_b: bool, m: usize, k: usize, n: usize },
    BatchMatMul { a: usize, b: usize, trans_b: bool, batch: usize, m: usize, k: usize, n: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddBias { x: usize, bias: usize },
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    MaskedSoftmax(usize),
    Concat { a: usize, b: usize },
    SliceLast { x: usize, start: usize },
    Reshape(usize),
    Gather { table: usize, ids: Vec<usize> },
    MaskedMeanPool { x: usize, mask: Vec<bool>, counts: Vec<usize> },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Vec<T> },
    Sum(usize),
    Mean(usize),
    SelectStep { x: usize, t: usize },
    Stack(Vec<usize>),
    RepeatSteps { x: usize },
    Blend { take_new: Vec<bool>, new: usize, old: usize },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::BatchMatMul { .. } => OpKind::BatchMatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Relu(_) => OpKind::Relu,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax(_) => OpKind::Softmax,
            Op::MaskedSoftmax(_) => OpKind::MaskedSoftmax,
            Op::Concat { .. } => OpKind::Concat,
            Op::SliceLast { .. } => OpKind::SliceLast,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Gather { .. } => OpKind::Gather,
            Op::MaskedMeanPool { .. } => OpKind::MaskedMeanPool,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::SelectStep { .. } => OpKind::SelectStep,
            Op::Stack(_) => OpKind::Stack,
            Op::RepeatSteps { .. } => OpKind::RepeatSteps,
            Op::Blend { .. } => OpKind::Blend,
        }
    }
}

pub(crate) enum Value<T> {
    Owned { shape: Vec<usize>, data: Vec<T> },
    Param(usize),
}

pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) value: Value<T>,
    pub(crate) requires_grad: bool,
}

/// Recorded computation over `T`, optionally bound to a parameter store.
pub struct Tape<'p, T: Real> {
    pub(crate) params: Option<&'p ParamStore<T>>,
    pub(crate) nodes: Vec<Node<T>>,
    gen: u32,
    differentiated: bool,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape without parameters; trainable inputs come from [`Tape::leaf`].
    pub fn new() -> Self {
        Tape { params: None, nodes: Vec::new(), gen: 0, differentiated: false, fault: None }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Tape { params: Some(params), ..Tape::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Vars recorded before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.gen = self.gen.wrapping_add(1);
        self.differentiated = false;
    }

    /// Test hook: halves the gradient flowing through every op of `kind`,
    /// producing a deliberately wrong backward rule.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub(crate) fn idx(&self, v: Var) -> Result<usize> {
        if v.gen != self.gen || v.id >= self.nodes.len() {
            return Err(AdError::TapeCleared);
        }
        Ok(v.id)
    }

    pub(crate) fn shape_of(&self, id: usize) -> &[usize] {
        match &self.nodes[id].value {
            Value::Owned { shape, .. } => shape,
            Value::Param(i) => self.params.expect("param node without store").by_index(*i).tensor.shape(),
        }
    }

    pub(crate) fn data_of(&self, id: usize) -> &[T] {
        match &self.nodes[id].value {
            Value::Owned { data, .. } => data,
            Value::Param(i) => self.params.expect("param node without store").by_index(*i).tensor.data(),
        }
    }

    /// Shape of a recorded value. Panics on a stale var.
    pub fn shape(&self, v: Var) -> &[usize] {
        self.shape_of(self.idx(v).expect("stale var"))
    }

    /// Buffer of a recorded value. Panics on a stale var.
    pub fn data(&self, v: Var) -> &[T] {
        self.data_of(self.idx(v).expect("stale var"))
    }

    pub fn value(&self, v: Var) -> Result<Tensor<T>> {
        let id = self.idx(v)?;
        Tensor::new(self.shape_of(id), self.data_of(id).to_vec())
    }

    pub(crate) fn push(&mut self, op: Op<T>, shape: Vec<usize>, data: Vec<T>, inputs: &[usize]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{}", op.kind());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite output from {}", op.kind());
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { op, value: Value::Owned { shape, data }, requires_grad });
        Var { id: self.nodes.len() - 1, gen: self.gen }
    }

    /// Records an input tensor; it receives a gradient iff `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let requires_grad = t.requires_grad();
        let shape = t.shape().to_vec();
        let data = t.into_data();
        self.nodes.push(Node { op: Op::Leaf, value: Value::Owned { shape, data }, requires_grad });
        Var { id: self.nodes.len() - 1, gen: self.gen }
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    /// References a named parameter of the attached store.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self.params.ok_or(AdError::NoParameters)?;
        let idx = store.index_of(name).ok_or_else(|| AdError::UnknownParameter(name.to_string()))?;
        self.nodes.push(Node { op: Op::Param(idx), value: Value::Param(idx), requires_grad: true });
        Ok(Var { id: self.nodes.len() - 1, gen: self.gen })
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Returns the gradients of every trainable leaf and parameter reachable
    /// from `root`. Fan-out accumulates. A second call without
    /// [`clear`](Self::clear) fails with [`AdError::BackwardTwice`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        let root = self.idx(root)?;
        if self.differentiated {
            return Err(AdError::BackwardTwice);
        }
        let root_shape = self.shape_of(root);
        if root_shape.iter().product::<usize>() != 1 {
            return Err(AdError::NonScalarRoot { shape: root_shape.to_vec() });
        }
        self.differentiated = true;

        let mut acc: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        acc[root] = Some(vec![T::one()]);
        let mut leaves: Vec<(usize, Vec<T>)> = Vec::new();
        let mut params: Vec<(usize, Vec<T>)> = Vec::new();

        for id in (0..=root).rev() {
            if !self.nodes[id].requires_grad {
                acc[id] = None;
                continue;
            }
            let Some(mut g) = acc[id].take() else { continue };
            match self.nodes[id].op {
                Op::Leaf => leaves.push((id, g)),
                Op::Param(p) => match params.iter_mut().find(|(q, _)| *q == p) {
                    Some((_, existing)) => {
                        for (a, b) in existing.iter_mut().zip(&g) {
                            *a = *a + *b;
                        }
                    }
                    None => params.push((p, g)),
                },
                _ => {
                    if self.fault == Some(self.nodes[id].op.kind()) {
                        let half = T::of(0.5);
                        g.iter_mut().for_each(|v| *v = *v * half);
                    }
                    self.propagate(id, &g, &mut acc);
                }
            }
        }
        params.sort_by_key(|(p, _)| *p);
        Ok(Gradients { gen: self.gen, leaves, params })
    }
}

/// Result of one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    gen: u32,
    leaves: Vec<(usize, Vec<T>)>,
    params: Vec<(usize, Vec<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a trainable leaf; `None` when unreachable from the root.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.gen != self.gen {
            return None;
        }
        self.leaves.iter().find(|(id, _)| *id == v.id).map(|(_, g)| g.as_slice())
    }

    /// `(store index, gradient)` pairs in store order.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.params.iter().map(|(i, g)| (*i, g.as_slice()))
    }

    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Option<&[T]> {
        let idx = store.index_of(name)?;
        self.params.iter().find(|(i, _)| *i == idx).map(|(_, g)| g.as_slice())
    }
}

pub(crate) fn owned_shape(op: &'static str, shape: Vec<usize>) -> Result<Vec<usize>> {
    check_shape(op, &shape)?;
    Ok(shape)
}
