//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only arena built eagerly during one forward pass.
//! Every node only references nodes created before it, so the arena order is
//! already a topological order and backward is a single reverse sweep. The
//! graph is dropped after backward; there is no persistent tape.
//!
//! ```
//! use ckdyn::autodiff::Graph;
//! use ckdyn::tensor::Tensor;
//!
//! let g = Graph::new();
//! let w = g.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let loss = w.mul(w).unwrap().sum().scale(0.5);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).unwrap().data(), &[1.0, -2.0, 3.0]);
//! ```

use std::cell::{Cell, Ref, RefCell};
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named learnable tensor owned by a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }
}

/// Elementwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LinComb(Vec<(usize, f64)>),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Act(usize, Activation),
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _) | Op::Act(a, _) | Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::LinComb(terms) => terms.iter().map(|t| t.0).collect(),
            Op::ConcatCols(parts) => parts.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena holding one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
    consumed: Cell<bool>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.graph.nodes.borrow()[self.id].value)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    /// An unnamed differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Binds a parameter as a leaf. Binding the same name twice returns the
    /// same node, so a parameter used on several paths accumulates once.
    ///
    /// # Panics
    /// If a different value was already bound under the same name.
    pub fn param(&self, p: &Parameter) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(&p.name) {
            assert!(
                self.nodes.borrow()[id].value == p.value,
                "parameter name `{}` bound to two different values",
                p.name
            );
            return Var { graph: self, id };
        }
        let v = self.push_raw(p.value.clone(), Op::Leaf, p.trainable);
        self.params.borrow_mut().insert(p.name.clone(), v.id);
        v
    }

    /// Clears the consumed flag so `backward` may run again on this graph.
    pub fn reset(&self) {
        self.consumed.set(false);
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.graph, self) {
            return Err(Error::Structural("root belongs to another graph".into()));
        }
        if self.consumed.get() {
            return Err(Error::contract("backward already ran on this graph; call reset() first"));
        }
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if !root_node.value.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        for (id, node) in nodes.iter().enumerate().take(root.id + 1) {
            if let Some(&p) = node.op.parents().iter().find(|&&p| p >= id) {
                return Err(Error::Structural(format!("node {id} depends on later node {p}: cycle")));
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::filled(root_node.value.shape().to_vec(), 1.0));

        for id in (0..=root.id).rev() {
            let Some(upstream) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(&nodes, node, &upstream, &mut grads)?;
            }
            grads[id] = Some(upstream);
        }
        self.consumed.set(true);

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(name, &id)| {
                let g = grads[id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(nodes[id].value.shape().to_vec()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { params, nodes: grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, scale: f64, g: &Tensor) {
    match &mut grads[id] {
        Some(acc) => acc.axpy(scale, g),
        slot @ None => *slot = Some(if scale == 1.0 { g.clone() } else { g.scale(scale) }),
    }
}

/// Gradient contribution for the broadcast operand of a binary op.
fn reduce_to(shape: &[usize], g: Tensor) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        Tensor::new(shape.to_vec(), vec![g.sum()]).expect("scalar shape")
    }
}

fn propagate(nodes: &[Node], node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let needs = |id: usize| nodes[id].requires_grad;
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b] {
                if needs(p) {
                    accumulate(grads, p, 1.0, &reduce_to(val(p).shape(), up.clone()));
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, 1.0, &reduce_to(val(*a).shape(), up.clone()));
            }
            if needs(*b) {
                accumulate(grads, *b, -1.0, &reduce_to(val(*b).shape(), up.clone()));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, 1.0, &reduce_to(val(*a).shape(), up.mul(val(*b))?));
            }
            if needs(*b) {
                accumulate(grads, *b, 1.0, &reduce_to(val(*b).shape(), up.mul(val(*a))?));
            }
        }
        Op::Scale(a, s) => {
            if needs(*a) {
                accumulate(grads, *a, *s, up);
            }
        }
        Op::LinComb(terms) => {
            for &(p, c) in terms {
                if needs(p) {
                    accumulate(grads, p, c, up);
                }
            }
        }
        Op::MatMul(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, 1.0, &up.matmul(&val(*b).transpose()?)?);
            }
            if needs(*b) {
                accumulate(grads, *b, 1.0, &val(*a).transpose()?.matmul(up)?);
            }
        }
        Op::AddRow(a, row) => {
            if needs(*a) {
                accumulate(grads, *a, 1.0, up);
            }
            if needs(*row) {
                accumulate(grads, *row, 1.0, &up.sum_rows()?);
            }
        }
        Op::Act(a, act) => {
            if needs(*a) {
                let x = val(*a);
                let local = x.zip(&node.value, "act", |xi, yi| act.derivative(xi, yi))?;
                accumulate(grads, *a, 1.0, &local.mul(up)?);
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if needs(*a) {
                let n = val(*a).numel() as f64;
                let s = if matches!(node.op, Op::Mean(_)) { up.item() / n } else { up.item() };
                accumulate(grads, *a, 1.0, &Tensor::filled(val(*a).shape().to_vec(), s));
            }
        }
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for &p in parts {
                let w = val(p).cols();
                if needs(p) {
                    accumulate(grads, p, 1.0, &up.slice_cols(start, w)?);
                }
                start += w;
            }
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs } => {
            if needs(*logits) {
                let b = labels.len() as f64;
                let c = probs.cols();
                let mut d = probs.clone().into_data();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= 1.0;
                }
                let s = up.item() / b;
                let g = Tensor::new(probs.shape().to_vec(), d)?.scale(s);
                accumulate(grads, *logits, 1.0, &g);
            }
        }
    }
    Ok(())
}

/// Output of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to any node, if it lies on a
    /// differentiable path.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.nodes.get(v.id).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    fn value_ref(&self) -> Ref<'_, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    fn same_graph(&self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Structural("operands belong to different graphs".into()))
        }
    }

    fn binary(self, other: Var<'g>, f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>, op: Op) -> Result<Var<'g>> {
        self.same_graph(other)?;
        let value = f(&self.value_ref(), &other.value_ref())?;
        Ok(self.graph.push(value, op))
    }

    #[allow(clippy::should_implement_trait)] // fallible, so not `std::ops`
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Tensor::add, Op::Add(self.id, other.id))
    }

    #[allow(clippy::should_implement_trait)] // fallible, so not `std::ops`
    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Tensor::sub, Op::Sub(self.id, other.id))
    }

    #[allow(clippy::should_implement_trait)] // fallible, so not `std::ops`
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Tensor::mul, Op::Mul(self.id, other.id))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Tensor::matmul, Op::MatMul(self.id, other.id))
    }

    /// Adds a bias vector to every row of a batch.
    pub fn add_row(self, row: Var<'g>) -> Result<Var<'g>> {
        self.binary(row, Tensor::add_row, Op::AddRow(self.id, row.id))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let value = self.value_ref().scale(s);
        self.graph.push(value, Op::Scale(self.id, s))
    }

    pub fn activate(self, act: Activation) -> Var<'g> {
        let value = self.value_ref().map(|x| act.apply(x));
        self.graph.push(value, Op::Act(self.id, act))
    }

    pub fn tanh(self) -> Var<'g> {
        self.activate(Activation::Tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.activate(Activation::Sigmoid)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.activate(Activation::LeakyRelu(slope))
    }

    pub fn sum(self) -> Var<'g> {
        let value = Tensor::scalar(self.value_ref().sum());
        self.graph.push(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g> {
        let v = self.value_ref();
        let value = Tensor::scalar(v.sum() / v.numel() as f64);
        drop(v);
        self.graph.push(value, Op::Mean(self.id))
    }

    /// `sum_i coeff_i * var_i`, accumulated left to right. All terms must
    /// share one shape.
    pub fn lin_comb(terms: &[(f64, Var<'g>)]) -> Result<Var<'g>> {
        let (_, first) = *terms.first().ok_or_else(|| Error::contract("empty linear combination"))?;
        let graph = first.graph;
        let value = {
            let nodes = graph.nodes.borrow();
            let shape = nodes[first.id].value.shape().to_vec();
            let mut acc: Option<Tensor> = None;
            for &(c, v) in terms {
                first.same_graph(v)?;
                let t = &nodes[v.id].value;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Dimension {
                        op: "lin_comb",
                        left: shape,
                        right: t.shape().to_vec(),
                    });
                }
                match &mut acc {
                    None => acc = Some(if c == 1.0 { t.clone() } else { t.scale(c) }),
                    Some(a) => a.axpy(c, t),
                }
            }
            acc.expect("non-empty")
        };
        let op = Op::LinComb(terms.iter().map(|&(c, v)| (v.id, c)).collect());
        Ok(graph.push(value, op))
    }

    pub fn concat_cols(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let value = {
            let nodes = first.graph.nodes.borrow();
            for p in parts {
                first.same_graph(*p)?;
            }
            let refs: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            Tensor::concat_cols(&refs)?
        };
        Ok(first.graph.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    /// Mean softmax cross-entropy of a `B x C` logit batch, stabilised by
    /// subtracting each row's maximum.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'g>> {
        let (loss, probs) = {
            let logits = self.value_ref();
            if logits.shape().len() != 2 || logits.rows() != labels.len() {
                return Err(Error::Dimension {
                    op: "softmax_cross_entropy",
                    left: logits.shape().to_vec(),
                    right: vec![labels.len()],
                });
            }
            let c = logits.cols();
            if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
                return Err(Error::contract(format!("label {bad} out of range for {c} classes")));
            }
            let mut probs = Vec::with_capacity(logits.numel());
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = logits.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let log_z = z.ln();
                total += log_z - (row[y] - max);
                probs.extend(row.iter().map(|v| ((v - max) - log_z).exp()));
            }
            (
                total / labels.len() as f64,
                Tensor::new(logits.shape().to_vec(), probs)?,
            )
        };
        let op = Op::SoftmaxCrossEntropy {
            logits: self.id,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.graph.push(Tensor::scalar(loss), op))
    }
}
