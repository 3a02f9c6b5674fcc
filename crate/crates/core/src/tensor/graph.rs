use std::cell::RefCell;
use std::collections::HashMap;

use super::kernels::{self, AxisSplit};
use super::params::{Grads, ParamId, ParamStore};
use super::{numel, Precision, Tensor};
use crate::error::{contract_err, shape_err, Error, Result};

/// Position of a node on the tape. Inputs always have smaller ids.
pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Neg,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: NodeId,
        rows: usize,
        cols: usize,
    },
    Binary {
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
    },
    Affine {
        a: NodeId,
        mul: f64,
    },
    Unary {
        kind: UnaryKind,
        a: NodeId,
    },
    Pow {
        a: NodeId,
        exponent: f64,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        a: NodeId,
        axis: usize,
        start: usize,
    },
    Reduce {
        kind: ReduceKind,
        a: NodeId,
        axis: usize,
        argmax: Vec<usize>,
    },
    Softmax {
        a: NodeId,
        axis: usize,
    },
    LogSoftmax {
        a: NodeId,
        axis: usize,
    },
    LayerNorm {
        a: NodeId,
        inv_std: Vec<f64>,
    },
    Unfold {
        a: NodeId,
        width: usize,
    },
    Reshape {
        a: NodeId,
    },
    Index {
        a: NodeId,
        flat: usize,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// An append-only computation tape.
///
/// A graph belongs to one thread; build one per forward pass. Gradients of
/// leaves accumulate across repeated [`Graph::backward`] calls until
/// [`Graph::zero_grad`].
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<HashMap<NodeId, Vec<f64>>>,
    bindings: RefCell<HashMap<(u64, usize), NodeId>>,
    precision: Precision,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new(Precision::F64)
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(HashMap::new()),
            bindings: RefCell::new(HashMap::new()),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_tensor(Op::Leaf, value, false)
    }

    /// A leaf that receives gradient when `requires_grad` is set.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_tensor(Op::Leaf, value, requires_grad)
    }

    /// Binds a stored parameter as a gradient-tracking leaf. Binding the same
    /// parameter twice returns the same node, holding the value captured at
    /// the first binding.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let key = (store.store_id(), id.index());
        if let Some(&node) = self.bindings.borrow().get(&key) {
            return Var { graph: self, id: node };
        }
        let var = self.leaf(store.get(id).clone(), true);
        self.bindings.borrow_mut().insert(key, var.id);
        var
    }

    /// Runs reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.id + 1, || None);
        adj[loss.id] = Some(vec![1.0]);
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                let acc = leaf_grads.entry(id).or_insert_with(|| vec![0.0; g.len()]);
                for (a, x) in acc.iter_mut().zip(&g) {
                    *a += x;
                }
                continue;
            }
            propagate(&nodes, node, &g, &mut adj);
        }
        Ok(())
    }

    /// Accumulated gradient of a gradient-tracking leaf; zeros when the leaf
    /// was unreachable. `None` for constants and interior nodes.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        if !node.requires_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        let shape = node.value.shape().to_vec();
        let data = self
            .leaf_grads
            .borrow()
            .get(&var.id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; numel(&shape)]);
        Some(Tensor::from_parts(shape, data))
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    /// Gradients of every parameter of `store` bound into this graph.
    pub fn param_grads(&self, store: &ParamStore) -> Grads {
        let mut grads = Grads::zeros_like(store);
        self.accumulate_param_grads(store, &mut grads);
        grads
    }

    pub fn accumulate_param_grads(&self, store: &ParamStore, grads: &mut Grads) {
        let bindings = self.bindings.borrow();
        let leaf_grads = self.leaf_grads.borrow();
        for (&(sid, idx), node) in bindings.iter() {
            if sid != store.store_id() {
                continue;
            }
            if let Some(g) = leaf_grads.get(node) {
                grads.add_slice(ParamId::from_index(idx), g);
            }
        }
    }

    fn push_tensor(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op: Op, shape: Vec<usize>, mut data: Vec<f64>, requires_grad: bool) -> Var<'_> {
        self.precision.round_slice(&mut data);
        self.push_tensor(op, Tensor::from_parts(shape, data), requires_grad)
    }

    fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| contract_err!("concat of zero parts"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(shape_err!("concat axis {axis} out of range for {base:?}"));
        }
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err!(
                    "concat along axis {axis}: {:?} does not match {:?}",
                    s,
                    base
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let out_split = AxisSplit::new(&shape, axis);
        let mut data = vec![0.0; numel(&shape)];
        let mut offset = 0;
        for v in &values {
            let split = AxisSplit::new(v.shape(), axis);
            let src = v.data();
            let chunk = split.len * split.inner;
            for o in 0..split.outer {
                let dst = out_split.index(o, offset, 0);
                data[dst..dst + chunk].copy_from_slice(&src[o * chunk..(o + 1) * chunk]);
            }
            offset += split.len;
        }
        let requires_grad = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Op::Concat { parts: ids, axis }, shape, data, requires_grad))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        let reshaped = parts
            .iter()
            .map(|p| {
                let mut s = vec![1];
                s.extend(p.shape());
                p.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&reshaped, 0)
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn check_same_graph(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "operands recorded on different graphs"
        );
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.check_same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul of {sa:?} and {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(a.data(), b.data(), m, k, n);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            vec![m, n],
            data,
            rg,
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(self) -> Result<Var<'g>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(shape_err!("transpose needs 2-D input, got {:?}", a.shape()));
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let data = kernels::transpose(a.data(), rows, cols);
        Ok(self.graph.push(
            Op::Transpose { a: self.id, rows, cols },
            vec![cols, rows],
            data,
            self.requires_grad(),
        ))
    }

    /// Elementwise binary op. `other` may have the same shape, be a single
    /// element, or match the trailing dimensions of `self`.
    pub fn binary(self, kind: BinaryKind, other: Var<'g>) -> Result<Var<'g>> {
        self.check_same_graph(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        // Equal shapes, a single element, or the trailing dimensions of `a`.
        let broadcastable = sa == sb || b.numel() == 1 || (sb.len() < sa.len() && sa.ends_with(sb));
        if !broadcastable {
            return Err(shape_err!("elementwise {kind:?} of {sa:?} and {sb:?}"));
        }
        let nb = b.numel();
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<f64> = (0..a.numel())
            .map(|i| {
                let y = bd[i % nb];
                match kind {
                    BinaryKind::Add => ad[i] + y,
                    BinaryKind::Sub => ad[i] - y,
                    BinaryKind::Mul => ad[i] * y,
                }
            })
            .collect();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
            sa.to_vec(),
            data,
            rg,
        ))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(BinaryKind::Mul, other)
    }

    /// `mul * x + add`, elementwise with constant coefficients.
    pub fn affine(self, mul: f64, add: f64) -> Var<'g> {
        let a = self.value();
        let data = a.data().iter().map(|&x| mul * x + add).collect();
        self.graph.push(
            Op::Affine { a: self.id, mul },
            a.shape().to_vec(),
            data,
            self.requires_grad(),
        )
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.affine(c, 0.0)
    }

    pub fn unary(self, kind: UnaryKind) -> Result<Var<'g>> {
        let a = self.value();
        let xs = a.data();
        if kind == UnaryKind::Log {
            if let Some(i) = xs.iter().position(|&x| !(x > 0.0)) {
                return Err(Error::Domain(format!(
                    "log of non-positive entry {} at index {i}",
                    xs[i]
                )));
            }
        }
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Sigmoid => kernels::sigmoid,
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Relu => |x| if x > 0.0 { x } else { 0.0 },
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
            UnaryKind::Neg => |x| -x,
            UnaryKind::Square => |x| x * x,
        };
        let data = xs.iter().map(|&x| f(x)).collect();
        Ok(self.graph.push(
            Op::Unary { kind, a: self.id },
            a.shape().to_vec(),
            data,
            self.requires_grad(),
        ))
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(UnaryKind::Sigmoid).expect("total")
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(UnaryKind::Tanh).expect("total")
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(UnaryKind::Relu).expect("total")
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(UnaryKind::Exp).expect("total")
    }

    pub fn log(self) -> Result<Var<'g>> {
        self.unary(UnaryKind::Log)
    }

    pub fn neg(self) -> Var<'g> {
        self.unary(UnaryKind::Neg).expect("total")
    }

    pub fn square(self) -> Var<'g> {
        self.unary(UnaryKind::Square).expect("total")
    }

    /// `x^exponent` for non-negative bases. `x^0` is exactly one.
    pub fn pow(self, exponent: f64) -> Result<Var<'g>> {
        let a = self.value();
        if let Some(i) = a.data().iter().position(|&x| x < 0.0) {
            return Err(Error::Domain(format!(
                "pow of negative entry {} at index {i}",
                a.data()[i]
            )));
        }
        let data = a
            .data()
            .iter()
            .map(|&x| if exponent == 0.0 { 1.0 } else { x.powf(exponent) })
            .collect();
        Ok(self.graph.push(
            Op::Pow { a: self.id, exponent },
            a.shape().to_vec(),
            data,
            self.requires_grad(),
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(shape_err!("slice [{start}, {}) on axis {axis} of {s:?}", start + len));
        }
        let split = AxisSplit::new(s, axis);
        let mut shape = s.to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..split.outer {
            let from = split.index(o, start, 0);
            data.extend_from_slice(&a.data()[from..from + len * split.inner]);
        }
        Ok(self.graph.push(
            Op::Slice {
                a: self.id,
                axis,
                start,
            },
            shape,
            data,
            self.requires_grad(),
        ))
    }

    /// Row `r` of a 2-D tensor as a vector.
    pub fn row(self, r: usize) -> Result<Var<'g>> {
        let cols = self.shape()[1];
        self.slice(0, r, 1)?.reshape(&[cols])
    }

    pub fn reduce(self, kind: ReduceKind, axis: usize) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        if axis >= s.len() {
            return Err(shape_err!("reduce axis {axis} out of range for {s:?}"));
        }
        let split = AxisSplit::new(s, axis);
        if split.len == 0 {
            return Err(Error::Domain(format!("reduce over empty axis {axis}")));
        }
        let xs = a.data();
        let mut data = vec![0.0; split.outer * split.inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0; data.len()];
        }
        for o in 0..split.outer {
            for i in 0..split.inner {
                let out = o * split.inner + i;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let mut acc = 0.0;
                        for k in 0..split.len {
                            acc += xs[split.index(o, k, i)];
                        }
                        if kind == ReduceKind::Mean {
                            acc /= split.len as f64;
                        }
                        data[out] = acc;
                    }
                    ReduceKind::Max => {
                        let mut best = 0;
                        let mut best_val = xs[split.index(o, 0, i)];
                        for k in 1..split.len {
                            let v = xs[split.index(o, k, i)];
                            if v > best_val {
                                best = k;
                                best_val = v;
                            }
                        }
                        data[out] = best_val;
                        argmax[out] = best;
                    }
                }
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        Ok(self.graph.push(
            Op::Reduce {
                kind,
                a: self.id,
                axis,
                argmax,
            },
            shape,
            data,
            self.requires_grad(),
        ))
    }

    pub fn sum(self, axis: usize) -> Result<Var<'g>> {
        self.reduce(ReduceKind::Sum, axis)
    }

    pub fn mean(self, axis: usize) -> Result<Var<'g>> {
        self.reduce(ReduceKind::Mean, axis)
    }

    pub fn max(self, axis: usize) -> Result<Var<'g>> {
        self.reduce(ReduceKind::Max, axis)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(self) -> Var<'g> {
        let n = self.numel();
        self.reshape(&[n])
            .and_then(|v| v.sum(0))
            .expect("flattened sum is total")
    }

    fn check_finite(&self, what: &str) -> Result<Tensor> {
        let a = self.value();
        if let Some(i) = a.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "{what} input has non-finite entry {} at index {i}",
                a.data()[i]
            )));
        }
        Ok(a)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let a = self.check_finite("softmax")?;
        let s = a.shape();
        if axis >= s.len() {
            return Err(shape_err!("softmax axis {axis} out of range for {s:?}"));
        }
        let split = AxisSplit::new(s, axis);
        let xs = a.data();
        let mut data = vec![0.0; xs.len()];
        for o in 0..split.outer {
            for i in 0..split.inner {
                let m = (0..split.len)
                    .map(|k| xs[split.index(o, k, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..split.len {
                    let idx = split.index(o, k, i);
                    data[idx] = (xs[idx] - m).exp();
                    z += data[idx];
                }
                for k in 0..split.len {
                    data[split.index(o, k, i)] /= z;
                }
            }
        }
        Ok(self
            .graph
            .push(Op::Softmax { a: self.id, axis }, s.to_vec(), data, self.requires_grad()))
    }

    /// Log of the softmax along `axis`, evaluated as `x - m - ln Σ e^(x - m)`.
    pub fn log_softmax(self, axis: usize) -> Result<Var<'g>> {
        let a = self.check_finite("log_softmax")?;
        let s = a.shape();
        if axis >= s.len() {
            return Err(shape_err!("log_softmax axis {axis} out of range for {s:?}"));
        }
        let split = AxisSplit::new(s, axis);
        let xs = a.data();
        let mut data = vec![0.0; xs.len()];
        for o in 0..split.outer {
            for i in 0..split.inner {
                let m = (0..split.len)
                    .map(|k| xs[split.index(o, k, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = (0..split.len)
                    .map(|k| (xs[split.index(o, k, i)] - m).exp())
                    .sum::<f64>()
                    .ln();
                for k in 0..split.len {
                    let idx = split.index(o, k, i);
                    data[idx] = xs[idx] - m - lse;
                }
            }
        }
        Ok(self.graph.push(
            Op::LogSoftmax { a: self.id, axis },
            s.to_vec(),
            data,
            self.requires_grad(),
        ))
    }

    /// Normalizes each slice along the last axis to zero mean and unit
    /// variance: `(x - μ) / sqrt(σ² + eps)`.
    pub fn layer_norm(self, eps: f64) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        let d = *s.last().ok_or_else(|| shape_err!("layer_norm of a scalar"))?;
        let rows = a.numel() / d;
        let xs = a.data();
        let mut data = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (y, x) in data[r * d..(r + 1) * d].iter_mut().zip(row) {
                *y = (x - mu) * is;
            }
        }
        Ok(self.graph.push(
            Op::LayerNorm { a: self.id, inv_std },
            s.to_vec(),
            data,
            self.requires_grad(),
        ))
    }

    /// Sliding windows over the rows of `[L×d]`: row `p` of the
    /// `[(L-w+1) × w·d]` result is rows `p..p+w` laid end to end.
    pub fn unfold_rows(self, width: usize) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 || width == 0 || width > s[0] {
            return Err(shape_err!("unfold width {width} over {s:?}"));
        }
        let (l, d) = (s[0], s[1]);
        let positions = l - width + 1;
        let mut data = Vec::with_capacity(positions * width * d);
        for p in 0..positions {
            data.extend_from_slice(&a.data()[p * d..(p + width) * d]);
        }
        Ok(self.graph.push(
            Op::Unfold { a: self.id, width },
            vec![positions, width * d],
            data,
            self.requires_grad(),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let t = a.reshape(shape)?;
        Ok(self
            .graph
            .push_tensor(Op::Reshape { a: self.id }, t, self.requires_grad()))
    }

    /// The element at row-major position `flat`, as a scalar.
    pub fn index(self, flat: usize) -> Result<Var<'g>> {
        let a = self.value();
        if flat >= a.numel() {
            return Err(shape_err!("index {flat} out of range for {:?}", a.shape()));
        }
        Ok(self.graph.push(
            Op::Index { a: self.id, flat },
            Vec::new(),
            vec![a.data()[flat]],
            self.requires_grad(),
        ))
    }
}

/// Gradient buffer of input `id`, created on first use; `None` when the
/// input does not track gradient.
fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(adj[id].get_or_insert_with(|| vec![0.0; n]))
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => unreachable!("leaves are handled by the caller"),
        &Op::MatMul { a, b, m, k, n } => {
            if let Some(ga) = slot(nodes, adj, a) {
                kernels::matmul_bt_acc(ga, g, nodes[b].value.data(), m, k, n);
            }
            if let Some(gb) = slot(nodes, adj, b) {
                kernels::matmul_at_acc(gb, nodes[a].value.data(), g, m, k, n);
            }
        }
        &Op::Transpose { a, rows, cols } => {
            if let Some(ga) = slot(nodes, adj, a) {
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        }
        &Op::Binary { kind, a, b } => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            let nb = bv.len();
            if let Some(ga) = slot(nodes, adj, a) {
                for i in 0..g.len() {
                    ga[i] += match kind {
                        BinaryKind::Add | BinaryKind::Sub => g[i],
                        BinaryKind::Mul => g[i] * bv[i % nb],
                    };
                }
            }
            if let Some(gb) = slot(nodes, adj, b) {
                for i in 0..g.len() {
                    gb[i % nb] += match kind {
                        BinaryKind::Add => g[i],
                        BinaryKind::Sub => -g[i],
                        BinaryKind::Mul => g[i] * av[i],
                    };
                }
            }
        }
        &Op::Affine { a, mul } => {
            if let Some(ga) = slot(nodes, adj, a) {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += mul * gi;
                }
            }
        }
        &Op::Unary { kind, a } => {
            let x = nodes[a].value.data();
            if let Some(ga) = slot(nodes, adj, a) {
                for i in 0..g.len() {
                    let d = match kind {
                        UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                        UnaryKind::Tanh => 1.0 - y[i] * y[i],
                        UnaryKind::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Exp => y[i],
                        UnaryKind::Log => 1.0 / x[i],
                        UnaryKind::Neg => -1.0,
                        UnaryKind::Square => 2.0 * x[i],
                    };
                    ga[i] += g[i] * d;
                }
            }
        }
        &Op::Pow { a, exponent } => {
            let x = nodes[a].value.data();
            if let Some(ga) = slot(nodes, adj, a) {
                if exponent != 0.0 {
                    for i in 0..g.len() {
                        ga[i] += g[i] * exponent * x[i].powf(exponent - 1.0);
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            let out = AxisSplit::new(node.value.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let split = AxisSplit::new(nodes[p].value.shape(), *axis);
                if let Some(gp) = slot(nodes, adj, p) {
                    let chunk = split.len * split.inner;
                    for o in 0..split.outer {
                        let src = out.index(o, offset, 0);
                        for (dst, s) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(&g[src..src + chunk]) {
                            *dst += s;
                        }
                    }
                }
                offset += split.len;
            }
        }
        &Op::Slice { a, axis, start } => {
            let input = AxisSplit::new(nodes[a].value.shape(), axis);
            let len = node.value.shape()[axis];
            if let Some(ga) = slot(nodes, adj, a) {
                let chunk = len * input.inner;
                for o in 0..input.outer {
                    let dst = input.index(o, start, 0);
                    for (d, s) in ga[dst..dst + chunk].iter_mut().zip(&g[o * chunk..(o + 1) * chunk]) {
                        *d += s;
                    }
                }
            }
        }
        Op::Reduce { kind, a, axis, argmax } => {
            let split = AxisSplit::new(nodes[*a].value.shape(), *axis);
            if let Some(ga) = slot(nodes, adj, *a) {
                for o in 0..split.outer {
                    for i in 0..split.inner {
                        let out = o * split.inner + i;
                        match kind {
                            ReduceKind::Sum => {
                                for k in 0..split.len {
                                    ga[split.index(o, k, i)] += g[out];
                                }
                            }
                            ReduceKind::Mean => {
                                let share = g[out] / split.len as f64;
                                for k in 0..split.len {
                                    ga[split.index(o, k, i)] += share;
                                }
                            }
                            ReduceKind::Max => {
                                ga[split.index(o, argmax[out], i)] += g[out];
                            }
                        }
                    }
                }
            }
        }
        &Op::Softmax { a, axis } => {
            let split = AxisSplit::new(node.value.shape(), axis);
            if let Some(ga) = slot(nodes, adj, a) {
                for o in 0..split.outer {
                    for i in 0..split.inner {
                        let dot: f64 = (0..split.len)
                            .map(|k| {
                                let idx = split.index(o, k, i);
                                g[idx] * y[idx]
                            })
                            .sum();
                        for k in 0..split.len {
                            let idx = split.index(o, k, i);
                            ga[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        &Op::LogSoftmax { a, axis } => {
            let split = AxisSplit::new(node.value.shape(), axis);
            if let Some(ga) = slot(nodes, adj, a) {
                for o in 0..split.outer {
                    for i in 0..split.inner {
                        let total: f64 = (0..split.len).map(|k| g[split.index(o, k, i)]).sum();
                        for k in 0..split.len {
                            let idx = split.index(o, k, i);
                            ga[idx] += g[idx] - y[idx].exp() * total;
                        }
                    }
                }
            }
        }
        Op::LayerNorm { a, inv_std } => {
            let d = *node.value.shape().last().expect("non-scalar");
            if let Some(ga) = slot(nodes, adj, *a) {
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        ga[r * d + j] += is * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
        }
        &Op::Unfold { a, width } => {
            let d = nodes[a].value.shape()[1];
            let positions = node.value.shape()[0];
            if let Some(ga) = slot(nodes, adj, a) {
                let w = width * d;
                for p in 0..positions {
                    for (dst, s) in ga[p * d..p * d + w].iter_mut().zip(&g[p * w..(p + 1) * w]) {
                        *dst += s;
                    }
                }
            }
        }
        &Op::Reshape { a } => {
            if let Some(ga) = slot(nodes, adj, a) {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi;
                }
            }
        }
        &Op::Index { a, flat } => {
            if let Some(ga) = slot(nodes, adj, a) {
                ga[flat] += g[0];
            }
        }
    }
}
