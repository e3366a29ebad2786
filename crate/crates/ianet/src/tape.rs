//! Reverse-mode autodiff tape over [`Tensor`] values.
//!
//! The tape supports the double-backward pattern this crate's training loop
//! needs: run a forward pass, backward a probe scalar to an interior feature
//! node ([`Tape::backward_to`]) without touching parameter gradients, then
//! resume the forward pass from a modified copy of that node
//! ([`Tape::reforward_from`] / [`Tape::reforward_masked`]) before the real
//! training backward ([`Tape::backward_params`]).
//!
//! Nodes are stored in construction order, so node inputs always have
//! smaller ids and a single in-order sweep is a topological replay.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec, RoiBox};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Add,
    Mul,
    Scale(f64),
    Sum,
    Relu,
    Reshape(Vec<usize>),
    Conv2d(ConvSpec),
    MaxPool2d { window: usize, stride: usize },
    RoiPool { rois: Vec<RoiBox>, out: (usize, usize) },
    Linear,
    GatherLabels(Vec<usize>),
    SoftmaxXent(Vec<usize>),
    L1Loss { weights: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::Relu => "relu",
            Op::Reshape(_) => "reshape",
            Op::Conv2d(_) => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::RoiPool { .. } => "roi_pool",
            Op::Linear => "linear",
            Op::GatherLabels(_) => "gather_labels",
            Op::SoftmaxXent(_) => "softmax_xent",
            Op::L1Loss { .. } => "l1_loss",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::Add | Op::Mul | Op::L1Loss { .. } => 2,
            Op::Conv2d(_) | Op::Linear => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
    /// Parameter gradient from the most recent `backward_params`.
    pub grad: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeSet<NodeId>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn eval_op(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::Add => {
            same_shape(inputs[0], inputs[1], "add")?;
            let mut out = inputs[0].clone();
            for (o, &b) in out.data_mut().iter_mut().zip(inputs[1].data()) {
                *o += b;
            }
            Ok(out)
        }
        Op::Mul => {
            same_shape(inputs[0], inputs[1], "mul")?;
            let mut out = inputs[0].clone();
            for (o, &b) in out.data_mut().iter_mut().zip(inputs[1].data()) {
                *o *= b;
            }
            Ok(out)
        }
        Op::Scale(c) => Ok(inputs[0].map(|v| v * c)),
        Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        Op::Relu => Ok(ops::relu(inputs[0])),
        Op::Reshape(shape) => inputs[0].reshaped(shape),
        Op::Conv2d(spec) => ops::conv2d(inputs[0], inputs[1], inputs[2], spec),
        Op::MaxPool2d { window, stride } => ops::maxpool2d(inputs[0], *window, *stride),
        Op::RoiPool { rois, out } => ops::roi_pool(inputs[0], rois, *out),
        Op::Linear => ops::linear(inputs[0], inputs[1], inputs[2]),
        Op::GatherLabels(labels) => ops::gather_labels(inputs[0], labels),
        Op::SoftmaxXent(labels) => ops::softmax_xent(inputs[0], labels),
        Op::L1Loss { weights } => ops::l1_reg_loss(inputs[0], inputs[1], weights),
    }
}

/// Cotangent per input, given the upstream cotangent at the output.
fn vjp_op(op: &Op, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
    match op {
        Op::Leaf => Ok(vec![]),
        Op::Add => Ok(vec![upstream.clone(), upstream.clone()]),
        Op::Mul => {
            let mut da = upstream.clone();
            for (o, &b) in da.data_mut().iter_mut().zip(inputs[1].data()) {
                *o *= b;
            }
            let mut db = upstream.clone();
            for (o, &a) in db.data_mut().iter_mut().zip(inputs[0].data()) {
                *o *= a;
            }
            Ok(vec![da, db])
        }
        Op::Scale(c) => Ok(vec![upstream.map(|v| v * c)]),
        Op::Sum => {
            let g = upstream.scalar_value()?;
            Ok(vec![Tensor::filled(inputs[0].shape(), g)])
        }
        Op::Relu => Ok(vec![ops::relu_backward(inputs[0], upstream)]),
        Op::Reshape(_) => Ok(vec![upstream.reshaped(inputs[0].shape())?]),
        Op::Conv2d(spec) => {
            let (di, dw, db) = ops::conv2d_backward(inputs[0], inputs[1], spec, upstream)?;
            Ok(vec![di, dw, db])
        }
        Op::MaxPool2d { window, stride } => Ok(vec![ops::maxpool2d_backward(
            inputs[0], *window, *stride, upstream,
        )?]),
        Op::RoiPool { rois, out } => {
            Ok(vec![ops::roi_pool_backward(inputs[0], rois, *out, upstream)?])
        }
        Op::Linear => {
            let (di, dw, db) = ops::linear_backward(inputs[0], inputs[1], upstream);
            Ok(vec![di, dw, db])
        }
        Op::GatherLabels(labels) => {
            Ok(vec![ops::gather_labels_backward(inputs[0], labels, upstream)])
        }
        Op::SoftmaxXent(labels) => Ok(vec![ops::softmax_xent_backward(
            inputs[0],
            labels,
            upstream.scalar_value()?,
        )]),
        Op::L1Loss { weights } => {
            let (dp, dt) = ops::l1_backward(inputs[0], inputs[1], weights, upstream.scalar_value()?);
            Ok(vec![dp, dt])
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn parameter_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.params.iter().copied()
    }

    pub fn is_parameter(&self, id: NodeId) -> bool {
        self.params.contains(&id)
    }

    /// Adds a data leaf (constant with respect to differentiation).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            op: Op::Leaf,
            inputs: vec![],
            value,
            grad: None,
        });
        id
    }

    /// Adds a leaf marked trainable: `backward_params` reports its gradient.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        let id = self.leaf(value);
        self.params.insert(id);
        id
    }

    /// Records an op, evaluates it eagerly, and checks the result is finite.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != op.arity() {
            return Err(Error::Graph(format!(
                "{} expects {} inputs, got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        for &i in inputs {
            if i.0 >= self.nodes.len() {
                return Err(Error::Graph(format!("input {i} does not exist")));
            }
        }
        let id = NodeId(self.nodes.len());
        let in_vals: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
        let value = eval_op(&op, &in_vals)
            .map_err(|e| wrap_node_err(e, id, op.name()))?;
        value
            .check_finite(&format!("node {id} ({})", op.name()))
            .map_err(|e| e)?;
        self.nodes.push(Node {
            id,
            op,
            inputs: inputs.to_vec(),
            value,
            grad: None,
        });
        Ok(id)
    }

    // Builder sugar -----------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.apply(Op::Conv2d(spec), &[x, w, b])
    }

    pub fn maxpool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        self.apply(Op::MaxPool2d { window, stride }, &[x])
    }

    pub fn roi_pool(&mut self, x: NodeId, rois: Vec<RoiBox>, out: (usize, usize)) -> Result<NodeId> {
        self.apply(Op::RoiPool { rois, out }, &[x])
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Linear, &[x, w, b])
    }

    pub fn gather_labels(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::GatherLabels(labels), &[logits])
    }

    pub fn softmax_xent(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::SoftmaxXent(labels), &[logits])
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        self.apply(Op::L1Loss { weights }, &[pred, target])
    }

    // Forward / backward -------------------------------------------------

    /// Recomputes every non-leaf node from current leaf values, in id
    /// order, and returns the value of the final node. With unchanged
    /// leaves this reproduces every node value bit-identically.
    pub fn forward(&mut self) -> Result<Tensor> {
        if self.nodes.is_empty() {
            return Err(Error::Graph("forward on an empty tape".into()));
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = {
                let node = &self.nodes[i];
                let in_vals: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j.0].value).collect();
                eval_op(&node.op, &in_vals)
                    .map_err(|e| wrap_node_err(e, node.id, node.op.name()))?
            };
            value.check_finite(&format!("node {} ({})", self.nodes[i].id, self.nodes[i].op.name()))?;
            self.nodes[i].value = value;
        }
        Ok(self.nodes.last().unwrap().value.clone())
    }

    /// Node ids from which `id` is reachable (including `id` itself).
    fn ancestors(&self, id: NodeId) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if seen[n.0] {
                continue;
            }
            seen[n.0] = true;
            stack.extend(self.nodes[n.0].inputs.iter().copied());
        }
        seen
    }

    /// One reverse sweep from a scalar `source`; returns the cotangent
    /// buffer indexed by node id.
    fn sweep(&self, source: NodeId) -> Result<Vec<Option<Tensor>>> {
        let src = &self.nodes[source.0];
        if !src.value.is_scalar() {
            return Err(Error::Graph(format!(
                "backward source {source} is not scalar (shape {:?})",
                src.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[source.0] = Some(Tensor::scalar(1.0));
        for i in (0..=source.0).rev() {
            let Some(up) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let in_vals: Vec<&Tensor> =
                node.inputs.iter().map(|&j| &self.nodes[j.0].value).collect();
            let cotangents = vjp_op(&node.op, &in_vals, &up)
                .map_err(|e| wrap_node_err(e, node.id, node.op.name()))?;
            for (&j, ct) in node.inputs.iter().zip(cotangents) {
                match &mut grads[j.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ct.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(ct),
                }
            }
        }
        Ok(grads)
    }

    /// d(source)/d(target) for a scalar `source` and an ancestor `target`.
    /// Leaves parameter gradients untouched: this is the attention-probe
    /// backward, not the training backward.
    pub fn backward_to(&self, source: NodeId, target: NodeId) -> Result<Tensor> {
        if source.0 >= self.nodes.len() || target.0 >= self.nodes.len() {
            return Err(Error::Graph("backward_to: node id out of range".into()));
        }
        let seen = self.ancestors(source);
        if !seen[target.0] || target == source {
            // target == source is allowed mathematically, but the probe
            // pattern always asks for a strict ancestor; treat identity as
            // valid and return ones.
            if target == source {
                return Ok(Tensor::ones(self.nodes[target.0].value.shape()));
            }
            return Err(Error::Graph(format!(
                "backward_to: {target} is not an ancestor of {source}"
            )));
        }
        let grads = self.sweep(source)?;
        Ok(grads[target.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.nodes[target.0].value.shape())))
    }

    /// Training backward: gradient of a scalar `loss` for every parameter
    /// node. Parameters the loss does not depend on get zero gradients.
    /// Each call recomputes from scratch; summing loss terms before the
    /// call accumulates their gradients.
    pub fn backward_params(&mut self, loss: NodeId) -> Result<BTreeMap<NodeId, Tensor>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph("backward_params: node id out of range".into()));
        }
        let grads = self.sweep(loss)?;
        let mut out = BTreeMap::new();
        for &p in &self.params {
            let g = grads[p.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[p.0].value.shape()));
            g.check_finite(&format!("gradient of parameter {p}"))?;
            self.nodes[p.0].grad = Some(g.clone());
            out.insert(p, g);
        }
        Ok(out)
    }

    /// New tape in which `node` becomes a plain data leaf holding
    /// `replacement` and every descendant is recomputed. No gradient flows
    /// from the replaced node toward its former inputs.
    pub fn reforward_from(&self, node: NodeId, replacement: &Tensor) -> Result<Tape> {
        if node.0 >= self.nodes.len() {
            return Err(Error::Graph("reforward_from: node id out of range".into()));
        }
        same_shape(&self.nodes[node.0].value, replacement, "reforward_from replacement")?;
        replacement.check_finite("reforward_from replacement")?;
        let mut tape = self.clone();
        tape.nodes[node.0].op = Op::Leaf;
        tape.nodes[node.0].inputs.clear();
        tape.nodes[node.0].value = replacement.clone();
        tape.params.remove(&node);
        let mut dirty = vec![false; tape.nodes.len()];
        dirty[node.0] = true;
        for i in node.0 + 1..tape.nodes.len() {
            if matches!(tape.nodes[i].op, Op::Leaf) {
                continue;
            }
            if !tape.nodes[i].inputs.iter().any(|j| dirty[j.0]) {
                continue;
            }
            let value = {
                let n = &tape.nodes[i];
                let in_vals: Vec<&Tensor> = n.inputs.iter().map(|&j| &tape.nodes[j.0].value).collect();
                eval_op(&n.op, &in_vals).map_err(|e| wrap_node_err(e, n.id, n.op.name()))?
            };
            value.check_finite(&format!("node {} ({})", tape.nodes[i].id, tape.nodes[i].op.name()))?;
            tape.nodes[i].value = value;
            dirty[i] = true;
        }
        Ok(tape)
    }

    /// New tape in which every consumer of `node` reads `node * mask`
    /// instead (`mask` entering as a constant leaf), with the affected
    /// downstream subgraph re-derived. Returns the new tape and the map
    /// from affected old node ids to their refined counterparts; `node`
    /// itself maps to the product node.
    ///
    /// Unlike [`Tape::reforward_from`], the training backward flows through
    /// the product: the original feature receives the upstream gradient
    /// scaled elementwise by the (constant) mask, and continues into the
    /// layers that produced it.
    pub fn reforward_masked(
        &self,
        node: NodeId,
        mask: &Tensor,
    ) -> Result<(Tape, BTreeMap<NodeId, NodeId>)> {
        if node.0 >= self.nodes.len() {
            return Err(Error::Graph("reforward_masked: node id out of range".into()));
        }
        same_shape(&self.nodes[node.0].value, mask, "reforward_masked mask")?;
        mask.check_finite("reforward_masked mask")?;
        let mut tape = self.clone();
        let mask_node = tape.leaf(mask.clone());
        let refined = tape.mul(node, mask_node)?;
        let mut remap = BTreeMap::new();
        remap.insert(node, refined);
        let affected: Vec<usize> = {
            let mut dirty = vec![false; self.nodes.len()];
            dirty[node.0] = true;
            let mut ids = Vec::new();
            for i in node.0 + 1..self.nodes.len() {
                if self.nodes[i].inputs.iter().any(|j| dirty[j.0]) {
                    dirty[i] = true;
                    ids.push(i);
                }
            }
            ids
        };
        for i in affected {
            let op = self.nodes[i].op.clone();
            let inputs: Vec<NodeId> = self.nodes[i]
                .inputs
                .iter()
                .map(|j| remap.get(j).copied().unwrap_or(*j))
                .collect();
            let new_id = tape.apply(op, &inputs)?;
            remap.insert(NodeId(i), new_id);
        }
        Ok((tape, remap))
    }
}

fn wrap_node_err(e: Error, id: NodeId, op: &str) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("node {id} ({op}): {m}")),
        Error::InvalidArg(m) => Error::InvalidArg(format!("node {id} ({op}): {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_tape_returns_leaf() {
        let mut tape = Tape::new();
        tape.leaf(t1(&[1.0, 2.0]));
        assert_eq!(tape.forward().unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn elementwise_add() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]));
        let y = tape.leaf(t1(&[3.0, 4.0]));
        tape.add(x, y).unwrap();
        assert_eq!(tape.forward().unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn relu_of_product_chain() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[-1.0, 2.0]));
        let y = tape.leaf(t1(&[3.0, 3.0]));
        let m = tape.mul(x, y).unwrap();
        let r = tape.relu(m).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 6.0]);
    }

    #[test]
    fn apply_names_offending_node_on_shape_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]));
        let y = tape.leaf(t1(&[1.0, 2.0, 3.0]));
        let err = tape.add(x, y).unwrap_err();
        assert!(err.to_string().contains("node #2"), "{err}");
    }

    #[test]
    fn apply_rejects_non_finite_results() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1e308]));
        let y = tape.leaf(t1(&[1e308]));
        // 1e308 + 1e308 overflows to +inf
        assert!(tape.add(x, y).is_err());
    }

    #[test]
    fn backward_to_linear_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward_to(s, x).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_to_square_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]));
        let xx = tape.mul(x, x).unwrap();
        let s = tape.sum(xx).unwrap();
        let g = tape.backward_to(s, x).unwrap();
        assert_eq!(g.data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_to_relu_matches_finite_differences() {
        // 2x2 map with one negative entry: zero grad at that entry.
        let vals = [0.7, -0.4, 1.2, 0.1];
        let build = |data: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(vec![2, 2], data.to_vec()).unwrap());
            let r = tape.relu(x).unwrap();
            let s = tape.sum(r).unwrap();
            tape.value(s).scalar_value().unwrap()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vals.to_vec()).unwrap());
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.backward_to(s, x).unwrap();
        assert_eq!(g.data()[1], 0.0);
        let h = 1e-6;
        for i in 0..4 {
            let mut plus = vals;
            plus[i] += h;
            let mut minus = vals;
            minus[i] -= h;
            let fd = (build(&plus) - build(&minus)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6, "entry {i}");
        }
    }

    #[test]
    fn backward_to_rejects_non_scalar_source() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert!(tape.backward_to(y, x).is_err());
    }

    #[test]
    fn backward_to_rejects_non_ancestor() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0]));
        let y = tape.leaf(t1(&[2.0]));
        let s = tape.sum(x).unwrap();
        assert!(tape.backward_to(s, y).is_err());
    }

    #[test]
    fn backward_params_linear_case() {
        let mut tape = Tape::new();
        let w = tape.parameter(t1(&[0.5, -0.5]));
        let x = tape.leaf(t1(&[2.0, 3.0]));
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.sum(wx).unwrap();
        let grads = tape.backward_params(loss).unwrap();
        assert_eq!(grads[&w].data(), &[2.0, 3.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.parameter(t1(&[0.5]));
        let p = tape.parameter(t1(&[7.0, 8.0]));
        let loss = tape.sum(w).unwrap();
        let grads = tape.backward_params(loss).unwrap();
        assert_eq!(grads[&p].data(), &[0.0, 0.0]);
    }

    #[test]
    fn probe_backward_does_not_touch_parameter_grads() {
        let mut tape = Tape::new();
        let w = tape.parameter(t1(&[1.0, 2.0]));
        let x = tape.leaf(t1(&[3.0, 4.0]));
        let wx = tape.mul(w, x).unwrap();
        let s = tape.sum(wx).unwrap();
        let _ = tape.backward_to(s, wx).unwrap();
        assert!(tape.node(w).grad.is_none());
        let grads = tape.backward_params(s).unwrap();
        let again = {
            let mut t2 = Tape::new();
            let w2 = t2.parameter(t1(&[1.0, 2.0]));
            let x2 = t2.leaf(t1(&[3.0, 4.0]));
            let wx2 = t2.mul(w2, x2).unwrap();
            let s2 = t2.sum(wx2).unwrap();
            t2.backward_params(s2).unwrap()[&w2].clone()
        };
        assert!(grads[&w].bits_eq(&again));
    }

    #[test]
    fn forward_replay_is_bit_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[0.1, -0.7, 0.33]));
        let y = tape.leaf(t1(&[1.5, 2.5, -3.5]));
        let m = tape.mul(x, y).unwrap();
        let r = tape.relu(m).unwrap();
        tape.sum(r).unwrap();
        let a = tape.forward().unwrap();
        let b = tape.forward().unwrap();
        assert!(a.bits_eq(&b));
    }

    #[test]
    fn reforward_from_identity_keeps_downstream() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, -2.0, 3.0]));
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let orig = tape.value(s).clone();
        let replayed = tape.reforward_from(r, &tape.value(r).clone()).unwrap();
        assert!(replayed.value(s).bits_eq(&orig));
    }

    #[test]
    fn reforward_from_zeros_through_linear_head() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.leaf(Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, b).unwrap();
        let replaced = tape.reforward_from(x, &Tensor::zeros(&[1, 3])).unwrap();
        assert!(replaced.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reforward_masked_values_match_leaf_replacement() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, -2.0, 3.0, 0.5]));
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let mask = t1(&[1.0, 0.0, 0.0, 1.0]);
        let masked_vals = {
            let mut prod = tape.value(r).clone();
            for (p, m) in prod.data_mut().iter_mut().zip(mask.data()) {
                *p *= m;
            }
            prod
        };
        let via_leaf = tape.reforward_from(r, &masked_vals).unwrap();
        let (via_mask, remap) = tape.reforward_masked(r, &mask).unwrap();
        assert!(via_leaf.value(s).bits_eq(via_mask.value(remap[&s])));
    }

    #[test]
    fn reforward_masked_scales_gradient_by_mask() {
        // loss = sum(relu(w * x) * mask): d loss / d w = x * mask on the
        // active side.
        let mut tape = Tape::new();
        let w = tape.parameter(t1(&[1.0, 2.0, 3.0]));
        let x = tape.leaf(t1(&[2.0, 2.0, 2.0]));
        let wx = tape.mul(w, x).unwrap();
        let r = tape.relu(wx).unwrap();
        let loss = tape.sum(r).unwrap();
        let mask = t1(&[1.0, 0.0, 0.5]);
        let (mut masked, remap) = tape.reforward_masked(r, &mask).unwrap();
        let grads = masked.backward_params(remap[&loss]).unwrap();
        assert_eq!(grads[&w].data(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn reforward_masked_with_ones_reproduces_baseline_grads() {
        let mut tape = Tape::new();
        let w = tape.parameter(t1(&[0.3, -1.2, 0.8]));
        let x = tape.leaf(t1(&[1.0, 2.0, -1.5]));
        let wx = tape.mul(w, x).unwrap();
        let r = tape.relu(wx).unwrap();
        let loss = tape.sum(r).unwrap();
        let baseline = tape.clone().backward_params(loss).unwrap()[&w].clone();
        let (mut masked, remap) = tape.reforward_masked(r, &Tensor::ones(&[3])).unwrap();
        let got = masked.backward_params(remap[&loss]).unwrap()[&w].clone();
        assert!(baseline.bits_eq(&got));
    }

    #[test]
    fn backward_is_linear_in_the_source() {
        // grad of (a*f + b*g) == a*grad(f) + b*grad(g)
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[0.5, -1.5, 2.5]));
        let f = {
            let xx = tape.mul(x, x).unwrap();
            tape.sum(xx).unwrap()
        };
        let g = {
            let r = tape.relu(x).unwrap();
            tape.sum(r).unwrap()
        };
        let (a, b) = (2.0, -3.0);
        let af = tape.scale(f, a).unwrap();
        let bg = tape.scale(g, b).unwrap();
        let combo = tape.add(af, bg).unwrap();
        let grad_combo = tape.backward_to(combo, x).unwrap();
        let gf = tape.backward_to(f, x).unwrap();
        let gg = tape.backward_to(g, x).unwrap();
        for i in 0..3 {
            let want = a * gf.data()[i] + b * gg.data()[i];
            assert!((grad_combo.data()[i] - want).abs() < 1e-12);
        }
    }
}
