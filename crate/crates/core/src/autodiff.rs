//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is a Wengert list: every operation on a [`Var`] appends a node
//! holding its op, parent ids and output value. Parents always precede
//! children, so [`Var::backward`] is a single reverse sweep. Nodes only carry
//! gradients when at least one ancestor is a gradient-requiring leaf.
//!
//! ```
//! use granola_core::autodiff::Tape;
//! use granola_core::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
//! let y = x.relu().sum_all();
//! let grads = y.backward().unwrap();
//! assert_eq!(grads.get(x).data(), &[0.0, 1.0]);
//! ```

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric neighbor lists over flattened node indices.
///
/// Row `v` lists the neighbors of flattened node `v`. Used by the
/// aggregation op; symmetry makes the op self-adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl NeighborLists {
    /// Build from per-node neighbor vectors. Caller guarantees symmetry.
    pub fn from_adjacency(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend(l);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_directed_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// `out[v, :] = sum_{u in N(v)} x[u, :]` with `x` viewed as `[num_nodes, C]`.
    pub fn aggregate(&self, x: &Tensor) -> Result<Tensor> {
        let rows = self.num_nodes();
        if rows == 0 || x.len() % rows != 0 {
            return Err(Error::shape("aggregate", x.shape(), &[rows]));
        }
        let c = x.len() / rows;
        let src = x.data();
        let mut out = vec![0.0; x.len()];
        for v in 0..rows {
            let dst = &mut out[v * c..(v + 1) * c];
            for &u in self.neighbors(v) {
                for (d, s) in dst.iter_mut().zip(&src[u * c..(u + 1) * c]) {
                    *d += s;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Powf(NodeId, f64),
    ClampMin(NodeId, f64),
    Sum(NodeId, Vec<usize>),
    Reshape(NodeId, Vec<usize>),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    Aggregate(NodeId, Arc<NeighborLists>),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Offset(a, _) | Relu(a) | Abs(a) | Sqrt(a) | Exp(a)
            | Powf(a, _) | ClampMin(a, _) | Sum(a, _) | Reshape(a, _) | Slice(a, _, _)
            | Aggregate(a, _) => vec![*a],
            Concat(parts) => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Neg(..) => "neg",
            Scale(..) => "scale",
            Offset(..) => "offset",
            MatMul(..) => "matmul",
            Relu(..) => "relu",
            Abs(..) => "abs",
            Sqrt(..) => "sqrt",
            Exp(..) => "exp",
            Powf(..) => "powf",
            ClampMin(..) => "clamp_min",
            Sum(..) => "sum",
            Reshape(..) => "reshape",
            Concat(..) => "concat",
            Slice(..) => "slice",
            Aggregate(..) => "aggregate",
        }
    }
}

/// Forward kernel for a recorded op; shared by recording and replay.
fn eval(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    use Op::*;
    let x = |i: usize| inputs[i];
    Ok(match op {
        Leaf => unreachable!("leaves are not evaluated"),
        Add(..) => x(0).zip_map(x(1), |a, b| a + b)?,
        Sub(..) => x(0).zip_map(x(1), |a, b| a - b)?,
        Mul(..) => x(0).zip_map(x(1), |a, b| a * b)?,
        Div(..) => x(0).zip_map(x(1), |a, b| a / b)?,
        Neg(_) => x(0).map(|a| -a),
        Scale(_, s) => x(0).scale(*s),
        Offset(_, s) => x(0).map(|a| a + s),
        MatMul(..) => x(0).matmul(x(1))?,
        Relu(_) => x(0).map(|a| if a > 0.0 { a } else { 0.0 }),
        Abs(_) => x(0).map(f64::abs),
        Sqrt(_) => x(0).map(f64::sqrt),
        Exp(_) => x(0).map(f64::exp),
        Powf(_, p) => x(0).map(|a| a.powf(*p)),
        ClampMin(_, lo) => x(0).map(|a| if a > *lo { a } else { *lo }),
        Sum(_, axes) => x(0).sum_keepdim(axes)?,
        Reshape(_, shape) => x(0).reshape(shape.clone())?,
        Concat(_) => Tensor::concat_last(inputs)?,
        Slice(_, start, width) => x(0).slice_last(*start, *width)?,
        Aggregate(_, adj) => adj.aggregate(x(0))?,
    })
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
    requires_grad: bool,
}

/// Recording of a forward computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    kink_margin: Cell<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            kink_margin: Cell::new(f64::INFINITY),
        }
    }

    /// A gradient-requiring leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, true)
    }

    /// A constant: participates in the forward pass, receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest nonzero `|x|` seen at a ReLU or abs input since the tape was
    /// created. Exact zeros are skipped: they come from masked padding, which
    /// no perturbation moves.
    ///
    /// Finite-difference checks are only meaningful when this exceeds the
    /// probe step.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.get()
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self,
            id: NodeId(nodes.len() - 1),
        }
    }

    fn record(&self, op: Op) -> Result<Var<'_>> {
        let parents = op.parents();
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let vals: Vec<Rc<Tensor>> = parents.iter().map(|p| nodes[p.0].value.clone()).collect();
            let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
            if matches!(op, Op::Relu(_) | Op::Abs(_)) {
                let m = refs[0]
                    .data()
                    .iter()
                    .filter(|v| **v != 0.0)
                    .fold(f64::INFINITY, |m, v| m.min(v.abs()));
                self.kink_margin.set(self.kink_margin.get().min(m));
            }
            let value = eval(&op, &refs)?;
            let rg = parents.iter().any(|p| nodes[p.0].requires_grad);
            (value, rg)
        };
        Ok(self.push(op, value, requires_grad))
    }

    fn value(&self, id: NodeId) -> Rc<Tensor> {
        self.nodes.borrow()[id.0].value.clone()
    }

    /// Re-run every recorded op from its parents' stored values and report
    /// whether each output reproduces bit-for-bit. Also checks that parents
    /// precede children.
    pub fn replay_matches(&self) -> bool {
        let nodes = self.nodes.borrow();
        nodes.iter().enumerate().all(|(i, node)| {
            if matches!(node.op, Op::Leaf) {
                return true;
            }
            let parents = node.op.parents();
            if parents.iter().any(|p| p.0 >= i) {
                return false;
            }
            let refs: Vec<&Tensor> = parents.iter().map(|p| nodes[p.0].value.as_ref()).collect();
            match eval(&node.op, &refs) {
                Ok(v) => {
                    v.shape() == node.value.shape()
                        && v.data()
                            .iter()
                            .zip(node.value.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                }
                Err(_) => false,
            }
        })
    }

    fn backward_from(&self, out: NodeId) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[out.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                nodes[out.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::ones(nodes[out.0].value.shape().to_vec()));

        for i in (0..=out.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |id: &NodeId| nodes[id.0].value.clone();
            let mut acc = |id: NodeId, contribution: Tensor| -> Result<()> {
                if !nodes[id.0].requires_grad {
                    return Ok(());
                }
                let shape = nodes[id.0].value.shape().to_vec();
                let contribution = contribution.reduce_to(&shape)?;
                match &mut grads[id.0] {
                    Some(existing) => {
                        for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                            *e += c;
                        }
                    }
                    slot => *slot = Some(contribution),
                }
                Ok(())
            };
            use Op::*;
            match &node.op {
                Leaf => {}
                Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Sub(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g.map(|v| -v))?;
                }
                Mul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    acc(*a, g.zip_map(&vb, |g, y| g * y)?)?;
                    acc(*b, g.zip_map(&va, |g, x| g * x)?)?;
                }
                Div(a, b) => {
                    let vb = val(b);
                    acc(*a, g.zip_map(&vb, |g, y| g / y)?)?;
                    // d(x/y)/dy = -x/y^2 = -out/y
                    let gy = g.zip_map(&node.value, |g, o| g * o)?;
                    acc(*b, gy.zip_map(&vb, |t, y| -t / y)?)?;
                }
                Neg(a) => acc(*a, g.map(|v| -v))?,
                Scale(a, s) => acc(*a, g.scale(*s))?,
                Offset(a, _) => acc(*a, g)?,
                MatMul(a, b) => {
                    let (va, vb) = (val(a), val(b));
                    acc(*a, g.matmul(&vb.transpose2()?)?)?;
                    acc(*b, va.transpose2()?.matmul(&g)?)?;
                }
                Relu(a) => {
                    let va = val(a);
                    acc(*a, g.zip_map(&va, |g, x| if x > 0.0 { g } else { 0.0 })?)?;
                }
                Abs(a) => {
                    let va = val(a);
                    acc(*a, g.zip_map(&va, |g, x| g * sign(x))?)?;
                }
                Sqrt(a) => {
                    acc(*a, g.zip_map(&node.value, |g, s| 0.5 * g / s)?)?;
                }
                Exp(a) => {
                    acc(*a, g.zip_map(&node.value, |g, e| g * e)?)?;
                }
                Powf(a, p) => {
                    let va = val(a);
                    let p = *p;
                    acc(*a, g.zip_map(&va, |g, x| g * p * x.powf(p - 1.0))?)?;
                }
                ClampMin(a, lo) => {
                    let va = val(a);
                    let lo = *lo;
                    acc(*a, g.zip_map(&va, |g, x| if x > lo { g } else { 0.0 })?)?;
                }
                Sum(a, _) => {
                    let shape = nodes[a.0].value.shape().to_vec();
                    acc(*a, g.expand(&shape)?)?;
                }
                Reshape(a, _) => {
                    let shape = nodes[a.0].value.shape().to_vec();
                    acc(*a, g.reshape(shape)?)?;
                }
                Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = *nodes[p.0].value.shape().last().unwrap();
                        acc(*p, g.slice_last(start, w)?)?;
                        start += w;
                    }
                }
                Slice(a, start, width) => {
                    let shape = nodes[a.0].value.shape().to_vec();
                    let c = *shape.last().unwrap();
                    let mut full = Tensor::zeros(shape);
                    let rows = full.len() / c;
                    let gd = g.data();
                    let fd = full.data_mut();
                    for r in 0..rows {
                        fd[r * c + start..r * c + start + width]
                            .copy_from_slice(&gd[r * width..(r + 1) * width]);
                    }
                    acc(*a, full)?;
                }
                // Symmetric adjacency: the adjoint of aggregation is itself.
                Aggregate(a, adj) => acc(*a, adj.aggregate(&g)?)?,
            }
        }

        let mut map = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if matches!(nodes[i].op, Op::Leaf) {
                    map.insert(NodeId(i), g);
                }
            }
        }
        let shapes = nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect::<Vec<_>>();
        Ok(Gradients { map, shapes })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradients of a scalar output with respect to tape leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the output.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        self.get_id(v.id)
    }

    pub fn get_id(&self, id: NodeId) -> Tensor {
        self.map
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.0].clone()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id.0];
        write!(f, "Var#{}({} {:?})", self.id.0, node.op.name(), node.value.shape())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id.0].requires_grad
    }

    fn unary(self, op: Op) -> Var<'t> {
        self.tape
            .record(op)
            .expect("unary kernels are shape-preserving")
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Div(self.id, other.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::MatMul(self.id, other.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s))
    }

    pub fn offset(self, s: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id, s))
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(Op::Powf(self.id, p))
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self).expect("self-product always broadcasts")
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.unary(Op::ClampMin(self.id, lo))
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_keepdim(self, axes: &[usize]) -> Result<Var<'t>> {
        self.tape.record(Op::Sum(self.id, axes.to_vec()))
    }

    pub fn sum_all(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        let s = self.sum_keepdim(&axes).expect("all axes are valid");
        s.reshape(vec![1]).expect("one element")
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        self.tape.record(Op::Reshape(self.id, shape.into()))
    }

    pub fn slice_last(self, start: usize, width: usize) -> Result<Var<'t>> {
        self.tape.record(Op::Slice(self.id, start, width))
    }

    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of nothing"))?;
        first
            .tape
            .record(Op::Concat(parts.iter().map(|p| p.id).collect()))
    }

    pub fn aggregate(self, adj: &Arc<NeighborLists>) -> Result<Var<'t>> {
        self.tape.record(Op::Aggregate(self.id, adj.clone()))
    }

    /// `[.., k] x [k, n]`: matmul applied to the trailing axis of a tensor
    /// of any rank.
    pub fn linear(self, weight: Var<'t>) -> Result<Var<'t>> {
        let shape = self.shape();
        let k = *shape.last().unwrap();
        let wshape = weight.shape();
        if wshape.len() != 2 || wshape[0] != k {
            return Err(Error::shape("linear", &shape, &wshape));
        }
        let rows = shape.iter().product::<usize>() / k.max(1);
        let flat = self.reshape(vec![rows, k])?;
        let out = flat.matmul(weight)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = wshape[1];
        out.reshape(out_shape)
    }

    pub fn backward(self) -> Result<Gradients> {
        self.tape.backward_from(self.id)
    }
}

/// Which statistic [`reduce`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Biased variance: divides by the element count.
    Var,
}

/// Reduce `x` over `axes`, removing them from the result shape.
pub fn reduce<'t>(x: Var<'t>, axes: &[usize], kind: ReduceKind) -> Result<Var<'t>> {
    let shape = x.shape();
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape("reduce", &shape, axes));
        }
    }
    let count: usize = axes.iter().map(|&a| shape[a]).product();
    if axes.is_empty() || count == 0 {
        return Err(Error::DegenerateReduction(format!(
            "reducing {shape:?} over {axes:?} covers no elements"
        )));
    }
    let out_shape: Vec<usize> = {
        let kept: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        if kept.is_empty() {
            vec![1]
        } else {
            kept
        }
    };
    let inv = 1.0 / count as f64;
    let kept = match kind {
        ReduceKind::Sum => x.sum_keepdim(axes)?,
        ReduceKind::Mean => x.sum_keepdim(axes)?.scale(inv),
        ReduceKind::Var => {
            let mean = x.sum_keepdim(axes)?.scale(inv);
            x.sub(mean)?.square().sum_keepdim(axes)?.scale(inv)
        }
    };
    kept.reshape(out_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.3, -2.0, 5.0]));
        let g = x.sum_all().backward().unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let g = x.relu().sum_all().backward().unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn non_scalar_backward_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(x.relu().backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[2, 2], &[1.0; 4]));
        let g = x.square().sum_all().backward().unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(vec![2, 2]));
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn mean_and_biased_variance() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[1.0, 3.0]));
        assert_eq!(reduce(x, &[0], ReduceKind::Mean).unwrap().value().item(), 2.0);
        assert_eq!(reduce(x, &[0], ReduceKind::Var).unwrap().value().item(), 1.0);
    }

    #[test]
    fn empty_reduction_is_degenerate() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![2, 0]));
        assert!(matches!(
            reduce(x, &[1], ReduceKind::Mean),
            Err(Error::DegenerateReduction(_))
        ));
    }

    #[test]
    fn broadcast_gradient_reduces_to_operand_shape() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(t(&[1, 3], &[1.0, 1.0, 2.0]));
        let y = a.mul(b).unwrap().sum_all();
        let g = y.backward().unwrap();
        assert_eq!(g.get(b).data(), &[5.0, 7.0, 9.0]);
        assert_eq!(g.get(a).data(), &[1.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn aggregation_sums_neighbors() {
        // path 0-1-2
        let adj = Arc::new(NeighborLists::from_adjacency(vec![vec![1], vec![0, 2], vec![1]]));
        let tape = Tape::new();
        let x = tape.leaf(t(&[3, 1], &[1.0, 10.0, 100.0]));
        let y = x.aggregate(&adj).unwrap();
        assert_eq!(y.value().data(), &[10.0, 101.0, 10.0]);
        let w = tape.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let g = y.mul(w).unwrap().sum_all().backward().unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0, 2.0]);
    }

    #[test]
    fn replay_is_bit_exact() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[0.1, -0.7, 2.3, 1.1]));
        let w = tape.leaf(t(&[2, 2], &[0.5, 0.25, -1.5, 3.0]));
        let h = x.matmul(w).unwrap().relu().offset(1e-3).sqrt();
        let _ = reduce(h, &[0], ReduceKind::Var).unwrap();
        assert!(tape.replay_matches());
    }
}
