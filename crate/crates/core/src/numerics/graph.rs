//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its computed value, so nodes are
//! stored in topological order by construction. The backward pass walks the
//! node list once in reverse.

use super::tensor::Broadcast;
use super::{NumericsError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    MatMul(Var, Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    SumRows(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded primitive operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = va.broadcast_kind(vb);
        let out = va.add(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b, kind), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = va.broadcast_kind(vb);
        let out = va.sub(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b, kind), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = va.broadcast_kind(vb);
        let out = va.mul(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b, kind), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Row sums of an `n × m` node, as a length-`n` vector.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_rows();
        let rg = self.rg(a);
        self.push(out, Op::SumRows(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice_cols(start, end);
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start, end), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).concat_cols(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatCols(a, b), rg)
    }

    /// Back-propagates from a scalar `output`; returns the adjoint of every
    /// node that depends (transitively) on a parameter leaf.
    fn backward(&self, output: Var) -> Result<Vec<Option<Tensor>>, NumericsError> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(NumericsError::NonScalarOutput {
                shape: out.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b, kind) => {
                    self.accumulate(&mut adj, a, || g.clone());
                    let shape = self.value(b).shape().to_vec();
                    self.accumulate(&mut adj, b, || g.reduce_to(kind, &shape));
                }
                Op::Sub(a, b, kind) => {
                    self.accumulate(&mut adj, a, || g.clone());
                    let shape = self.value(b).shape().to_vec();
                    self.accumulate(&mut adj, b, || g.reduce_to(kind, &shape).scale(-1.0));
                }
                Op::Mul(a, b, kind) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    self.accumulate(&mut adj, a, || g.mul(vb));
                    self.accumulate(&mut adj, b, || g.mul(va).reduce_to(kind, vb.shape()));
                }
                Op::Scale(a, c) => self.accumulate(&mut adj, a, || g.scale(c)),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    self.accumulate(&mut adj, a, || g.matmul_nt(vb));
                    self.accumulate(&mut adj, b, || va.matmul_tn(&g));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.accumulate(&mut adj, a, || g.zip(y, |gi, yi| gi * (1.0 - yi * yi)));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    self.accumulate(&mut adj, a, || g.mul(y));
                }
                Op::Log(a) => {
                    let x = self.value(a);
                    self.accumulate(&mut adj, a, || g.zip(x, |gi, xi| gi / xi));
                }
                Op::Sum(a) => {
                    let shape = self.value(a).shape().to_vec();
                    let gv = g.item();
                    self.accumulate(&mut adj, a, || Tensor::full(&shape, gv));
                }
                Op::SumRows(a) => {
                    let va = self.value(a);
                    let c = va.cols();
                    self.accumulate(&mut adj, a, || {
                        let data = (0..va.len()).map(|k| g.data()[k / c]).collect();
                        Tensor::from_parts(va.shape().to_vec(), data)
                    });
                }
                Op::SliceCols(a, start, end) => {
                    let va = self.value(a);
                    self.accumulate(&mut adj, a, || {
                        let c = va.cols();
                        let w = end - start;
                        let mut full = Tensor::zeros(va.shape());
                        for (r, gr) in g.data().chunks(w).enumerate() {
                            full.data_mut()[r * c + start..r * c + end].copy_from_slice(gr);
                        }
                        full
                    });
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(a).cols();
                    let cb = self.value(b).cols();
                    let sa = self.value(a).shape().to_vec();
                    let sb = self.value(b).shape().to_vec();
                    self.accumulate(&mut adj, a, || {
                        g.slice_cols(0, ca).reshape(sa.clone()).expect("concat lhs shape")
                    });
                    self.accumulate(&mut adj, b, || {
                        g.slice_cols(ca, ca + cb)
                            .reshape(sb.clone())
                            .expect("concat rhs shape")
                    });
                }
            }
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
            }
        }
        Ok(adj)
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], target: Var, g: impl FnOnce() -> Tensor) {
        if !self.rg(target) {
            return;
        }
        let g = g();
        match &mut adj[target.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients of scalar `output` with respect to each of `params`, in order.
/// Parameters the output does not depend on get a zero tensor.
pub fn grad(graph: &Graph, output: Var, params: &[Var]) -> Result<Vec<Tensor>, NumericsError> {
    for &p in params {
        if p.0 >= graph.len() {
            return Err(NumericsError::UnknownVar(p.0));
        }
        if !graph.is_leaf(p) {
            return Err(NumericsError::NotALeaf(p.0));
        }
    }
    let adj = graph.backward(output)?;
    Ok(params
        .iter()
        .map(|&p| {
            adj.get(p.0)
                .and_then(Clone::clone)
                .unwrap_or_else(|| Tensor::zeros(graph.value(p).shape()))
        })
        .collect())
}
