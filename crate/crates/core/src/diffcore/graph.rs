//! Reverse-mode graph over batched 2-D values.
//!
//! Every node holds a `[rows, cols]` array. Binary elementwise ops broadcast
//! size-1 axes (a `1 x k` row against `B x k`, a `B x 1` column against
//! `B x k`, or a `1 x 1` scalar against anything); gradients are summed back
//! over broadcast axes. Networks enter the graph as single [`Op::Mlp`] nodes
//! that carry their own [`MlpTape`].

use std::cell::Cell;

use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::mlp::{MlpParams, MlpTape};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Handle to a parameter set registered with a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamRef(usize);

enum Op<'p, T> {
    Constant,
    Leaf,
    Mlp {
        param: usize,
        input: NodeId,
        tape: MlpTape<'p, T>,
    },
    StopGradient,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Offset(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Clamp(NodeId, T, T),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    SumCols(NodeId),
    Mean(NodeId),
    RowNormalize(NodeId, T),
    RowDot(NodeId, NodeId),
    Concat(NodeId, NodeId),
}

struct Node<'p, T> {
    value: Array2<T>,
    op: Op<'p, T>,
    requires_grad: bool,
}

/// Gradients from one backward pass.
pub struct Gradients<T> {
    params: Vec<Option<MlpParams<T>>>,
    nodes: Vec<Option<Array2<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a registered parameter set. Parameters the root does not
    /// reach (or reaches only through stop-gradient) get exact zeros.
    pub fn param(&self, p: ParamRef) -> MlpParams<T> {
        match &self.params[p.0] {
            Some(g) => g.clone(),
            None => MlpParams::zeros(&self.shapes[p.0]),
        }
    }

    pub fn take_param(&mut self, p: ParamRef) -> MlpParams<T> {
        match self.params[p.0].take() {
            Some(g) => g,
            None => MlpParams::zeros(&self.shapes[p.0]),
        }
    }

    /// Gradient with respect to a node's value, if any flowed into it.
    pub fn node(&self, id: NodeId) -> Option<&Array2<T>> {
        self.nodes[id.0].as_ref()
    }
}

/// A recorded computation. Values are computed eagerly as nodes are added.
pub struct Graph<'p, T> {
    nodes: Vec<Node<'p, T>>,
    params: Vec<&'p MlpParams<T>>,
    single_use: bool,
    consumed: Cell<bool>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, _) => Some(b),
        (_, 1) => Some(a),
        _ => None,
    }
}

/// Sum `g` down to `shape` along broadcast axes.
fn unbroadcast<T: Scalar>(g: Array2<T>, shape: (usize, usize)) -> Array2<T> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Single-use graph: one backward pass.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            single_use: true,
            consumed: Cell::new(false),
        }
    }

    /// Graph that allows any number of backward passes (e.g. from several
    /// roots).
    pub fn replayable() -> Self {
        Graph {
            single_use: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Array2<T>, op: Op<'p, T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> T {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn constant_scalar(&mut self, x: T) -> NodeId {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Differentiable input; its gradient is reported by [`Gradients::node`].
    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn register(&mut self, params: &'p MlpParams<T>) -> ParamRef {
        self.params.push(params);
        ParamRef(self.params.len() - 1)
    }

    pub fn mlp(&mut self, p: ParamRef, input: NodeId) -> Result<NodeId> {
        let params = self.params[p.0];
        let (y, tape) = params.forward_taped(self.nodes[input.0].value.view())?;
        Ok(self.push(
            y,
            Op::Mlp {
                param: p.0,
                input,
                tape,
            },
            true,
        ))
    }

    /// Same forward value; contributes no gradient upstream.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, Op::StopGradient, false)
    }

    fn broadcast_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (ra, ca) = self.value(a).dim();
        let (rb, cb) = self.value(b).dim();
        match (broadcast_dim(ra, rb), broadcast_dim(ca, cb)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(Error::shape(what, &[ra, ca], &[rb, cb])),
        }
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(T, T) -> T,
        op: Op<'p, T>,
    ) -> Result<NodeId> {
        let shape = self.broadcast_shape(a, b, what)?;
        let va = self.value(a).broadcast(shape).expect("checked");
        let vb = self.value(b).broadcast(shape).expect("checked");
        let out = Zip::from(&va).and(&vb).map_collect(|&x, &y| f(x, y));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::shape(what, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "min")?;
        self.binary(a, b, "min", |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "max")?;
        self.binary(a, b, "max", |x, y| if x >= y { x } else { y }, Op::Max(a, b))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(T) -> T, op: Op<'p, T>) -> NodeId {
        let out = self.value(x).mapv(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -T::one())
    }

    pub fn offset(&mut self, x: NodeId, c: T) -> NodeId {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// `B x D -> B x 1`.
    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push(out, Op::SumCols(x), rg)
    }

    /// Mean over all entries, `-> 1 x 1`.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.sum() / T::of(v.len() as f64);
        let rg = self.rg(x);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(x), rg)
    }

    /// Each row divided by `max(|row|_2, eps)`.
    pub fn row_normalize(&mut self, x: NodeId, eps: T) -> NodeId {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt().max(eps);
            row.mapv_inplace(|v| v / n);
        }
        let rg = self.rg(x);
        self.push(out, Op::RowNormalize(x, eps), rg)
    }

    /// Row-wise inner product, `B x D, B x D -> B x 1`.
    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "row_dot")?;
        let out = (self.value(a) * self.value(b))
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::RowDot(a, b), rg))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, rb) = (self.value(a).nrows(), self.value(b).nrows());
        if ra != rb {
            return Err(Error::shape("concat rows", &[ra], &[rb]));
        }
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.value(root).dim() != (1, 1) {
            return Err(Error::shape("backward root", &[1, 1], self.value(root).shape()));
        }
        if self.single_use && self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..=root.0).map(|_| None).collect();
        let mut pgrads: Vec<Option<MlpParams<T>>> = self.params.iter().map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut pgrads)?;
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients {
            params: pgrads,
            nodes: grads,
            shapes: self.params.iter().map(|p| p.dims()).collect(),
        })
    }

    fn send(&self, grads: &mut [Option<Array2<T>>], to: NodeId, g: Array2<T>) {
        if !self.rg(to) {
            return;
        }
        let g = unbroadcast(g, self.value(to).dim());
        match &mut grads[to.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        node: &Node<'p, T>,
        g: &Array2<T>,
        grads: &mut [Option<Array2<T>>],
        pgrads: &mut [Option<MlpParams<T>>],
    ) -> Result<()> {
        let val = |id: NodeId| -> ArrayView2<'_, T> { self.value(id).view() };
        match &node.op {
            Op::Constant | Op::Leaf | Op::StopGradient => {}
            Op::Mlp { param, input, tape } => {
                let acc = pgrads[*param].get_or_insert_with(|| self.params[*param].zeros_like());
                let dx = tape.accumulate(g.view(), acc, self.rg(*input))?;
                if let Some(dx) = dx {
                    self.send(grads, *input, dx);
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.mapv(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.send(grads, *a, g * &val(*b));
                }
                if self.rg(*b) {
                    self.send(grads, *b, g * &val(*a));
                }
            }
            Op::Scale(x, c) => self.send(grads, *x, g.mapv(|v| v * *c)),
            Op::Offset(x) => self.send(grads, *x, g.clone()),
            Op::Exp(x) => self.send(grads, *x, g * &node.value),
            Op::Square(x) => {
                let two = T::of(2.0);
                let d = Zip::from(g).and(&val(*x)).map_collect(|&gv, &xv| gv * two * xv);
                self.send(grads, *x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let d = Zip::from(g).and(&val(*x)).map_collect(|&gv, &xv| {
                    if xv >= *lo && xv <= *hi {
                        gv
                    } else {
                        T::zero()
                    }
                });
                self.send(grads, *x, d);
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let pick_a = |xa: T, xb: T| if is_min { xa <= xb } else { xa >= xb };
                let (va, vb) = (val(*a), val(*b));
                let ga = Zip::from(g)
                    .and(&va)
                    .and(&vb)
                    .map_collect(|&gv, &xa, &xb| if pick_a(xa, xb) { gv } else { T::zero() });
                let gb = Zip::from(g)
                    .and(&va)
                    .and(&vb)
                    .map_collect(|&gv, &xa, &xb| if pick_a(xa, xb) { T::zero() } else { gv });
                self.send(grads, *a, ga);
                self.send(grads, *b, gb);
            }
            Op::SumCols(x) => {
                let shape = self.value(*x).dim();
                let d = g.broadcast(shape).expect("column broadcast").to_owned();
                self.send(grads, *x, d);
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let d = Array2::from_elem(v.dim(), g[[0, 0]] / T::of(v.len() as f64));
                self.send(grads, *x, d);
            }
            Op::RowNormalize(x, eps) => {
                let xv = val(*x);
                let mut d = Array2::zeros(xv.dim());
                for r in 0..xv.nrows() {
                    let xr = xv.row(r);
                    let yr = node.value.row(r);
                    let gr = g.row(r);
                    let norm = xr.dot(&xr).sqrt();
                    let mut dr = d.row_mut(r);
                    if norm > *eps {
                        let gy = gr.dot(&yr);
                        Zip::from(&mut dr)
                            .and(&gr)
                            .and(&yr)
                            .for_each(|o, &gv, &yv| *o = (gv - yv * gy) / norm);
                    } else {
                        Zip::from(&mut dr).and(&gr).for_each(|o, &gv| *o = gv / *eps);
                    }
                }
                self.send(grads, *x, d);
            }
            Op::RowDot(a, b) => {
                if self.rg(*a) {
                    self.send(grads, *a, &val(*b) * g);
                }
                if self.rg(*b) {
                    self.send(grads, *b, &val(*a) * g);
                }
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).ncols();
                self.send(grads, *a, g.slice(ndarray::s![.., ..ca]).to_owned());
                self.send(grads, *b, g.slice(ndarray::s![.., ca..]).to_owned());
            }
        }
        Ok(())
    }
}
