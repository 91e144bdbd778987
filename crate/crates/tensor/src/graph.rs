//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably for one forward pass. Every
//! call to [`Graph::param`] creates a fresh leaf, so a parameter used three
//! times reports three gradient contributions after [`Graph::backward`].

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom, GroupStats};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

enum Op<T> {
    Input { track: bool },
    Param(ParamId),
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, geom: ConvGeom },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    GroupNorm { x: NodeId, gamma: NodeId, beta: NodeId, groups: usize, stats: GroupStats<T> },
    Pool { x: NodeId },
    Resize { x: NodeId },
    Concat { xs: Vec<NodeId> },
    Clamp { x: NodeId, lo: T, hi: T },
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    pub params: ParamGrads<T>,
    inputs: BTreeMap<NodeId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient reaching a tracked input leaf (see [`Graph::input_tracked`]).
    pub fn input(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.inputs.get(&id)
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph { store, nodes: Vec::new() }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_of(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.value(*p),
        }
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.value(id).shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input { track: false }, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients::input`].
    pub fn input_tracked(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input { track: true }, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, pad: usize) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.c() != ws.c() || ws.h() != ws.w() {
            return Err(TensorError::Mismatch { op: "conv2d", a: xs, b: ws });
        }
        if xs.h() + 2 * pad < ws.h() || xs.w() + 2 * pad < ws.w() || stride == 0 {
            return Err(TensorError::Invalid { op: "conv2d", msg: format!("kernel {} larger than padded input {xs}", ws.h()) });
        }
        if let Some(b) = b {
            if self.shape(b).numel() != ws.n() {
                return Err(TensorError::Mismatch { op: "conv2d bias", a: ws, b: self.shape(b) });
            }
        }
        let geom = ConvGeom { stride, pad };
        let out = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom);
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.grad_of(&deps);
        Ok(self.push(out, Op::Conv { x, w, b, geom }, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out_shape = self.shape(a).broadcast(&self.shape(b))?;
        let out = kernels::broadcast_binary(self.value(a), self.value(b), out_shape, |x, y| x + y);
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    /// Sum of several same-shape nodes, left to right.
    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = xs.split_first().ok_or(TensorError::Empty)?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out_shape = self.shape(a).broadcast(&self.shape(b))?;
        let out = kernels::broadcast_binary(self.value(a), self.value(b), out_shape, |x, y| x * y);
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.grad_of(&[x]);
        self.push(out, Op::Relu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        let ng = self.grad_of(&[x]);
        self.push(out, Op::Sigmoid { x }, ng)
    }

    pub fn group_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, groups: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        if groups == 0 || !xs.c().is_multiple_of(groups) {
            return Err(TensorError::Invalid { op: "group_norm", msg: format!("{} channels not divisible into {groups} groups", xs.c()) });
        }
        if self.shape(gamma).numel() != xs.c() || self.shape(beta).numel() != xs.c() {
            return Err(TensorError::Mismatch { op: "group_norm affine", a: xs, b: self.shape(gamma) });
        }
        let (out, stats) = kernels::group_norm(self.value(x), self.value(gamma), self.value(beta), groups, T::of(1e-5));
        let ng = self.grad_of(&[x, gamma, beta]);
        Ok(self.push(out, Op::GroupNorm { x, gamma, beta, groups, stats }, ng))
    }

    /// Adaptive average pooling to `oh x ow`.
    pub fn avg_pool(&mut self, x: NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        if oh == 0 || ow == 0 || oh > xs.h() || ow > xs.w() {
            return Err(TensorError::Invalid { op: "avg_pool", msg: format!("cannot pool {xs} to {oh}x{ow}") });
        }
        let out = kernels::adaptive_avg_pool(self.value(x), oh, ow);
        let ng = self.grad_of(&[x]);
        Ok(self.push(out, Op::Pool { x }, ng))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.avg_pool(x, 1, 1)
    }

    pub fn resize(&mut self, x: NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        if oh == 0 || ow == 0 {
            return Err(TensorError::Invalid { op: "resize", msg: "zero output size".into() });
        }
        if self.shape(x).h() == oh && self.shape(x).w() == ow {
            return Ok(x);
        }
        let out = kernels::resize_bilinear(self.value(x), oh, ow);
        let ng = self.grad_of(&[x]);
        Ok(self.push(out, Op::Resize { x }, ng))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = self.shape(*xs.first().ok_or(TensorError::Empty)?);
        for &x in xs {
            let s = self.shape(x);
            if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
                return Err(TensorError::Mismatch { op: "concat", a: first, b: s });
            }
        }
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        let out = kernels::concat_channels(&vals);
        let ng = self.grad_of(xs);
        Ok(self.push(out, Op::Concat { xs: xs.to_vec() }, ng))
    }

    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        let ng = self.grad_of(&[x]);
        self.push(out, Op::Clamp { x, lo, hi }, ng)
    }

    /// Reverse pass seeded with output gradients (`dL/d node`) for one or more nodes.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        for (id, g) in seeds {
            if g.shape() != self.shape(id) {
                return Err(TensorError::Mismatch { op: "backward seed", a: self.shape(id), b: g.shape() });
            }
            accumulate(&mut grads, id, g);
        }
        let mut out = Gradients { params: ParamGrads::new(self.store.len()), inputs: BTreeMap::new() };
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let needs = |id: NodeId| self.nodes[id.0].needs_grad;
            match &node.op {
                Op::Input { track } => {
                    if *track {
                        out.inputs.insert(NodeId(i), g);
                    }
                }
                Op::Param(p) => out.params.accumulate(*p, g),
                Op::Conv { x, w, b, geom } => {
                    let r = kernels::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *geom,
                        (needs(*x), needs(*w), b.is_some_and(needs)),
                    );
                    if let Some(dx) = r.dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    if let Some(dw) = r.dw {
                        accumulate(&mut grads, *w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, r.db) {
                        let db = db.reshape(self.shape(*b))?;
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add { a, b } => {
                    if needs(*b) {
                        accumulate(&mut grads, *b, kernels::reduce_to(&g, self.shape(*b)));
                    }
                    if needs(*a) {
                        let ga = kernels::reduce_to(&g, self.shape(*a));
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Mul { a, b } => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, kernels::mul_reduce_to(&g, self.value(*b), self.shape(*a)));
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, kernels::mul_reduce_to(&g, self.value(*a), self.shape(*b)));
                    }
                }
                Op::Relu { x } => {
                    let y = self.value(NodeId(i));
                    let dx = kernels::broadcast_binary(&g, y, g.shape(), |gv, yv| if yv > T::zero() { gv } else { T::zero() });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid { x } => {
                    let y = self.value(NodeId(i));
                    let dx = kernels::broadcast_binary(&g, y, g.shape(), |gv, yv| gv * yv * (T::one() - yv));
                    accumulate(&mut grads, *x, dx);
                }
                Op::GroupNorm { x, gamma, beta, groups, stats } => {
                    let (dx, dg, db) = kernels::group_norm_backward(self.value(*x), self.value(*gamma), &g, *groups, stats);
                    if needs(*x) {
                        accumulate(&mut grads, *x, dx);
                    }
                    if needs(*gamma) {
                        accumulate(&mut grads, *gamma, dg.reshape(self.shape(*gamma))?);
                    }
                    if needs(*beta) {
                        accumulate(&mut grads, *beta, db.reshape(self.shape(*beta))?);
                    }
                }
                Op::Pool { x } => {
                    accumulate(&mut grads, *x, kernels::adaptive_avg_pool_backward(&g, self.shape(*x)));
                }
                Op::Resize { x } => {
                    accumulate(&mut grads, *x, kernels::resize_bilinear_backward(&g, self.shape(*x)));
                }
                Op::Concat { xs } => {
                    let mut c0 = 0;
                    for &x in xs {
                        let cn = self.shape(x).c();
                        if needs(x) {
                            accumulate(&mut grads, x, kernels::channel_slice(&g, c0, cn));
                        }
                        c0 += cn;
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x);
                    let (lo, hi) = (*lo, *hi);
                    let dx = kernels::broadcast_binary(&g, xv, g.shape(), |gv, v| if v < lo || v > hi { T::zero() } else { gv });
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
