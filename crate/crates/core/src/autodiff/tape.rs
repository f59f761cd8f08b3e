use std::collections::BTreeMap;

use super::kernels;
use super::tensor::{Dims, Tensor3};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { x: Var, scale: f64 },
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    AvgPool2(Var),
    BoxFilter { x: Var, radius: usize },
    SpatialGradient(Var),
    TrilinearSample { image: Var, coords: Var },
    Shift { x: Var, offset: [isize; 3] },
    Crop { x: Var, margin: usize },
    Concat(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine { .. } => "affine",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Exp(_) => "exp",
            Op::Clamp { .. } => "clamp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::AvgPool2(_) => "avg_pool2",
            Op::BoxFilter { .. } => "box_filter",
            Op::SpatialGradient(_) => "spatial_gradient",
            Op::TrilinearSample { .. } => "trilinear_sample",
            Op::Shift { .. } => "shift",
            Op::Crop { .. } => "crop",
            Op::Concat(_) => "concat",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor3,
    is_param: bool,
}

/// Linear record of tensor operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and the reverse sweep in [`Tape::backward`] is a single pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter node.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor3>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor3> {
        self.grads.get(&v)
    }

    pub fn remove(&mut self, v: Var) -> Option<Tensor3> {
        self.grads.remove(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor3)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn constant(&mut self, value: Tensor3) -> Var {
        self.push_leaf(value, false)
    }

    /// Records an optimizable leaf; [`Tape::backward`] reports a gradient for it.
    pub fn param(&mut self, value: Tensor3) -> Var {
        self.push_leaf(value, true)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor3::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].value.dims()
    }

    pub fn channels(&self, v: Var) -> usize {
        self.nodes[v.0].value.channels()
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].is_param
    }

    fn push_leaf(&mut self, value: Tensor3, is_param: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            is_param,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Tensor3> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownNode(v.0))
    }

    fn push(&mut self, op: Op, dims: Dims, channels: usize, data: Vec<f64>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value: Tensor3::from_raw(dims, channels, data),
            op,
            is_param: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(&Tensor3, &Tensor3)> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if !ta.same_shape(tb) {
            return Err(Error::dims(op, ta.shape_string(), tb.shape_string()));
        }
        Ok((ta, tb))
    }

    fn binary(
        &mut self,
        op: Op,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = self.same_shape(op.name(), a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let (dims, ch) = (ta.dims(), ta.channels());
        self.push(op, dims, ch, data)
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let tx = self.check(x)?;
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let (dims, ch) = (tx.dims(), tx.channels());
        self.push(op, dims, ch, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Elementwise quotient; a zero anywhere in the denominator is rejected.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, tb) = self.same_shape("div", a, b)?;
        if let Some(i) = tb.data().iter().position(|&v| v == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: format!("zero denominator at element {i}"),
            });
        }
        self.binary(Op::Div(a, b), a, b, |x, y| x / y)
    }

    /// `scale * x + offset`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Result<Var> {
        self.unary(Op::Affine { x, scale }, x, |v| scale * v + offset)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Result<Var> {
        self.affine(x, 1.0, offset)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Square(x), x, |v| v * v)
    }

    /// Elementwise square root; the radicand must be strictly positive.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let tx = self.check(x)?;
        if let Some(i) = tx.data().iter().position(|&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("non-positive radicand {} at element {i}", tx.data()[i]),
            });
        }
        self.unary(Op::Sqrt(x), x, f64::sqrt)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Op::Exp(x), x, f64::exp)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        self.unary(Op::Clamp { x, lo, hi }, x, |v| v.clamp(lo, hi))
    }

    /// Sum over every element (all voxels and channels) to a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.data().iter().sum::<f64>();
        self.push(Op::Sum(x), Dims::SCALAR, 1, vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(x), Dims::SCALAR, 1, vec![m])
    }

    /// 2x average pooling per axis; odd extents end with a count-normalized partial window.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        let (dims, ch) = (t.dims().pooled(), t.channels());
        let data = kernels::avg_pool2(t);
        self.push(Op::AvgPool2(x), dims, ch, data)
    }

    /// Separable box mean of half-width `radius`, count-normalized at the borders.
    pub fn box_filter(&mut self, x: Var, radius: usize) -> Result<Var> {
        let t = self.check(x)?;
        let (dims, ch) = (t.dims(), t.channels());
        let mut data = t.data().to_vec();
        for axis in 0..3 {
            kernels::box_pass(&mut data, dims, ch, axis, radius, kernels::Norm::After);
        }
        self.push(Op::BoxFilter { x, radius }, dims, ch, data)
    }

    /// Central differences in normalized coordinates (one-sided at the borders).
    ///
    /// Output channel `3 * c + axis` holds the derivative of input channel `c`
    /// along `axis`.
    pub fn spatial_gradient(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        let (dims, ch) = (t.dims(), t.channels());
        let data = kernels::spatial_gradient(t);
        self.push(Op::SpatialGradient(x), dims, 3 * ch, data)
    }

    /// Samples `image` at the normalized coordinates held in the 3 channels of
    /// `coords`, with coordinates clamped to the unit cube.
    pub fn trilinear_sample(&mut self, image: Var, coords: Var) -> Result<Var> {
        let (ti, tc) = (self.check(image)?, self.check(coords)?);
        if tc.channels() != 3 {
            return Err(Error::dims(
                "trilinear_sample",
                "coords with 3 channels",
                tc.shape_string(),
            ));
        }
        let (dims, ch) = (tc.dims(), ti.channels());
        let data = kernels::trilinear_forward(ti, tc);
        self.push(Op::TrilinearSample { image, coords }, dims, ch, data)
    }

    /// `out(p) = x(p + offset)` with edge replication.
    pub fn shift(&mut self, x: Var, offset: [isize; 3]) -> Result<Var> {
        let t = self.check(x)?;
        let (dims, ch) = (t.dims(), t.channels());
        let data = kernels::shift(t, offset);
        self.push(Op::Shift { x, offset }, dims, ch, data)
    }

    /// Removes `margin` voxels from each face.
    pub fn crop(&mut self, x: Var, margin: usize) -> Result<Var> {
        let t = self.check(x)?;
        let d = t.dims();
        if d.min_extent() <= 2 * margin {
            return Err(Error::dims(
                "crop",
                format!("margin {margin}"),
                t.shape_string(),
            ));
        }
        let out = Dims::new(d.nx - 2 * margin, d.ny - 2 * margin, d.nz - 2 * margin);
        let ch = t.channels();
        let data = kernels::crop(t, margin, out);
        self.push(Op::Crop { x, margin }, out, ch, data)
    }

    /// Stacks the channels of equally-sized tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let dims = self.check(first)?.dims();
        let mut data = Vec::new();
        let mut ch = 0;
        for &p in parts {
            let t = self.check(p)?;
            if t.dims() != dims {
                return Err(Error::dims("concat", dims, t.dims()));
            }
            data.extend_from_slice(t.data());
            ch += t.channels();
        }
        self.push(Op::Concat(parts.to_vec()), dims, ch, data)
    }

    /// Reverse sweep from a scalar `loss`; returns the gradient of every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let tl = self.check(loss)?;
        if !tl.is_scalar() {
            return Err(Error::NotScalar {
                dims: tl.dims(),
                channels: tl.channels(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut adj);
        }

        let mut grads = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.is_param {
                let d = node.value.dims();
                let ch = node.value.channels();
                let g = adj[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; d.voxels() * ch]);
                grads.insert(Var(i), Tensor3::from_raw(d, ch, g));
            }
        }
        // Parameters recorded after the loss cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.is_param {
                let v = &node.value;
                grads.insert(Var(i), Tensor3::zeros(v.dims(), v.channels()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let tensor = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(adj, *a, g.iter().copied());
                accumulate(adj, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.iter().copied());
                accumulate(adj, *b, g.iter().map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(adj, *a, g.iter().zip(vb).map(|(g, y)| g * y));
                accumulate(adj, *b, g.iter().zip(va).map(|(g, x)| g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                accumulate(adj, *a, g.iter().zip(vb).map(|(g, y)| g / y));
                accumulate(
                    adj,
                    *b,
                    g.iter()
                        .zip(va.iter().zip(vb))
                        .map(|(g, (x, y))| -g * x / (y * y)),
                );
            }
            Op::Affine { x, scale } => {
                accumulate(adj, *x, g.iter().map(|g| g * scale));
            }
            Op::Square(x) => {
                accumulate(adj, *x, g.iter().zip(val(*x)).map(|(g, v)| 2.0 * g * v));
            }
            Op::Sqrt(x) => {
                let out = node.value.data();
                accumulate(adj, *x, g.iter().zip(out).map(|(g, s)| g * 0.5 / s));
            }
            Op::Exp(x) => {
                let out = node.value.data();
                accumulate(adj, *x, g.iter().zip(out).map(|(g, e)| g * e));
            }
            Op::Clamp { x, lo, hi } => {
                accumulate(
                    adj,
                    *x,
                    g.iter()
                        .zip(val(*x))
                        .map(|(g, v)| if *v >= *lo && *v <= *hi { *g } else { 0.0 }),
                );
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                accumulate(adj, *x, std::iter::repeat_n(g[0], n));
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                accumulate(adj, *x, std::iter::repeat_n(g[0] / n as f64, n));
            }
            Op::AvgPool2(x) => {
                let gx = kernels::avg_pool2_backward(tensor(*x), g);
                accumulate(adj, *x, gx.into_iter());
            }
            Op::BoxFilter { x, radius } => {
                let t = tensor(*x);
                let mut gx = g.to_vec();
                for axis in 0..3 {
                    kernels::box_pass(
                        &mut gx,
                        t.dims(),
                        t.channels(),
                        axis,
                        *radius,
                        kernels::Norm::Before,
                    );
                }
                accumulate(adj, *x, gx.into_iter());
            }
            Op::SpatialGradient(x) => {
                let gx = kernels::spatial_gradient_backward(tensor(*x), g);
                accumulate(adj, *x, gx.into_iter());
            }
            Op::TrilinearSample { image, coords } => {
                let (gi, gc) = kernels::trilinear_backward(tensor(*image), tensor(*coords), g);
                accumulate(adj, *image, gi.into_iter());
                accumulate(adj, *coords, gc.into_iter());
            }
            Op::Shift { x, offset } => {
                let gx = kernels::shift_backward(tensor(*x), *offset, g);
                accumulate(adj, *x, gx.into_iter());
            }
            Op::Crop { x, margin } => {
                let gx = kernels::crop_backward(tensor(*x), *margin, node.value.dims(), g);
                accumulate(adj, *x, gx.into_iter());
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = val(*p).len();
                    accumulate(adj, *p, g[start..start + n].iter().copied());
                    start += n;
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib.collect()),
    }
}
