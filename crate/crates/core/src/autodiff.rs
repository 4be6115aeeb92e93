//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is an append-only list of nodes. Each node holds its forward
//! value and the operation that produced it, so inputs always precede the
//! node that consumes them and a single reverse sweep is a valid topological
//! order for [`Tape::backward`].
//!
//! Fused kernels that are cheaper to differentiate by hand (the selective
//! scan, the depthwise convolution) plug in through [`CustomOp`].

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{
    broadcast_shape, layer_norm_rows, matmul, matmul_nt, matmul_tn, numel, sigmoid, silu,
    silu_grad, softplus, sum_to_shape, zip_broadcast, Scalar, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary<T> {
    Exp,
    Softplus,
    Silu,
    Relu,
    Sigmoid,
    Abs,
    Neg,
    Square,
    /// Huber penalty with the given threshold.
    Huber(T),
    /// `max(x, floor)`; the gradient is zero where the floor is active.
    ClampMin(T),
}

impl<T: Scalar> Unary<T> {
    fn apply(self, x: T) -> T {
        match self {
            Unary::Exp => x.exp(),
            Unary::Softplus => softplus(x),
            Unary::Silu => silu(x),
            Unary::Relu => x.max(T::zero()),
            Unary::Sigmoid => sigmoid(x),
            Unary::Abs => x.abs(),
            Unary::Neg => -x,
            Unary::Square => x * x,
            Unary::Huber(delta) => {
                let a = x.abs();
                if a <= delta {
                    T::of(0.5) * x * x
                } else {
                    delta * (a - T::of(0.5) * delta)
                }
            }
            Unary::ClampMin(floor) => x.max(floor),
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    fn derivative(self, x: T, y: T) -> T {
        match self {
            Unary::Exp => y,
            Unary::Softplus => sigmoid(x),
            Unary::Silu => silu_grad(x),
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Neg => -T::one(),
            Unary::Square => T::of(2.0) * x,
            Unary::Huber(delta) => x.max(-delta).min(delta),
            Unary::ClampMin(floor) => {
                if x > floor {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// A hand-differentiated operation recorded on the tape.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one optional gradient per input, each shaped
    /// like the matching input.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Unary(Var, Unary<T>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    BroadcastTo(Var),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout(Var, Vec<T>),
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode record of a forward computation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Split a shape around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// A differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let out = zip_broadcast(self.value(a), self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn unary(&mut self, a: Var, f: Unary<T>) -> Var {
        let out = self.value(a).map(|x| f.apply(x));
        let rg = self.rg(a);
        self.push(out, Op::Unary(a, f), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / T::of(v.len() as f64));
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Permute(a, axes.to_vec()), rg))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if broadcast_shape(src.shape(), shape)? != shape {
            return Err(Error::dim("broadcast_to", src.shape(), shape));
        }
        let out = zip_broadcast(src, &Tensor::zeros(shape), |x, _| x)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::BroadcastTo(a), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let w = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Elements `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("narrow", &shape, &[axis, start, len]));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Narrow { x, axis, start }, rg))
    }

    /// Rows of a 2-D table selected by index.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize], axis_name: &'static str) -> Result<Var> {
        let t = self.value(table);
        let (n, w) = match t.shape() {
            [n, w] => (*n, *w),
            s => return Err(Error::dim("gather_rows", s, &[0, 0])),
        };
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    axis: axis_name,
                    index: r,
                    extent: n,
                });
            }
            data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
        let out = Tensor::new(&[rows.len(), w], data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::GatherRows(table, rows.to_vec()), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, xhat, rstd) =
            layer_norm_rows(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. Pass `None` for eval mode (identity).
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<&mut RngStream>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!("dropout probability {p} not in [0, 1)")));
        }
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.uniform() >= p { keep } else { T::zero() })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(v.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    /// Records a custom operation whose forward value was computed by the
    /// caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Propagates adjoints from a scalar `loss` back to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, matmul_nt(g, self.value(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, matmul_tn(self.value(*a), g)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, sum_to_shape(g, self.shape(*a)));
                acc(*b, sum_to_shape(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                acc(*a, sum_to_shape(g, self.shape(*a)));
                acc(*b, sum_to_shape(&g.map(|x| -x), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = zip_broadcast(g, self.value(*b), |x, y| x * y)?;
                    acc(*a, sum_to_shape(&ga, self.shape(*a)));
                }
                if self.rg(*b) {
                    let gb = zip_broadcast(g, self.value(*a), |x, y| x * y)?;
                    acc(*b, sum_to_shape(&gb, self.shape(*b)));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * *k)),
            Op::Unary(a, f) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * f.derivative(xi, yi))
                    .collect();
                acc(*a, Tensor::new(x.shape(), data)?);
            }
            Op::Sum(a) => acc(*a, Tensor::full(self.shape(*a), g.item())),
            Op::Mean(a) => {
                let n = T::of(self.value(*a).len() as f64);
                acc(*a, Tensor::full(self.shape(*a), g.item() / n));
            }
            Op::Reshape(a) => acc(*a, g.reshape(self.shape(*a))?),
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                acc(*a, g.permute(&inverse)?);
            }
            Op::BroadcastTo(a) => acc(*a, sum_to_shape(g, self.shape(*a))),
            Op::Concat(parts, axis) => {
                let (outer, _, inner) = split_axis(g.shape(), *axis);
                let total = g.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let ext = self.shape(p)[*axis];
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + ext * inner]);
                        }
                        acc(p, Tensor::new(self.shape(p), data)?);
                    }
                    offset += ext;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, ext, inner) = split_axis(shape, *axis);
                let len = g.shape()[*axis];
                let mut full = Tensor::zeros(shape);
                for o in 0..outer {
                    let dst = (o * ext + start) * inner;
                    let src = o * len * inner;
                    full.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*x, full);
            }
            Op::GatherRows(table, rows) => {
                let shape = self.shape(*table);
                let w = shape[1];
                let mut full = Tensor::zeros(shape);
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut full.data_mut()[r * w..(r + 1) * w];
                    for (d, &s) in dst.iter_mut().zip(&g.data()[k * w..(k + 1) * w]) {
                        *d = *d + s;
                    }
                }
                acc(*table, full);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                let d = gam.len();
                let dn = T::of(d as f64);
                let mut dx = Vec::with_capacity(g.len());
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * hr[j];
                        dgamma[j] = dgamma[j] + gr[j] * hr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                    }
                    mean_dh = mean_dh / dn;
                    mean_dh_h = mean_dh_h / dn;
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx.push(rs * (dh - mean_dh - hr[j] * mean_dh_h));
                    }
                }
                acc(*x, Tensor::new(self.shape(*x), dx)?);
                acc(*gamma, Tensor::new(&[d], dgamma)?);
                acc(*beta, Tensor::new(&[d], dbeta)?);
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                acc(*x, Tensor::new(g.shape(), data)?);
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        if gi.shape() != self.shape(v) {
                            return Err(Error::dim(op.name(), gi.shape(), self.shape(v)));
                        }
                        acc(v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like it when nothing flowed in.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1., 2., 3., 4.]));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn half_square_gives_identity() {
        let mut tape = Tape::new();
        let data = [0.5, -1.5, 2.0, 3.25];
        let x = tape.param(t(&[2, 2], &data));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &data);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        let y = tape.exp(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn topological_order_and_constants() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[2], &[1., 2.]));
        let x = tape.param(t(&[2], &[3., 4.]));
        let y = tape.mul(c, x).unwrap();
        assert!(y.id() > c.id() && y.id() > x.id());
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn index_error_names_axis() {
        let mut tape = Tape::<f64>::new();
        let tab = tape.param(Tensor::zeros(&[7, 2]));
        match tape.gather_rows(tab, &[7], "day_of_week") {
            Err(Error::Index { axis, index, extent }) => {
                assert_eq!((axis, index, extent), ("day_of_week", 7, 7));
            }
            other => panic!("unexpected {:?}", other.map(|v| v.id())),
        }
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1., 2., 3.]));
        let y = tape.dropout(x, 0.5, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_preserves_expectation() {
        let mut tape = Tape::<f64>::new();
        let n = 200_000;
        let x = tape.constant(Tensor::ones(&[n]));
        let mut rng = RngStream::new(11, 0);
        let y = tape.dropout(x, 0.3, Some(&mut rng)).unwrap();
        let mean = tape.value(y).sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let zeros = tape.value(y).data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.3).abs() < 0.01);
    }

    #[test]
    fn concat_and_narrow_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let b = tape.param(Tensor::from_fn(&[2, 1], |i| 10.0 + i as f64));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[0., 1., 2., 10., 3., 4., 5., 11.]);
        let back = tape.narrow(c, 1, 0, 3).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
        let rows = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.shape(rows), &[4, 3]);
    }
}
