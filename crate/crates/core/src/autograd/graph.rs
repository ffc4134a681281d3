//! Define-by-run tape for reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! execution order, so the node vector is already a topological order and
//! `backward` simply walks it in reverse.

use std::borrow::Cow;

use super::error::{Result, TensorError};
use super::kernels::{self, ConvGeom, LrnParams};
use super::params::{ParamGrads, Params};
use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(String),
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    MaxPool { x: NodeId, argmax: Vec<usize> },
    Relu { x: NodeId },
    Lrn { x: NodeId, params: LrnParams, scale: Vec<T> },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Reshape { x: NodeId },
    Concat { a: NodeId, b: NodeId, axis: usize },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: T },
    Sum { x: NodeId },
    Softmax { x: NodeId },
    CrossEntropy { x: NodeId, labels: Vec<usize>, probs: Vec<T> },
    MixtureNll { a: NodeId, b: NodeId, labels: Vec<usize>, log_a: Vec<T>, log_b: Vec<T> },
}

#[derive(Debug)]
struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let rg = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Owned input leaf. Requires grad iff `tensor.requires_grad`.
    pub fn input(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        tensor.ensure_finite("input")?;
        let rg = tensor.requires_grad;
        Ok(self.push(Cow::Owned(tensor), Op::Input, rg))
    }

    /// Borrowed input leaf.
    pub fn input_ref(&mut self, tensor: &'a Tensor<T>) -> Result<NodeId> {
        tensor.ensure_finite("input")?;
        let rg = tensor.requires_grad;
        Ok(self.push(Cow::Borrowed(tensor), Op::Input, rg))
    }

    /// Leaf bound to a named parameter; frozen parameters do not request
    /// gradients.
    pub fn param(&mut self, params: &'a Params<T>, name: &str) -> Result<NodeId> {
        let p = params.get(name)?;
        p.tensor.ensure_finite("param")?;
        let rg = p.is_trainable();
        Ok(self.push(Cow::Borrowed(&p.tensor), Op::Param(name.to_string()), rg))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let geom = ConvGeom::new(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push_op(out, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let (out, argmax) = kernels::maxpool2d(self.value(x), kernel, stride)?;
        Ok(self.push_op(out, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.push_op(out, Op::Relu { x }, &[x]))
    }

    pub fn lrn(&mut self, x: NodeId, params: LrnParams) -> Result<NodeId> {
        let (out, scale) = kernels::lrn(self.value(x), &params)?;
        Ok(self.push_op(out, Op::Lrn { x, params, scale }, &[x]))
    }

    pub fn fully_connected(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = kernels::fully_connected(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push_op(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape { x }, &[x]))
    }

    /// Collapse everything after the batch axis.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.value(x).shape();
        let n = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(x, &[n, rest])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let out = concat(self.value(a), self.value(b), axis)?;
        Ok(self.push_op(out, Op::Concat { a, b, axis }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("elementwise_add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape(), data)?;
        out.ensure_finite("elementwise_add")?;
        Ok(self.push_op(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("elementwise_mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        out.ensure_finite("elementwise_mul")?;
        Ok(self.push_op(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a * factor).collect())?;
        out.ensure_finite("scale")?;
        Ok(self.push_op(out, Op::Scale { x, factor }, &[x]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: T = self.value(x).data().iter().copied().sum();
        let out = Tensor::scalar(total);
        out.ensure_finite("sum")?;
        Ok(self.push_op(out, Op::Sum { x }, &[x]))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let out = kernels::softmax(self.value(x))?;
        Ok(self.push_op(out, Op::Softmax { x }, &[x]))
    }

    /// Mean cross-entropy of `labels` against row-wise `softmax(scores)`.
    pub fn cross_entropy(&mut self, scores: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = self.value(scores);
        if v.rank() != 2 {
            return Err(TensorError::Rank { op: "cross_entropy", expected: 2, shape: v.shape().to_vec() });
        }
        kernels::check_labels(labels, v.shape()[0], v.shape()[1])?;
        let loss = kernels::cross_entropy(v, labels)?;
        let probs = kernels::softmax(v)?.into_data();
        let out = Tensor::scalar(loss);
        out.ensure_finite("cross_entropy")?;
        Ok(self.push_op(out, Op::CrossEntropy { x: scores, labels: labels.to_vec(), probs }, &[scores]))
    }

    /// Mean of `-ln(0.5*softmax(a)[y] + 0.5*softmax(b)[y])`, computed in the
    /// log domain.
    pub fn mixture_nll(&mut self, a: NodeId, b: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.same_shape("mixture_nll", a, b)?;
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(TensorError::Rank { op: "mixture_nll", expected: 2, shape: va.shape().to_vec() });
        }
        let (n, c) = (va.shape()[0], va.shape()[1]);
        kernels::check_labels(labels, n, c)?;
        let log_a = kernels::log_softmax(va)?.into_data();
        let log_b = kernels::log_softmax(self.value(b))?.into_data();
        let half = T::from_f64(0.5f64.ln());
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            total = total - (half + log_add_exp(log_a[i * c + y], log_b[i * c + y]));
        }
        let out = Tensor::scalar(total / T::from_f64(n.max(1) as f64));
        out.ensure_finite("mixture_nll")?;
        Ok(self.push_op(out, Op::MixtureNll { a, b, labels: labels.to_vec(), log_a, log_b }, &[a, b]))
    }

    /// Reverse-mode sweep from a scalar `loss`, seeding its gradient with 1.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.backward_with_seed(loss, T::one())
    }

    /// Like [`backward`](Self::backward) with `d loss = seed`.
    pub fn backward_with_seed(&mut self, loss: NodeId, seed: T) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![seed]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g)?;
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Vec<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&mut self, id: usize, g: &[T]) -> Result<()> {
        let node = &self.nodes[id];
        let mut out: Vec<(NodeId, Vec<T>)> = Vec::new();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.needs(*x), self.needs(*w), self.needs(*b));
                let grads = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    need,
                );
                out.extend(grads.input.map(|v| (*x, v)));
                out.extend(grads.weight.map(|v| (*w, v)));
                out.extend(grads.bias.map(|v| (*b, v)));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, kernels::maxpool2d_backward(self.value(*x).numel(), argmax, g)));
            }
            Op::Relu { x } => {
                let y = node.value.data();
                let gx = y
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, gx));
            }
            Op::Lrn { x, params, scale } => {
                let xv = self.value(*x);
                out.push((*x, kernels::lrn_backward(xv.shape(), xv.data(), scale, params, g)));
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let m = self.value(*w).shape()[0];
                let need = (self.needs(*x), self.needs(*w), self.needs(*b));
                let grads = kernels::fully_connected_backward(
                    n,
                    d,
                    m,
                    xv.data(),
                    self.value(*w).data(),
                    g,
                    need,
                );
                out.extend(grads.input.map(|v| (*x, v)));
                out.extend(grads.weight.map(|v| (*w, v)));
                out.extend(grads.bias.map(|v| (*b, v)));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::Concat { a, b, axis } => {
                let (ga, gb) = split_grad(self.value(*a).shape(), self.value(*b).shape(), *axis, g);
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    out.push((*a, g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect()));
                }
                if self.needs(*b) {
                    out.push((*b, g.iter().zip(va).map(|(&gv, &x)| gv * x).collect()));
                }
            }
            Op::Scale { x, factor } => out.push((*x, g.iter().map(|&v| v * *factor).collect())),
            Op::Sum { x } => out.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::Softmax { x } => {
                let y = node.value.data();
                let c = node.value.shape()[1];
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                out.push((*x, gx));
            }
            Op::CrossEntropy { x, labels, probs } => {
                let c = self.value(*x).shape()[1];
                let scale = g[0] / T::from_f64(labels.len().max(1) as f64);
                let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    gx[i * c + y] = gx[i * c + y] - scale;
                }
                out.push((*x, gx));
            }
            Op::MixtureNll { a, b, labels, log_a, log_b } => {
                let c = self.value(*a).shape()[1];
                let scale = g[0] / T::from_f64(labels.len().max(1) as f64);
                let mut ga = vec![T::zero(); log_a.len()];
                let mut gb = vec![T::zero(); log_b.len()];
                for (i, &y) in labels.iter().enumerate() {
                    let (la, lb) = (log_a[i * c + y], log_b[i * c + y]);
                    // responsibility of stream a for the label
                    let ra = T::one() / (T::one() + (lb - la).exp());
                    let rb = T::one() - ra;
                    for j in 0..c {
                        let at = i * c + j;
                        let delta = if j == y { T::one() } else { T::zero() };
                        ga[at] = -scale * ra * (delta - log_a[at].exp());
                        gb[at] = -scale * rb * (delta - log_b[at].exp());
                    }
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
        }
        for (target, grad) in out {
            self.accumulate(target, grad);
        }
        Ok(())
    }

    /// Gradients of every trainable parameter leaf after `backward`, in
    /// graph order. A parameter used twice appears once with summed grads.
    pub fn param_grads(&self) -> ParamGrads<T> {
        let mut out: ParamGrads<T> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if !node.requires_grad {
                    continue;
                }
                let g = self.grads.get(i).and_then(|g| g.clone()).unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                match out.iter_mut().find(|(n, _)| n == name) {
                    Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
                    None => out.push((name.clone(), g)),
                }
            }
        }
        out
    }
}

fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Concatenate along `axis`; every other axis must agree.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    let mismatch = || TensorError::ShapeMismatch {
        op: "concat",
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    if sa.len() != sb.len() || axis >= sa.len() {
        return Err(mismatch());
    }
    if sa.iter().zip(sb).enumerate().any(|(i, (x, y))| i != axis && x != y) {
        return Err(mismatch());
    }
    let outer: usize = sa[..axis].iter().product();
    let inner: usize = sa[axis + 1..].iter().product();
    let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * ca..(o + 1) * ca]);
        data.extend_from_slice(&b.data()[o * cb..(o + 1) * cb]);
    }
    let mut shape = sa.to_vec();
    shape[axis] += sb[axis];
    Tensor::new(&shape, data)
}

fn split_grad<T: Scalar>(sa: &[usize], sb: &[usize], axis: usize, g: &[T]) -> (Vec<T>, Vec<T>) {
    let outer: usize = sa[..axis].iter().product();
    let inner: usize = sa[axis + 1..].iter().product();
    let (ca, cb) = (sa[axis] * inner, sb[axis] * inner);
    let mut ga = Vec::with_capacity(outer * ca);
    let mut gb = Vec::with_capacity(outer * cb);
    for chunk in g.chunks(ca + cb).take(outer) {
        ga.extend_from_slice(&chunk[..ca]);
        gb.extend_from_slice(&chunk[ca..]);
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[2, 2], &[1., -2., 3., 4.]).unwrap().with_grad()).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn unreachable_param_keeps_zero_grad() {
        let mut params = Params::<f64>::new();
        params.insert("used", Tensor::ones(&[2])).unwrap();
        params.insert("unused", Tensor::ones(&[3])).unwrap();
        params.zero_grad();
        let grads = {
            let mut g = Graph::new();
            let u = g.param(&params, "used").unwrap();
            let s = g.sum(u).unwrap();
            g.backward(s).unwrap();
            g.param_grads()
        };
        params.accumulate(&grads).unwrap();
        assert_eq!(params.get("unused").unwrap().tensor.grad, Some(vec![0.0; 3]));
        assert_eq!(params.get("used").unwrap().tensor.grad, Some(vec![1.0; 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::ones(&[3]).with_grad()).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn relu_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap().with_grad()).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::<f64>::from_f64(&[1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1, 2, 1], &[9., 8.]).unwrap();
        let c = concat(&a, &b, 2).unwrap();
        assert_eq!(c.shape(), &[1, 2, 3]);
        assert_eq!(c.data(), &[1., 2., 9., 3., 4., 8.]);
        assert_eq!(c.narrow(2, 0, 2).unwrap(), a);
        assert_eq!(c.narrow(2, 2, 1).unwrap(), b);

        let empty = Tensor::<f64>::new(&[1, 2, 0], vec![]).unwrap();
        assert_eq!(concat(&a, &empty, 2).unwrap(), a);
        assert!(concat(&a, &Tensor::zeros(&[1, 3, 1]), 2).is_err());
    }

    #[test]
    fn add_and_mul_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_f64(&[2], &[1., 2.]).unwrap()).unwrap();
        let b = g.input(Tensor::from_f64(&[2], &[3., 4.]).unwrap()).unwrap();
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4., 6.]);
        let ones = g.input(Tensor::ones(&[2])).unwrap();
        let m = g.mul(a, ones).unwrap();
        assert_eq!(g.value(m).data(), &[1., 2.]);
        let wrong = g.input(Tensor::ones(&[3])).unwrap();
        assert!(matches!(g.add(a, wrong), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn mixture_nll_matches_direct_formula() {
        let la = Tensor::<f64>::from_f64(&[1, 3], &[2.0, 0.5, -1.0]).unwrap();
        let lb = Tensor::<f64>::from_f64(&[1, 3], &[-0.3, 1.2, 0.0]).unwrap();
        let pa = kernels::softmax(&la).unwrap();
        let pb = kernels::softmax(&lb).unwrap();
        let mut g = Graph::new();
        let a = g.input(la).unwrap();
        let b = g.input(lb).unwrap();
        let l = g.mixture_nll(a, b, &[1]).unwrap();
        let want = -(0.5 * pa.data()[1] + 0.5 * pb.data()[1]).ln();
        assert!((g.value(l).data()[0] - want).abs() < 1e-12);
    }
}
