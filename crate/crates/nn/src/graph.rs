//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in execution
//! order; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every parameter that took part.

use crate::kernels::{self, ConvGeom};
use crate::real::matmul;
use crate::store::{ParamId, ParamStore, RunningStatUpdate};
use crate::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// Batch norm with batch statistics; `xhat` is the normalized input.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    /// Per-channel `gamma * (x - mean) * inv_std + beta` with fixed statistics.
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Concat(Var, Var),
    Reshape(Var),
    Mse {
        pred: Var,
        target: Tensor<S>,
    },
    Sum(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
    params: Vec<Option<Var>>,
    running_updates: Vec<RunningStatUpdate<S>>,
}

impl<S: Real> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients produced by [`Graph::backward`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Grads<S> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Global L2 norm over all present gradients.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            running_updates: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id return
    /// the same node so shared weights (e.g. across recurrent steps) accumulate.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params[id.0] = Some(v);
        v
    }

    pub fn record_running_stats(&mut self, update: RunningStatUpdate<S>) {
        self.running_updates.push(update);
    }

    pub fn running_updates(&self) -> &[RunningStatUpdate<S>] {
        &self.running_updates
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(
            ws[1], c,
            "conv2d: weight expects {} input channels, got {c}",
            ws[1]
        );
        let geom = ConvGeom::new(c, h, wd, ws[2], ws[3], stride, pad);
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            ws[0],
            b.map(|b| self.value(b).data()),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            Tensor::from_vec(&[n, ws[0], geom.h_out, geom.w_out], out),
            Op::Conv2d { x, w, b, geom },
            rg,
        )
    }

    /// Transposed convolution with weight `c_in x c_out x kh x kw`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 4);
        assert_eq!(
            ws[0], c,
            "conv_transpose2d: weight expects {} input channels, got {c}",
            ws[0]
        );
        let geom = kernels::conv_transpose_geom(ws[1], h, wd, ws[2], ws[3], stride, pad);
        let out = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            c,
            &geom,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            Tensor::from_vec(&[n, ws[1], geom.h_in, geom.w_in], out),
            Op::ConvTranspose2d { x, w, b, geom },
            rg,
        )
    }

    /// Batch normalization over `(N, H, W)` using the statistics of this batch.
    /// Returns the output together with the batch mean and unbiased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<S>, Vec<S>) {
        let (n, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let count = n * plane;
        assert!(
            count > 1,
            "batch norm needs more than one value per channel"
        );
        let xs = self.value(x).data();
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for s in 0..n {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += xs[(s * c + ch) * plane..][..plane]
                    .iter()
                    .copied()
                    .sum::<S>();
            }
        }
        let cnt = S::from_usize(count).unwrap();
        mean.iter_mut().for_each(|m| *m /= cnt);
        for s in 0..n {
            for ch in 0..c {
                let m = mean[ch];
                var[ch] += xs[(s * c + ch) * plane..][..plane]
                    .iter()
                    .map(|&v| (v - m) * (v - m))
                    .sum::<S>();
            }
        }
        let eps = S::from_f64_lossy(eps);
        let inv_std: Vec<S> = var
            .iter()
            .map(|&v| (v / cnt + eps).sqrt().recip())
            .collect();
        let unbiased: Vec<S> = var
            .iter()
            .map(|&v| v / S::from_usize(count - 1).unwrap())
            .collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![S::zero(); xs.len()];
        let mut out = vec![S::zero(); xs.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    xhat[i] = (xs[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::from_vec(&[n, c, h, w], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        (v, mean, unbiased)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[S],
        var: &[S],
        eps: f64,
    ) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let plane = h * w;
        let eps = S::from_f64_lossy(eps);
        let inv_std: Vec<S> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = vec![S::zero(); xs.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    out[i] = g[ch] * (xs[i] - mean[ch]) * inv_std[ch] + bt[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            Tensor::from_vec(&[n, c, h, w], out),
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            rg,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > S::zero() { v } else { S::zero() },
            Op::Relu(x),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| (S::one() + (-v).exp()).recip(), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = S::from_f64_lossy(c);
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape(),
            vb.shape(),
            "elementwise op on mismatched shapes"
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(va.shape(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x (n x k) * w^T + b` with `w` of shape `out x k`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        assert_eq!(xs.len(), 2);
        assert_eq!(ws.len(), 2);
        assert_eq!(
            xs[1], ws[1],
            "linear: input width {} vs weight {:?}",
            xs[1], ws
        );
        let (n, k, out) = (xs[0], xs[1], ws[0]);
        let mut y = vec![S::zero(); n * out];
        matmul(
            n,
            k,
            out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut y,
            false,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(out) {
                row.iter_mut().zip(bv).for_each(|(v, &bb)| *v += bb);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_vec(&[n, out], y), Op::Linear { x, w, b }, rg)
    }

    /// Concatenate along dimension 1 (channels); `a` comes first.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert_eq!(sa.len(), sb.len());
        assert!(sa.len() >= 2);
        assert_eq!(sa[0], sb[0]);
        assert_eq!(sa[2..], sb[2..], "concat: trailing dims differ");
        let inner: usize = sa[2..].iter().product();
        let (la, lb) = (sa[1] * inner, sb[1] * inner);
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        let mut data = Vec::with_capacity(sa[0] * (la + lb));
        for s in 0..sa[0] {
            data.extend_from_slice(&self.value(a).data()[s * la..(s + 1) * la]);
            data.extend_from_slice(&self.value(b).data()[s * lb..(s + 1) * lb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&shape, data), Op::Concat(a, b), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        let rg = self.rg(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Mean squared error against a constant target, averaged over all elements.
    pub fn mse(&mut self, pred: Var, target: Tensor<S>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse: shape mismatch");
        let n = S::from_usize(p.numel().max(1)).unwrap();
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            / n;
        let rg = self.rg(pred);
        self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<S>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), S::one()));

        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                // Leaves keep their gradient.
                grads[i] = Some(gout);
                continue;
            }
            let mut acc = |v: Var, g: Tensor<S>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(t) => t.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, geom } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let n = xv.shape()[0];
                    let c_out = wv.shape()[0];
                    let (dx, dw, db) = kernels::conv2d_backward(
                        xv.data(),
                        n,
                        geom,
                        wv.data(),
                        c_out,
                        gout.data(),
                        self.rg(*x),
                    );
                    if let Some(dx) = dx {
                        acc(*x, Tensor::from_vec(xv.shape(), dx));
                    }
                    acc(*w, Tensor::from_vec(wv.shape(), dw));
                    if let Some(b) = b {
                        acc(*b, Tensor::from_vec(&[c_out], db));
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, c_in, _, _) = xv.dims4();
                    let (dx, dw, db) = kernels::conv_transpose2d_backward(
                        xv.data(),
                        n,
                        c_in,
                        geom,
                        wv.data(),
                        gout.data(),
                        self.rg(*x),
                    );
                    if let Some(dx) = dx {
                        acc(*x, Tensor::from_vec(xv.shape(), dx));
                    }
                    acc(*w, Tensor::from_vec(wv.shape(), dw));
                    if let Some(b) = b {
                        acc(*b, Tensor::from_vec(&[geom.c_in], db));
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, c, h, w) = gout.dims4();
                    let plane = h * w;
                    let cnt = S::from_usize(n * plane).unwrap();
                    let g = self.value(*gamma).data();
                    let dy = gout.data();
                    let mut dgamma = vec![S::zero(); c];
                    let mut dbeta = vec![S::zero(); c];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for idx in off..off + plane {
                                dbeta[ch] += dy[idx];
                                dgamma[ch] += dy[idx] * xhat[idx];
                            }
                        }
                    }
                    if self.rg(*x) {
                        // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
                        let mut dx = vec![S::zero(); dy.len()];
                        for s in 0..n {
                            for ch in 0..c {
                                let k = g[ch] * inv_std[ch] / cnt;
                                let off = (s * c + ch) * plane;
                                for idx in off..off + plane {
                                    dx[idx] =
                                        k * (cnt * dy[idx] - dbeta[ch] - xhat[idx] * dgamma[ch]);
                                }
                            }
                        }
                        acc(*x, Tensor::from_vec(gout.shape(), dx));
                    }
                    acc(*gamma, Tensor::from_vec(&[c], dgamma));
                    acc(*beta, Tensor::from_vec(&[c], dbeta));
                }
                Op::ChannelAffine {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let (n, c, h, w) = gout.dims4();
                    let plane = h * w;
                    let g = self.value(*gamma).data();
                    let xs = self.value(*x).data();
                    let dy = gout.data();
                    let mut dgamma = vec![S::zero(); c];
                    let mut dbeta = vec![S::zero(); c];
                    let mut dx = vec![S::zero(); dy.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            for idx in off..off + plane {
                                dbeta[ch] += dy[idx];
                                dgamma[ch] += dy[idx] * (xs[idx] - mean[ch]) * inv_std[ch];
                                dx[idx] = dy[idx] * g[ch] * inv_std[ch];
                            }
                        }
                    }
                    acc(*x, Tensor::from_vec(gout.shape(), dx));
                    acc(*gamma, Tensor::from_vec(&[c], dgamma));
                    acc(*beta, Tensor::from_vec(&[c], dbeta));
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let d = gout
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &yv)| if yv > S::zero() { g } else { S::zero() })
                        .collect();
                    acc(*x, Tensor::from_vec(y.shape(), d));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let d = gout
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &yv)| g * yv * (S::one() - yv))
                        .collect();
                    acc(*x, Tensor::from_vec(y.shape(), d));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let d = gout
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &yv)| g * (S::one() - yv * yv))
                        .collect();
                    acc(*x, Tensor::from_vec(y.shape(), d));
                }
                Op::Add(a, b) => {
                    acc(*a, gout.clone());
                    acc(*b, gout);
                }
                Op::Sub(a, b) => {
                    acc(*a, gout.clone());
                    acc(*b, gout.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let da = gout
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    let db = gout
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    acc(*a, Tensor::from_vec(va.shape(), da));
                    acc(*b, Tensor::from_vec(vb.shape(), db));
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    acc(*x, gout.map(|v| v * c));
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, k, out) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                    if self.rg(*x) {
                        let mut dx = vec![S::zero(); n * k];
                        matmul(
                            n,
                            out,
                            k,
                            gout.data(),
                            false,
                            wv.data(),
                            false,
                            &mut dx,
                            false,
                        );
                        acc(*x, Tensor::from_vec(&[n, k], dx));
                    }
                    let mut dw = vec![S::zero(); out * k];
                    matmul(
                        out,
                        n,
                        k,
                        gout.data(),
                        true,
                        xv.data(),
                        false,
                        &mut dw,
                        false,
                    );
                    acc(*w, Tensor::from_vec(&[out, k], dw));
                    if let Some(b) = b {
                        let mut db = vec![S::zero(); out];
                        for row in gout.data().chunks(out) {
                            db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                        acc(*b, Tensor::from_vec(&[out], db));
                    }
                }
                Op::Concat(a, b) => {
                    let (sa, sb) = (
                        self.value(*a).shape().to_vec(),
                        self.value(*b).shape().to_vec(),
                    );
                    let inner: usize = sa[2..].iter().product();
                    let (la, lb) = (sa[1] * inner, sb[1] * inner);
                    let mut da = Vec::with_capacity(sa[0] * la);
                    let mut db = Vec::with_capacity(sa[0] * lb);
                    for chunk in gout.data().chunks(la + lb) {
                        da.extend_from_slice(&chunk[..la]);
                        db.extend_from_slice(&chunk[la..]);
                    }
                    acc(*a, Tensor::from_vec(&sa, da));
                    acc(*b, Tensor::from_vec(&sb, db));
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(*x, gout.reshape(&shape));
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let k = gout.item() * S::from_f64_lossy(2.0)
                        / S::from_usize(p.numel().max(1)).unwrap();
                    let d = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&a, &b)| k * (a - b))
                        .collect();
                    acc(*pred, Tensor::from_vec(p.shape(), d));
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(*x, Tensor::full(&shape, gout.item()));
                }
            }
        }

        let mut out = Vec::with_capacity(self.params.len());
        for slot in &self.params {
            out.push(slot.and_then(|v| grads.get(v.0).and_then(|g| g.clone())));
        }
        Grads { grads: out }
    }
}
