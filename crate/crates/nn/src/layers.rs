//! Parameterized layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and records its computation on a [`Graph`].

use rand::Rng;

use crate::init::{glorot_uniform, he_normal, orthogonal};
use crate::store::{ParamId, ParamStore, RunningStatUpdate};
use crate::{Graph, Real, Tensor, Var};

/// Whether normalization layers use batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            he_normal(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng),
        );
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        // Each output pixel sees c_in * (kernel / stride)^2 inputs.
        let taps = (kernel * kernel / (stride * stride)).max(1);
        let weight = store.add_param(
            format!("{name}.weight"),
            he_normal(&[c_in, c_out, kernel, kernel], c_in * taps, rng),
        );
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv_transpose2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<S: Real>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], S::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(
                format!("{name}.running_var"),
                Tensor::full(&[channels], S::one()),
            ),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        mode: Mode,
    ) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) = g.batch_norm_train(x, gamma, beta, self.eps);
                g.record_running_stats(RunningStatUpdate {
                    mean_buffer: self.running_mean,
                    var_buffer: self.running_var,
                    momentum: self.momentum,
                    batch_mean,
                    batch_var,
                });
                y
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                gamma,
                beta,
                store.get(self.running_mean).data(),
                store.get(self.running_var).data(),
                self.eps,
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_param(
            format!("{name}.weight"),
            glorot_uniform(&[d_out, d_in], d_in, d_out, rng),
        );
        Self::with_weight(store, name, weight, d_out, bias)
    }

    /// Square-or-rectangular layer with an orthogonal weight matrix.
    pub fn new_orthogonal<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_param(format!("{name}.weight"), orthogonal(d_out, d_in, rng));
        Self::with_weight(store, name, weight, d_out, bias)
    }

    fn with_weight<S: Real>(
        store: &mut ParamStore<S>,
        name: &str,
        weight: ParamId,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[d_out])));
        Self { weight, bias }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r = sigmoid(W_ir x + W_hr h)     z = sigmoid(W_iz x + W_hz h)
/// n = tanh(W_in x + r * (W_hn h))  h' = n + z * (h - n)
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub hidden: usize,
    input_r: Linear,
    input_z: Linear,
    input_n: Linear,
    hidden_r: Linear,
    hidden_z: Linear,
    hidden_n: Linear,
}

impl Gru {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden,
            input_r: Linear::new(store, &format!("{name}.input_r"), d_in, hidden, true, rng),
            input_z: Linear::new(store, &format!("{name}.input_z"), d_in, hidden, true, rng),
            input_n: Linear::new(store, &format!("{name}.input_n"), d_in, hidden, true, rng),
            hidden_r: Linear::new_orthogonal(
                store,
                &format!("{name}.hidden_r"),
                hidden,
                hidden,
                true,
                rng,
            ),
            hidden_z: Linear::new_orthogonal(
                store,
                &format!("{name}.hidden_z"),
                hidden,
                hidden,
                true,
                rng,
            ),
            hidden_n: Linear::new_orthogonal(
                store,
                &format!("{name}.hidden_n"),
                hidden,
                hidden,
                true,
                rng,
            ),
        }
    }

    pub fn step<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, h: Var) -> Var {
        let xr = self.input_r.forward(g, store, x);
        let hr = self.hidden_r.forward(g, store, h);
        let pre_r = g.add(xr, hr);
        let r = g.sigmoid(pre_r);
        let xz = self.input_z.forward(g, store, x);
        let hz = self.hidden_z.forward(g, store, h);
        let pre_z = g.add(xz, hz);
        let z = g.sigmoid(pre_z);
        let xn = self.input_n.forward(g, store, x);
        let hn = self.hidden_n.forward(g, store, h);
        let gated = g.mul(r, hn);
        let pre_n = g.add(xn, gated);
        let n = g.tanh(pre_n);
        let diff = g.sub(h, n);
        let carry = g.mul(z, diff);
        g.add(n, carry)
    }

    /// Runs the sequence from a zero state and returns the final hidden state.
    pub fn run<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "empty sequence");
        let batch = g.value(xs[0]).shape()[0];
        let mut h = g.input(Tensor::zeros(&[batch, self.hidden]));
        for &x in xs {
            h = self.step(g, store, x, h);
        }
        h
    }
}
