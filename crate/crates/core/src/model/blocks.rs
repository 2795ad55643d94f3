use nowcast_nn::layers::{BatchNorm2d, Conv2d, ConvTranspose2d};
use nowcast_nn::{Graph, Mode, ParamStore, Real, Var};
use rand::Rng;

/// `conv -> BN`, optionally followed by ReLU.
#[derive(Clone, Debug)]
pub(crate) struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                c_in,
                c_out,
                kernel,
                stride,
                pad,
                false,
                rng,
            ),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        mode: Mode,
        relu: bool,
    ) -> Var {
        let y = self.conv.forward(g, store, x);
        let y = self.bn.forward(g, store, y, mode);
        if relu {
            g.relu(y)
        } else {
            y
        }
    }
}

/// Basic residual block: `relu(x + bn(conv(relu(bn(conv(x))))))`.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    a: ConvBn,
    b: ConvBn,
}

impl ResBlock {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        ch: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            a: ConvBn::new(store, &format!("{name}.a"), ch, ch, 3, 1, 1, rng),
            b: ConvBn::new(store, &format!("{name}.b"), ch, ch, 3, 1, 1, rng),
        }
    }

    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        mode: Mode,
    ) -> Var {
        let y = self.a.forward(g, store, x, mode, true);
        let y = self.b.forward(g, store, y, mode, false);
        let s = g.add(x, y);
        g.relu(s)
    }
}

/// Residual x2 upsampling:
/// `relu(bn(conv3x3(relu(bn(up(x)))) + up_skip(x)))`, where both `up` are
/// 2x2 stride-2 transposed convolutions.
#[derive(Clone, Debug)]
pub(crate) struct ResUp {
    up: ConvTranspose2d,
    up_bn: BatchNorm2d,
    conv: Conv2d,
    skip: ConvTranspose2d,
    out_bn: BatchNorm2d,
}

impl ResUp {
    pub fn new<S: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            up: ConvTranspose2d::new(
                store,
                &format!("{name}.up"),
                c_in,
                c_out,
                2,
                2,
                0,
                false,
                rng,
            ),
            up_bn: BatchNorm2d::new(store, &format!("{name}.up_bn"), c_out),
            conv: Conv2d::new(
                store,
                &format!("{name}.conv"),
                c_out,
                c_out,
                3,
                1,
                1,
                false,
                rng,
            ),
            skip: ConvTranspose2d::new(
                store,
                &format!("{name}.skip"),
                c_in,
                c_out,
                2,
                2,
                0,
                false,
                rng,
            ),
            out_bn: BatchNorm2d::new(store, &format!("{name}.out_bn"), c_out),
        }
    }

    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
        mode: Mode,
    ) -> Var {
        let y = self.up.forward(g, store, x);
        let y = self.up_bn.forward(g, store, y, mode);
        let y = g.relu(y);
        let y = self.conv.forward(g, store, y);
        let s = self.skip.forward(g, store, x);
        let sum = g.add(y, s);
        let sum = self.out_bn.forward(g, store, sum, mode);
        g.relu(sum)
    }
}
