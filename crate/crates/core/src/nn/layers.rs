//! Reusable conv blocks shared by the generators, discriminators and the
//! downstream segmenter.

use serde::{Deserialize, Serialize};

use super::{Graph, Initializer, ParamId, ParamStore, Scalar, Var};

/// Post-conv normalization choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    None,
    /// Per-sample, per-channel normalization with learned affine.
    Instance,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        init: &mut Initializer<'_, impl Scalar>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = init.conv_weight(&format!("{name}.w"), &[out_ch, in_ch, k, k]);
        let b = init.zeros(&format!("{name}.b"), &[out_ch]);
        Conv2d { w, b, stride, pad }
    }

    pub fn forward<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl InstanceNorm {
    pub fn new(init: &mut Initializer<'_, impl Scalar>, name: &str, ch: usize) -> Self {
        let gamma = init.ones(&format!("{name}.gamma"), &[ch]);
        let beta = init.zeros(&format!("{name}.beta"), &[ch]);
        InstanceNorm { gamma, beta }
    }

    pub fn forward<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.instance_norm(x, gamma, beta, A::from_f64(1e-5))
    }
}

/// Activation applied after a conv block.
#[derive(Debug, Clone, Copy)]
pub enum Act {
    None,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// conv -> (norm) -> (activation)
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<InstanceNorm>,
    pub act: Act,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Initializer<'_, impl Scalar>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        norm: Norm,
        act: Act,
    ) -> Self {
        let conv = Conv2d::new(init, name, in_ch, out_ch, k, stride, k / 2);
        let norm = match norm {
            Norm::None => None,
            Norm::Instance => Some(InstanceNorm::new(init, &format!("{name}.norm"), out_ch)),
        };
        ConvBlock { conv, norm, act }
    }

    pub fn forward<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Var {
        let mut out = self.conv.forward(g, store, x);
        if let Some(norm) = &self.norm {
            out = norm.forward(g, store, out);
        }
        match self.act {
            Act::None => out,
            Act::Relu => g.relu(out),
            Act::LeakyRelu(s) => g.leaky_relu(out, A::from_f64(s)),
            Act::Tanh => g.tanh(out),
            Act::Sigmoid => g.sigmoid(out),
        }
    }
}

/// Two 3x3 conv blocks with an additive skip.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub block1: ConvBlock,
    pub block2: ConvBlock,
}

impl ResidualBlock {
    pub fn new(init: &mut Initializer<'_, impl Scalar>, name: &str, ch: usize) -> Self {
        let block1 =
            ConvBlock::new(init, &format!("{name}.c1"), ch, ch, 3, 1, Norm::Instance, Act::Relu);
        let block2 =
            ConvBlock::new(init, &format!("{name}.c2"), ch, ch, 3, 1, Norm::Instance, Act::None);
        ResidualBlock { block1, block2 }
    }

    pub fn forward<A: Scalar>(&self, g: &mut Graph<A>, store: &ParamStore<A>, x: Var) -> Var {
        let h = self.block1.forward(g, store, x);
        let h = self.block2.forward(g, store, h);
        g.add(x, h)
    }
}
