//! Stem, head and MBConv block wiring shared by the supernet and fixed networks.

use rand::Rng;

use crate::autodiff::{BatchNormState, Graph, Padding, Var};
use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::SearchSpaceConfig;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// He-normal standard deviation for a fan-in.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Linear-layer standard deviation for a fan-in.
pub fn lecun_std(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Parameters of a conv -> BN -> ReLU6 stage.
#[derive(Clone, Copy, Debug)]
pub struct ConvBn {
    pub weight: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub bn: usize,
}

impl ConvBn {
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        bns: &mut Vec<BatchNormState<T>>,
        name: &str,
        shape: [usize; 4],
        rng: &mut R,
    ) -> Self {
        let fan_in = shape[1] * shape[2] * shape[3];
        let weight = store.add(format!("{name}.weight"), Tensor::randn(&shape, he_std(fan_in), rng));
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[shape[0]], T::one()));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[shape[0]]));
        bns.push(BatchNormState::new(shape[0], BN_MOMENTUM, BN_EPS));
        ConvBn {
            weight,
            gamma,
            beta,
            bn: bns.len() - 1,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        bns: &mut [BatchNormState<T>],
        x: Var,
        stride: usize,
        train: bool,
    ) -> Result<Var> {
        let y = g.conv2d(x, b.get(self.weight), stride, Padding::Same)?;
        let y = g.batchnorm(y, b.get(self.gamma), b.get(self.beta), &mut bns[self.bn], train)?;
        g.relu6(y)
    }
}

/// Fixed stem and classifier head around the searchable layers.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: ConvBn,
    pub stem_stride: usize,
    pub head: ConvBn,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
}

impl Backbone {
    /// Stem parameters; call before any layer is initialized.
    pub fn init_stem<T: Scalar, R: Rng>(
        cfg: &SearchSpaceConfig,
        store: &mut ParamStore<T>,
        bns: &mut Vec<BatchNormState<T>>,
        rng: &mut R,
    ) -> ConvBn {
        ConvBn::init(store, bns, "stem", [cfg.stem_channels, cfg.in_channels, 3, 3], rng)
    }

    /// Head parameters; call after every layer is initialized.
    pub fn init_head<T: Scalar, R: Rng>(
        cfg: &SearchSpaceConfig,
        stem: ConvBn,
        store: &mut ParamStore<T>,
        bns: &mut Vec<BatchNormState<T>>,
        rng: &mut R,
    ) -> Self {
        let head = ConvBn::init(store, bns, "head", [cfg.head_channels, cfg.last_channels(), 1, 1], rng);
        let fc_weight = store.add(
            "fc.weight",
            Tensor::randn(&[cfg.head_channels, cfg.classes], lecun_std(cfg.head_channels), rng),
        );
        let fc_bias = store.add("fc.bias", Tensor::zeros(&[cfg.classes]));
        Backbone {
            stem,
            stem_stride: cfg.stem_stride,
            head,
            fc_weight,
            fc_bias,
        }
    }

    pub fn stem_forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        bns: &mut [BatchNormState<T>],
        x: Var,
        train: bool,
    ) -> Result<Var> {
        self.stem.forward(g, b, bns, x, self.stem_stride, train)
    }

    pub fn head_forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        bns: &mut [BatchNormState<T>],
        x: Var,
        train: bool,
    ) -> Result<Var> {
        let h = self.head.forward(g, b, bns, x, 1, train)?;
        let pooled = g.global_avg_pool(h)?;
        let logits = g.matmul(pooled, b.get(self.fc_weight))?;
        g.add_row_bias(logits, b.get(self.fc_bias))
    }
}

/// Squeeze-and-excitation branch weights.
#[derive(Clone, Copy, Debug)]
pub struct SeWeights {
    /// `S x E x 1 x 1`, no bias.
    pub squeeze: Var,
    /// `E x S x 1 x 1`.
    pub expand: Var,
    /// `[E]`.
    pub bias: Var,
    /// Optional soft on/off gate: the channel multiplier becomes
    /// `1 + gate * (sigmoid(z) - 1)`, so a closed gate is a passthrough.
    pub gate: Option<Var>,
}

/// Effective weights of one MBConv block.
#[derive(Clone, Copy, Debug)]
pub struct MBConvWeights {
    pub expand: Var,
    pub gamma: Var,
    pub beta: Var,
    pub depthwise: Var,
    pub se: Option<SeWeights>,
    pub project: Var,
}

/// Pointwise expand -> BN -> ReLU6 -> depthwise -> ReLU6 -> SE -> linear
/// pointwise projection, plus the residual when `residual` is set.
///
/// Normalization sits only on the expansion stage: a zeroed depthwise
/// channel then stays exactly zero through the rest of the block.
pub fn mbconv<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: &MBConvWeights,
    bn: &mut BatchNormState<T>,
    stride: usize,
    residual: bool,
    train: bool,
) -> Result<Var> {
    let h = g.conv2d(x, w.expand, 1, Padding::Same)?;
    let h = g.batchnorm(h, w.gamma, w.beta, bn, train)?;
    let h = g.relu6(h)?;
    let h = g.depthwise_conv2d(h, w.depthwise, stride, Padding::Same)?;
    let mut h = g.relu6(h)?;
    if let Some(se) = &w.se {
        h = squeeze_excite(g, h, se)?;
    }
    let out = g.conv2d(h, w.project, 1, Padding::Same)?;
    if residual {
        g.add(out, x)
    } else {
        Ok(out)
    }
}

fn squeeze_excite<T: Scalar>(g: &mut Graph<T>, h: Var, se: &SeWeights) -> Result<Var> {
    let [n, c, _, _] = g.value(h).nchw("squeeze_excite")?;
    let pooled = g.global_avg_pool(h)?;
    let pooled = g.reshape(pooled, &[n, c, 1, 1])?;
    let z = g.conv2d(pooled, se.squeeze, 1, Padding::Same)?;
    let z = g.relu6(z)?;
    let z = g.conv2d(z, se.expand, 1, Padding::Same)?;
    let z = g.reshape(z, &[n, c])?;
    let z = g.add_row_bias(z, se.bias)?;
    let mut gate = g.sigmoid(z)?;
    if let Some(on) = se.gate {
        let centered = g.affine(gate, T::one(), -T::one())?;
        let scaled = g.scale(centered, on)?;
        gate = g.affine(scaled, T::one(), T::one())?;
    }
    g.mul_channels(h, gate)
}
