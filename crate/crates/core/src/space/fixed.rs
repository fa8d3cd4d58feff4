//! Compact (non-super) networks built from a concrete architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchNormState, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

use super::block::{he_std, lecun_std, mbconv, Backbone, MBConvWeights, SeWeights, BN_EPS, BN_MOMENTUM};
use super::config::{ResolvedLayer, SearchSpaceConfig};
use super::supernet::Supernet;
use super::types::{Architecture, MBConvType};

/// Anything the generic trainer can fit: a parameter store plus a forward pass.
pub trait Classifier<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    /// Logits `[N, classes]` for an `N x C x H x W` input.
    fn logits(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, train: bool) -> Result<Var>;
}

#[derive(Clone, Debug)]
pub struct FixedSe {
    pub squeeze: ParamId,
    pub expand: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct FixedBlock {
    pub expand: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub bn: usize,
    pub depthwise: ParamId,
    pub se: Option<FixedSe>,
    pub project: ParamId,
    /// Inner 3x3 window of a 5x5 depthwise kernel.
    pub inner: Option<Mask>,
}

#[derive(Clone, Debug)]
pub struct FixedLayer {
    pub spec: ResolvedLayer,
    pub ty: MBConvType,
    /// `None` for the skip-op.
    pub block: Option<FixedBlock>,
}

/// Which part of the depthwise kernels a forward pass uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KernelView {
    #[default]
    Full,
    /// Zero the 5x5 shell so every kernel acts as its inner 3x3.
    Inner3x3,
}

#[derive(Clone, Debug)]
pub struct FixedNet<T: Scalar> {
    pub config: SearchSpaceConfig,
    pub arch: Architecture,
    pub layers: Vec<FixedLayer>,
    pub backbone: Backbone,
    pub params: ParamStore<T>,
    pub bn: Vec<BatchNormState<T>>,
    pub view: KernelView,
}

impl<T: Scalar> FixedNet<T> {
    /// Randomly initialized network; the draw order mirrors [`Supernet::new`].
    pub fn new(config: &SearchSpaceConfig, arch: &Architecture, seed: u64) -> Result<Self> {
        let resolved = config.resolve()?;
        check_arch(&resolved, arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let stem = Backbone::init_stem(config, &mut params, &mut bn, &mut rng);
        let mut layers = Vec::with_capacity(resolved.len());
        for (spec, &ty) in resolved.into_iter().zip(arch.layers()) {
            let block = init_block(&mut params, &mut bn, &spec, ty, &mut rng);
            layers.push(FixedLayer { spec, ty, block });
        }
        let backbone = Backbone::init_head(config, stem, &mut params, &mut bn, &mut rng);
        Ok(FixedNet {
            config: config.clone(),
            arch: arch.clone(),
            layers,
            backbone,
            params,
            bn,
            view: KernelView::Full,
        })
    }

    /// Standalone network whose weights (and normalization statistics) are
    /// the subsets of `net`'s superkernels selected by `arch`.
    pub fn from_supernet(net: &Supernet<T>, arch: &Architecture) -> Result<Self> {
        let mut fixed = FixedNet::new(&net.config, arch, 0)?;
        let copy = |fixed: &mut FixedNet<T>, dst: ParamId, src: &Tensor<T>| {
            let shape = fixed.params.get(dst).shape().to_vec();
            *fixed.params.get_mut(dst) = crop(src, &shape);
        };
        let b = &fixed.backbone.clone();
        let nb = &net.backbone;
        for (dst, src) in [
            (b.stem.weight, nb.stem.weight),
            (b.stem.gamma, nb.stem.gamma),
            (b.stem.beta, nb.stem.beta),
            (b.head.weight, nb.head.weight),
            (b.head.gamma, nb.head.gamma),
            (b.head.beta, nb.head.beta),
            (b.fc_weight, nb.fc_weight),
            (b.fc_bias, nb.fc_bias),
        ] {
            copy(&mut fixed, dst, net.params.get(src));
        }
        fixed.bn[b.stem.bn] = net.bn[nb.stem.bn].clone();
        fixed.bn[b.head.bn] = net.bn[nb.head.bn].clone();
        for i in 0..fixed.layers.len() {
            let Some(fb) = fixed.layers[i].block.clone() else { continue };
            let sl = &net.layers[i];
            copy(&mut fixed, fb.expand, net.params.get(sl.expand));
            copy(&mut fixed, fb.gamma, net.params.get(sl.gamma));
            copy(&mut fixed, fb.beta, net.params.get(sl.beta));
            copy(&mut fixed, fb.depthwise, net.params.get(sl.depthwise));
            copy(&mut fixed, fb.project, net.params.get(sl.project));
            if let Some(se) = &fb.se {
                copy(&mut fixed, se.squeeze, net.params.get(sl.squeeze));
                copy(&mut fixed, se.expand, net.params.get(sl.se_expand));
                copy(&mut fixed, se.bias, net.params.get(sl.se_bias));
            }
            let e = fixed.params.get(fb.gamma).numel();
            let src = &net.bn[sl.bn];
            let mut state = BatchNormState::new(e, BN_MOMENTUM, BN_EPS);
            state.running_mean = src.running_mean[..e].to_vec();
            state.running_var = src.running_var[..e].to_vec();
            fixed.bn[fb.bn] = state;
        }
        Ok(fixed)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn layer_forward(&mut self, g: &mut Graph<T>, b: &Bound, layer: usize, x: Var, train: bool) -> Result<Var> {
        let l = &self.layers[layer];
        match &l.block {
            None => Ok(x),
            Some(fb) => block_forward(g, b, &mut self.bn, &l.spec, fb, x, self.view, train),
        }
    }

    pub fn forward(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, train: bool) -> Result<Var> {
        let mut h = self.backbone.stem_forward(g, b, &mut self.bn, x, train)?;
        for i in 0..self.layers.len() {
            h = self.layer_forward(g, b, i, h, train)?;
        }
        self.backbone.head_forward(g, b, &mut self.bn, h, train)
    }
}

impl<T: Scalar> Classifier<T> for FixedNet<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn logits(&mut self, g: &mut Graph<T>, b: &Bound, x: Var, train: bool) -> Result<Var> {
        self.forward(g, b, x, train)
    }
}

/// Parameters of one block of type `ty` (`None` for the skip-op).
pub fn init_block<T: Scalar, R: Rng>(
    params: &mut ParamStore<T>,
    bn: &mut Vec<BatchNormState<T>>,
    spec: &ResolvedLayer,
    ty: MBConvType,
    rng: &mut R,
) -> Option<FixedBlock> {
    let MBConvType::Block { kernel, expansion, se } = ty else {
        return None;
    };
    let (c, o) = (spec.in_channels, spec.out_channels);
    let e = spec.expanded(expansion as usize);
    let k = kernel as usize;
    let p = |n: &str| format!("layer{}.{n}", spec.index);
    let expand = params.add(p("expand"), Tensor::randn(&[e, c, 1, 1], he_std(c), rng));
    let gamma = params.add(p("gamma"), Tensor::full(&[e], T::one()));
    let beta = params.add(p("beta"), Tensor::zeros(&[e]));
    bn.push(BatchNormState::new(e, BN_MOMENTUM, BN_EPS));
    let depthwise = params.add(p("depthwise"), Tensor::randn(&[e, 1, k, k], he_std(k * k), rng));
    let se = (se.value() > 0.0).then(|| {
        let s = spec.squeeze(se.value());
        FixedSe {
            squeeze: params.add(p("se_squeeze"), Tensor::randn(&[s, e, 1, 1], lecun_std(e), rng)),
            expand: params.add(p("se_expand"), Tensor::randn(&[e, s, 1, 1], lecun_std(s), rng)),
            bias: params.add(p("se_bias"), Tensor::zeros(&[e])),
        }
    });
    let project = params.add(p("project"), Tensor::randn(&[o, e, 1, 1], lecun_std(e), rng));
    Some(FixedBlock {
        expand,
        gamma,
        beta,
        bn: bn.len() - 1,
        depthwise,
        se,
        project,
        inner: (k == 5).then(|| inner_window(e)),
    })
}

/// Forward pass of one standalone block.
#[allow(clippy::too_many_arguments)]
pub fn block_forward<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    bns: &mut [BatchNormState<T>],
    spec: &ResolvedLayer,
    fb: &FixedBlock,
    x: Var,
    view: KernelView,
    train: bool,
) -> Result<Var> {
    let mut depthwise = b.get(fb.depthwise);
    if let (KernelView::Inner3x3, Some(inner)) = (view, &fb.inner) {
        depthwise = g.mask(depthwise, inner)?;
    }
    let weights = MBConvWeights {
        expand: b.get(fb.expand),
        gamma: b.get(fb.gamma),
        beta: b.get(fb.beta),
        depthwise,
        se: fb.se.as_ref().map(|se| SeWeights {
            squeeze: b.get(se.squeeze),
            expand: b.get(se.expand),
            bias: b.get(se.bias),
            gate: None,
        }),
        project: b.get(fb.project),
    };
    mbconv(g, x, &weights, &mut bns[fb.bn], spec.stride, spec.skippable(), train)
}

fn check_arch(resolved: &[ResolvedLayer], arch: &Architecture) -> Result<()> {
    if arch.len() != resolved.len() {
        return Err(Error::Config(format!(
            "architecture has {} layers, backbone has {}",
            arch.len(),
            resolved.len()
        )));
    }
    for (spec, ty) in resolved.iter().zip(arch.layers()) {
        if ty.is_skip() && !spec.skippable() {
            return Err(Error::Config(format!(
                "layer {} changes stride or width and cannot be skipped",
                spec.index
            )));
        }
    }
    Ok(())
}

fn inner_window(channels: usize) -> Mask {
    Mask::from_fn(&[channels, 1, 5, 5], |i| (1..4).contains(&i[2]) && (1..4).contains(&i[3]))
}

/// Leading block of `src` along every axis, except that spatial axes
/// (2 and 3 of a 4-D tensor) are cropped symmetrically around the center.
fn crop<T: Scalar>(src: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let ss = src.shape();
    let offset: Vec<usize> = (0..shape.len())
        .map(|a| if ss.len() == 4 && a >= 2 { (ss[a] - shape[a]) / 2 } else { 0 })
        .collect();
    let mut strides = vec![1; ss.len()];
    for a in (0..ss.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * ss[a + 1];
    }
    let n: usize = shape.iter().product();
    let mut idx = vec![0; shape.len()];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let flat: usize = idx.iter().zip(&offset).zip(&strides).map(|((i, o), s)| (i + o) * s).sum();
        data.push(src.data()[flat]);
        for a in (0..shape.len()).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::new(shape.to_vec(), data).expect("crop preserves element count")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_takes_center_window_and_leading_channels() {
        let t = Tensor::new(vec![2, 1, 5, 5], (0..50).map(|v| v as f64).collect()).unwrap();
        let c = crop(&t, &[1, 1, 3, 3]);
        assert_eq!(c.data(), &[6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]);
        let m = Tensor::new(vec![3, 2], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(crop(&m, &[2, 2]).data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn skip_rejected_on_stride_two_layer() {
        let cfg = SearchSpaceConfig::default();
        let mut arch = vec![MBConvType::MIN; cfg.num_layers()];
        arch[1] = MBConvType::Skip;
        assert!(FixedNet::<f64>::new(&cfg, &Architecture(arch), 0).is_err());
    }
}
