//! Single-path supernet: every searchable layer is one MBConv block whose
//! depthwise and squeeze kernels are superkernels gated by thresholds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchNormState, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::block::{he_std, lecun_std, mbconv, Backbone, MBConvWeights, SeWeights, BN_EPS, BN_MOMENTUM};
use super::config::{ResolvedLayer, SearchSpaceConfig};
use super::superkernel::{
    compose_kernel_size, decode_rule, effective_kernels, forced_thresholds, hard_norms, Gates, GateSource,
    IndicatorMode, Keep, SubsetMasks, THRESHOLD_NAMES,
};
use super::types::Architecture;

/// Parameter handles of one searchable layer.
#[derive(Clone, Debug)]
pub struct SuperLayer {
    pub spec: ResolvedLayer,
    pub masks: SubsetMasks,
    pub expand: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub bn: usize,
    /// `E x 1 x 5 x 5` at maximum expansion.
    pub depthwise: ParamId,
    /// `S x E x 1 x 1` at SE ratio 0.5.
    pub squeeze: ParamId,
    pub se_expand: ParamId,
    pub se_bias: ParamId,
    pub project: ParamId,
    /// `t_k5, t_e3, t_e6, t_se25, t_se50`.
    pub thresholds: [ParamId; 5],
}

/// How the forward pass obtains indicator values.
#[derive(Clone, Copy, Debug)]
pub enum Encoding<'a> {
    Thresholds(IndicatorMode),
    /// Externally computed relaxed indicators, one set per layer.
    Given(&'a [Gates<Var>]),
}

#[derive(Clone, Debug)]
pub struct SupernetOutput {
    pub logits: Var,
    /// Indicators per layer before dropout.
    pub gates: Vec<Gates<Var>>,
}

#[derive(Clone, Debug)]
pub struct Supernet<T: Scalar> {
    pub config: SearchSpaceConfig,
    pub layers: Vec<SuperLayer>,
    pub backbone: Backbone,
    pub params: ParamStore<T>,
    pub bn: Vec<BatchNormState<T>>,
}

impl<T: Scalar> Supernet<T> {
    /// Randomly initialized supernet with every threshold set to the initial
    /// value of its subset norm (all sigmoid indicators start at 0.5).
    pub fn new(config: &SearchSpaceConfig, seed: u64) -> Result<Self> {
        let resolved = config.resolve()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let stem = Backbone::init_stem(config, &mut params, &mut bn, &mut rng);
        let mut layers = Vec::with_capacity(resolved.len());
        for spec in resolved {
            let (c, e, s, o) = (spec.in_channels, spec.max_expanded(), spec.max_squeeze(), spec.out_channels);
            let p = |n: &str| format!("layer{}.{n}", spec.index);
            let expand = params.add(p("expand"), Tensor::randn(&[e, c, 1, 1], he_std(c), &mut rng));
            let gamma = params.add(p("gamma"), Tensor::full(&[e], T::one()));
            let beta = params.add(p("beta"), Tensor::zeros(&[e]));
            bn.push(BatchNormState::new(e, BN_MOMENTUM, BN_EPS));
            let depthwise = params.add(p("depthwise"), Tensor::randn(&[e, 1, 5, 5], he_std(25), &mut rng));
            let squeeze = params.add(p("se_squeeze"), Tensor::randn(&[s, e, 1, 1], lecun_std(e), &mut rng));
            let se_expand = params.add(p("se_expand"), Tensor::randn(&[e, s, 1, 1], lecun_std(s), &mut rng));
            let se_bias = params.add(p("se_bias"), Tensor::zeros(&[e]));
            let project = params.add(p("project"), Tensor::randn(&[o, e, 1, 1], lecun_std(e), &mut rng));
            let thresholds = THRESHOLD_NAMES.map(|n| params.add(p(n), Tensor::scalar(T::zero())));
            layers.push(SuperLayer {
                masks: SubsetMasks::new(&spec),
                spec,
                expand,
                gamma,
                beta,
                bn: bn.len() - 1,
                depthwise,
                squeeze,
                se_expand,
                se_bias,
                project,
                thresholds,
            });
        }
        let backbone = Backbone::init_head(config, stem, &mut params, &mut bn, &mut rng);
        let mut net = Supernet {
            config: config.clone(),
            layers,
            backbone,
            params,
            bn,
        };
        net.init_thresholds()?;
        Ok(net)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Sets each threshold to its subset norm with every relaxed indicator
    /// held at 0.5.
    pub fn init_thresholds(&mut self) -> Result<()> {
        let mut g = Graph::new(0);
        let bound = self.params.bind_frozen(&mut g);
        let half = g.scalar(T::lit(0.5));
        let mut values = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (dw, sq, m) = (bound.get(layer.depthwise), bound.get(layer.squeeze), &layer.masks);
            let k5 = g.group_lasso_sq_norm(dw, &m.shell)?;
            let wk = compose_kernel_size(&mut g, dw, m, half)?;
            let e3 = g.group_lasso_sq_norm(wk, &m.first_half)?;
            let e6 = g.group_lasso_sq_norm(wk, &m.second_half)?;
            let se25 = g.group_lasso_sq_norm(sq, &m.se_quarter)?;
            let se50 = g.group_lasso_sq_norm(sq, &m.se_shell)?;
            values.push(Gates { k5, e3, e6, se25, se50 }.map(|v| g.value(v).item()));
        }
        for (i, v) in values.into_iter().enumerate() {
            self.set_thresholds(i, &v);
        }
        Ok(())
    }

    pub fn thresholds(&self, layer: usize) -> Gates<T> {
        Gates::from_array(self.layers[layer].thresholds.map(|id| self.params.get(id).item()))
    }

    pub fn set_thresholds(&mut self, layer: usize, t: &Gates<T>) {
        let ids = self.layers[layer].thresholds;
        for (id, v) in ids.into_iter().zip(t.to_array()) {
            self.params.get_mut(id).data_mut()[0] = v;
        }
    }

    /// Pins the thresholds so the hard (and saturated sigmoid) indicators
    /// select `arch`.
    pub fn force_architecture(&mut self, arch: &Architecture) -> Result<()> {
        if arch.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "architecture has {} layers, supernet has {}",
                arch.len(),
                self.layers.len()
            )));
        }
        for (i, ty) in arch.layers().iter().enumerate() {
            let forced = forced_thresholds(*ty, self.layers[i].spec.skippable())?;
            self.set_thresholds(i, &forced.map(T::lit));
        }
        Ok(())
    }

    /// Hard-indicator architecture implied by the current weights and thresholds.
    pub fn decode(&self) -> Architecture {
        Architecture(
            (0..self.layers.len())
                .map(|i| {
                    let l = &self.layers[i];
                    let t = self.thresholds(i);
                    let norms = hard_norms(self.params.get(l.depthwise), self.params.get(l.squeeze), &l.masks, t.k5);
                    decode_rule(&norms, &t, l.spec.skippable())
                })
                .collect(),
        )
    }

    /// Per-layer normalized subset norms used by [`Supernet::decode`].
    pub fn hard_norms(&self, layer: usize) -> Gates<T> {
        let l = &self.layers[layer];
        hard_norms(
            self.params.get(l.depthwise),
            self.params.get(l.squeeze),
            &l.masks,
            self.thresholds(layer).k5,
        )
    }

    pub fn trainable_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Handles of every threshold parameter.
    pub fn threshold_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.thresholds).collect()
    }

    /// Indicators of every layer without running the network.
    pub fn gates(&self, g: &mut Graph<T>, b: &Bound, mode: IndicatorMode) -> Result<Vec<Gates<Var>>> {
        self.layers
            .iter()
            .map(|l| {
                let t = Gates::from_array(l.thresholds.map(|id| b.get(id)));
                let source = GateSource::Thresholds { thresholds: &t, mode };
                let eff = effective_kernels(
                    g,
                    b.get(l.depthwise),
                    b.get(l.squeeze),
                    &l.masks,
                    l.spec.skippable(),
                    source,
                    Keep::ALL,
                )?;
                Ok(eff.gates)
            })
            .collect()
    }

    /// One searchable layer.
    #[allow(clippy::too_many_arguments)]
    pub fn layer_forward(
        &mut self,
        g: &mut Graph<T>,
        b: &Bound,
        layer: usize,
        x: Var,
        encoding: Encoding<'_>,
        keep: Keep,
        train: bool,
    ) -> Result<(Var, Gates<Var>)> {
        let l = &self.layers[layer];
        let skippable = l.spec.skippable();
        let threshold_vars = Gates::from_array(l.thresholds.map(|id| b.get(id)));
        let source = match encoding {
            Encoding::Thresholds(mode) => GateSource::Thresholds {
                thresholds: &threshold_vars,
                mode,
            },
            Encoding::Given(gates) => GateSource::Given(gates.get(layer).ok_or_else(|| {
                Error::Config(format!("no indicators supplied for layer {layer}"))
            })?),
        };
        let eff = effective_kernels(g, b.get(l.depthwise), b.get(l.squeeze), &l.masks, skippable, source, keep)?;
        let weights = MBConvWeights {
            expand: b.get(l.expand),
            gamma: b.get(l.gamma),
            beta: b.get(l.beta),
            depthwise: eff.depthwise,
            se: Some(SeWeights {
                squeeze: eff.squeeze,
                expand: b.get(l.se_expand),
                bias: b.get(l.se_bias),
                gate: Some(eff.applied.se25),
            }),
            project: b.get(l.project),
        };
        let (stride, bn) = (l.spec.stride, l.bn);
        let y = mbconv(g, x, &weights, &mut self.bn[bn], stride, skippable, train)?;
        Ok((y, eff.gates))
    }

    /// Full forward pass. `keep` holds one dropout draw per layer, or `None`
    /// for no dropout.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        encoding: Encoding<'_>,
        keep: Option<&[Keep]>,
        train: bool,
    ) -> Result<SupernetOutput> {
        let mut h = self.backbone.stem_forward(g, b, &mut self.bn, x, train)?;
        let mut gates = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let k = keep.map_or(Keep::ALL, |k| k[i]);
            let (y, gv) = self.layer_forward(g, b, i, h, encoding, k, train)?;
            h = y;
            gates.push(gv);
        }
        let logits = self.backbone.head_forward(g, b, &mut self.bn, h, train)?;
        Ok(SupernetOutput { logits, gates })
    }
}
