//! Softmax-encoded baselines trained by alternating weight and architecture
//! steps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchNormState, Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latency::RuntimeModel;
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::space::block::Backbone;
use crate::space::fixed::{block_forward, init_block, FixedBlock, KernelView};
use crate::space::superkernel::decode_rule;
use crate::space::{Architecture, Encoding, Gates, MBConvType, ResolvedLayer, SearchSpaceConfig, Supernet};
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::config::{SearchConfig, Variant};
use super::optim::{LrSchedule, Sgd, Update};
use super::search::{diverged, finish_report, grad_norm, is_numeric, latency_loss, Phase, PhaseAudit, RunOptions, SearchReport, StepLog};
use super::train::Batches;

/// Two-way decision groups per layer, in [`Gates`] order: kernel 3/5,
/// skip/keep, expansion 3/6, SE off/on, SE 0.25/0.5.
pub const GROUPS: [&str; 5] = ["tau_k", "tau_skip", "tau_e", "tau_se", "tau_se_ratio"];

/// Gumbel(0, 1) noise.
fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Softmax of `logits` after optional Gumbel perturbation.
fn probabilities<T: Scalar>(g: &mut Graph<T>, logits: Var, gumbel_temperature: Option<f64>) -> Result<Var> {
    let Some(temp) = gumbel_temperature else {
        return g.softmax(logits);
    };
    let n = g.value(logits).numel();
    let noise: Vec<T> = (0..n).map(|_| T::lit(gumbel(g.rng()))).collect();
    let noise = g.constant(Tensor::new(vec![n], noise)?);
    let perturbed = g.add(logits, noise)?;
    let scaled = g.affine(perturbed, T::lit(1.0 / temp), T::zero())?;
    g.softmax(scaled)
}

/// Per-layer binary softmax logits over the threshold decisions, shared
/// superkernel weights.
#[derive(Clone, Debug)]
pub struct SoftmaxEncoding<T: Scalar> {
    pub logits: ParamStore<T>,
    /// `[layer][group]`.
    pub ids: Vec<[ParamId; 5]>,
}

impl<T: Scalar> SoftmaxEncoding<T> {
    /// All logits zero: every decision starts at probability 0.5.
    pub fn new(layers: usize) -> Self {
        let mut logits = ParamStore::new();
        let ids = (0..layers)
            .map(|i| GROUPS.map(|n| logits.add(format!("layer{i}.{n}"), Tensor::zeros(&[2]))))
            .collect();
        SoftmaxEncoding { logits, ids }
    }

    /// Probability of the second option of every group.
    pub fn gates(&self, g: &mut Graph<T>, b: &Bound, gumbel_temperature: Option<f64>) -> Result<Vec<Gates<Var>>> {
        self.ids
            .iter()
            .map(|ids| {
                let mut v = Vec::with_capacity(5);
                for &id in ids {
                    let p = probabilities(g, b.get(id), gumbel_temperature)?;
                    v.push(g.select(p, 1)?);
                }
                Ok(Gates::from_array([v[0], v[1], v[2], v[3], v[4]]))
            })
            .collect()
    }

    pub fn probabilities(&self, layer: usize) -> Gates<f64> {
        Gates::from_array(self.ids[layer].map(|id| {
            let t = self.logits.get(id).data();
            let (a, b) = (t[0].as_f64(), t[1].as_f64());
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            eb / (ea + eb)
        }))
    }

    /// Argmax per group; ties choose the first option.
    pub fn decode(&self, layers: &[ResolvedLayer]) -> Architecture {
        Architecture(
            layers
                .iter()
                .enumerate()
                .map(|(i, l)| decode_rule(&self.probabilities(i), &Gates::splat(0.5), l.skippable()))
                .collect(),
        )
    }

    /// Draws each decision from its softmax.
    pub fn sample<R: Rng>(&self, layers: &[ResolvedLayer], rng: &mut R) -> Architecture {
        Architecture(
            layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let p = self.probabilities(i);
                    let draw = Gates::from_array(p.to_array().map(|q| if rng.gen::<f64>() < q { 1.0 } else { 0.0 }));
                    decode_rule(&draw, &Gates::splat(0.5), l.skippable())
                })
                .collect(),
        )
    }
}

/// Candidate blocks of one layer with independent weights.
#[derive(Clone, Debug)]
pub struct MultiPathLayer {
    pub spec: ResolvedLayer,
    pub candidates: Vec<(MBConvType, Option<FixedBlock>)>,
    /// Path logits `[N]` in the architecture store.
    pub alpha: ParamId,
}

/// Multi-path supernet: each layer outputs the softmax-weighted sum of all
/// candidate blocks.
#[derive(Clone, Debug)]
pub struct MultiPathNet<T: Scalar> {
    pub config: SearchSpaceConfig,
    pub backbone: Backbone,
    pub layers: Vec<MultiPathLayer>,
    pub params: ParamStore<T>,
    pub arch: ParamStore<T>,
    pub bn: Vec<BatchNormState<T>>,
}

impl<T: Scalar> MultiPathNet<T> {
    /// Every candidate type of every layer.
    pub fn new(config: &SearchSpaceConfig, seed: u64) -> Result<Self> {
        let cands = config
            .resolve()?
            .iter()
            .map(|l| MBConvType::candidates(l.skippable()))
            .collect();
        Self::with_candidates(config, cands, seed)
    }

    pub fn with_candidates(config: &SearchSpaceConfig, candidates: Vec<Vec<MBConvType>>, seed: u64) -> Result<Self> {
        let resolved = config.resolve()?;
        if candidates.len() != resolved.len() || candidates.iter().any(Vec::is_empty) {
            return Err(Error::Config("need a non-empty candidate list per layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut arch = ParamStore::new();
        let mut bn = Vec::new();
        let stem = Backbone::init_stem(config, &mut params, &mut bn, &mut rng);
        let mut layers = Vec::with_capacity(resolved.len());
        for (spec, cands) in resolved.into_iter().zip(candidates) {
            let mut blocks = Vec::with_capacity(cands.len());
            for ty in cands {
                if ty.is_skip() && !spec.skippable() {
                    return Err(Error::Config(format!("layer {} cannot be skipped", spec.index)));
                }
                blocks.push((ty, init_block(&mut params, &mut bn, &spec, ty, &mut rng)));
            }
            let alpha = arch.add(format!("layer{}.alpha", spec.index), Tensor::zeros(&[blocks.len()]));
            layers.push(MultiPathLayer {
                spec,
                candidates: blocks,
                alpha,
            });
        }
        let backbone = Backbone::init_head(config, stem, &mut params, &mut bn, &mut rng);
        Ok(MultiPathNet {
            config: config.clone(),
            backbone,
            layers,
            params,
            arch,
            bn,
        })
    }

    /// Logits and, per layer, the path weights `[N]`.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        w: &Bound,
        a: &Bound,
        x: Var,
        gumbel_temperature: Option<f64>,
        train: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = self.backbone.stem_forward(g, w, &mut self.bn, x, train)?;
        let mut weights = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let alpha = probabilities(g, a.get(l.alpha), gumbel_temperature)?;
            let mut acc: Option<Var> = None;
            for (j, (_, block)) in l.candidates.iter().enumerate() {
                let y = match block {
                    None => h,
                    Some(fb) => block_forward(g, w, &mut self.bn, &l.spec, fb, h, KernelView::Full, train)?,
                };
                let aj = g.select(alpha, j)?;
                let term = g.scale(y, aj)?;
                acc = Some(match acc {
                    None => term,
                    Some(s) => g.add(s, term)?,
                });
            }
            h = acc.expect("non-empty candidates");
            weights.push(alpha);
        }
        let logits = self.backbone.head_forward(g, w, &mut self.bn, h, train)?;
        Ok((logits, weights))
    }

    /// Expected runtime under the path weights.
    pub fn runtime(&self, g: &mut Graph<T>, model: &RuntimeModel, weights: &[Var]) -> Result<Var> {
        let mut total = g.scalar(T::lit(model.table.fixed_overhead_ms));
        for (i, (l, &w)) in self.layers.iter().zip(weights).enumerate() {
            let costs: Vec<T> = l
                .candidates
                .iter()
                .map(|(ty, _)| model.table.type_ms(i, *ty).map(T::lit))
                .collect::<Result<_>>()?;
            let c = g.constant(Tensor::new(vec![costs.len()], costs)?);
            let weighted = g.mul(w, c)?;
            let r = g.sum(weighted)?;
            total = g.add(total, r)?;
        }
        Ok(total)
    }

    pub fn path_probabilities(&self, layer: usize) -> Vec<f64> {
        let t = self.arch.get(self.layers[layer].alpha).data();
        let m = t.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.iter().map(|v| (v.as_f64() - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    /// Highest-weight path per layer; ties choose the earliest candidate.
    pub fn decode(&self) -> Architecture {
        Architecture(
            (0..self.layers.len())
                .map(|i| {
                    let p = self.path_probabilities(i);
                    let mut best = 0;
                    for j in 1..p.len() {
                        if p[j] > p[best] {
                            best = j;
                        }
                    }
                    self.layers[i].candidates[best].0
                })
                .collect(),
        )
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Architecture {
        Architecture(
            (0..self.layers.len())
                .map(|i| {
                    let p = self.path_probabilities(i);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = p.len() - 1;
                    for (j, q) in p.iter().enumerate() {
                        acc += q;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    self.layers[i].candidates[pick].0
                })
                .collect(),
        )
    }
}

/// Trained architecture distribution of a bilevel search.
#[derive(Clone, Debug)]
pub enum BilevelModel<T: Scalar> {
    SingleSoftmax { supernet: Supernet<T>, encoding: SoftmaxEncoding<T> },
    MultiPath(MultiPathNet<T>),
}

impl<T: Scalar> BilevelModel<T> {
    pub fn decode(&self) -> Architecture {
        match self {
            BilevelModel::SingleSoftmax { supernet, encoding } => {
                encoding.decode(&supernet.layers.iter().map(|l| l.spec).collect::<Vec<_>>())
            }
            BilevelModel::MultiPath(net) => net.decode(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Architecture {
        match self {
            BilevelModel::SingleSoftmax { supernet, encoding } => {
                encoding.sample(&supernet.layers.iter().map(|l| l.spec).collect::<Vec<_>>(), rng)
            }
            BilevelModel::MultiPath(net) => net.sample(rng),
        }
    }

    pub fn checkpoint(&self, cfg: &SearchConfig) -> Checkpoint {
        match self {
            BilevelModel::SingleSoftmax { supernet, encoding } => {
                let mut ck = super::search::supernet_checkpoint(supernet, cfg, 0);
                ck.meta["kind"] = "single_softmax".into();
                ck.push_store("arch.", &encoding.logits);
                ck
            }
            BilevelModel::MultiPath(net) => {
                let mut ck = Checkpoint::new(serde_json::json!({
                    "kind": "multi_path_softmax",
                    "space": net.config,
                    "search": cfg,
                }));
                ck.push_store("", &net.params);
                ck.push_store("arch.", &net.arch);
                ck.push_batchnorm("", &net.bn);
                ck
            }
        }
    }

    fn weights(&self) -> &ParamStore<T> {
        match self {
            BilevelModel::SingleSoftmax { supernet, .. } => &supernet.params,
            BilevelModel::MultiPath(net) => &net.params,
        }
    }

    fn arch(&self) -> &ParamStore<T> {
        match self {
            BilevelModel::SingleSoftmax { encoding, .. } => &encoding.logits,
            BilevelModel::MultiPath(net) => &net.arch,
        }
    }

    fn stores_mut(&mut self) -> (&mut ParamStore<T>, &mut ParamStore<T>) {
        match self {
            BilevelModel::SingleSoftmax { supernet, encoding } => (&mut supernet.params, &mut encoding.logits),
            BilevelModel::MultiPath(net) => (&mut net.params, &mut net.arch),
        }
    }

    /// `(logits, runtime)` with the given bindings.
    fn forward(
        &mut self,
        g: &mut Graph<T>,
        w: &Bound,
        a: &Bound,
        x: Var,
        model: &RuntimeModel,
        gumbel_temperature: Option<f64>,
    ) -> Result<(Var, Var)> {
        match self {
            BilevelModel::SingleSoftmax { supernet, encoding } => {
                let gates = encoding.gates(g, a, gumbel_temperature)?;
                let out = supernet.forward(g, w, x, Encoding::Given(&gates), None, true)?;
                let r = model.network_runtime(g, &out.gates)?;
                Ok((out.logits, r))
            }
            BilevelModel::MultiPath(net) => {
                let (logits, weights) = net.forward(g, w, a, x, gumbel_temperature, true)?;
                let r = net.runtime(g, model, &weights)?;
                Ok((logits, r))
            }
        }
    }
}

pub struct BilevelOutcome<T: Scalar> {
    pub report: SearchReport,
    pub model: BilevelModel<T>,
}

/// Alternates a weight step on a training batch with an architecture step
/// on a held-out batch. The group not being updated is bound as constants,
/// so it receives no gradient.
pub fn search_bilevel<T: Scalar>(
    cfg: &SearchConfig,
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    opts: &RunOptions,
) -> Result<BilevelOutcome<T>> {
    cfg.validate()?;
    let mut net = match cfg.variant {
        Variant::SingleSoftmax => BilevelModel::SingleSoftmax {
            supernet: Supernet::<T>::new(space, cfg.seed)?,
            encoding: SoftmaxEncoding::new(space.num_layers()),
        },
        Variant::MultiPathSoftmax => BilevelModel::MultiPath(MultiPathNet::new(space, cfg.seed)?),
        v => return Err(Error::Config(format!("{v} is not a bilevel variant"))),
    };
    if model.num_layers() != space.num_layers() {
        return Err(Error::Config(format!(
            "latency table has {} layers, search space has {}",
            model.num_layers(),
            space.num_layers()
        )));
    }
    let started = Instant::now();
    let split = data.train_subset(cfg.valid_fraction, cfg.seed);
    let mut train = Batches::new(&split.train, cfg.batch_size, cfg.seed)?;
    let mut valid = Batches::new(&split.valid, cfg.batch_size, cfg.seed.wrapping_add(1))?;
    let total = cfg.total_steps(train.per_epoch());
    let schedule = LrSchedule::new(cfg.lr, cfg.lr_warmup_fraction, total);
    let w_updates: Vec<Option<Update>> = net
        .weights()
        .iter()
        .map(|(_, _, t)| {
            Some(Update {
                lr_scale: 1.0,
                weight_decay: if t.shape().len() >= 2 { cfg.weight_decay } else { 0.0 },
            })
        })
        .collect();
    let a_updates = vec![
        Some(Update {
            lr_scale: 1.0,
            weight_decay: 0.0
        });
        net.arch().len()
    ];
    let mut w_opt = Sgd::new(net.weights(), cfg.momentum);
    let mut a_opt = Sgd::new(net.arch(), cfg.momentum);
    let mut steps = Vec::with_capacity(total);
    let mut audit = Vec::with_capacity(2 * total);
    let mut step_seconds = Vec::with_capacity(total);
    let fail = |e: Error, step: usize, net: &BilevelModel<T>| -> Error {
        if is_numeric(&e) {
            diverged(step, opts.divergence_checkpoint.as_ref().map(|p| (p, net.checkpoint(cfg))))
        } else {
            e
        }
    };

    for step in 0..total {
        let t0 = Instant::now();
        let lr = schedule.at(step);
        for phase in [Phase::Weights, Phase::Architecture] {
            let idx = match phase {
                Phase::Weights => train.next_batch(),
                _ => valid.next_batch(),
            };
            let (x, labels) = split.batch(&idx);
            let mut g = Graph::new(cfg.seed.wrapping_mul(31).wrapping_add(step as u64));
            let (w, a) = match phase {
                Phase::Weights => (net.weights().bind(&mut g), net.arch().bind_frozen(&mut g)),
                _ => (net.weights().bind_frozen(&mut g), net.arch().bind(&mut g)),
            };
            let result = (|| -> Result<_> {
                let xv = g.constant(x.cast());
                let (logits, r) = net.forward(&mut g, &w, &a, xv, model, cfg.gumbel_temperature)?;
                let ce = g.cross_entropy(logits, &labels)?;
                let loss = latency_loss(&mut g, ce, r, cfg.lambda)?;
                let grads = g.backward(loss)?;
                let log = StepLog {
                    step,
                    ce: g.value(ce).item().as_f64(),
                    runtime_ms: g.value(r).item().as_f64(),
                    loss: g.value(loss).item().as_f64(),
                    lr,
                    dropout_p: 0.0,
                };
                Ok((log, net.weights().collect_grads(&w, &grads), net.arch().collect_grads(&a, &grads)))
            })();
            let (log, wg, ag) = match result {
                Ok(v) if v.0.loss.is_finite() => v,
                Ok(_) => return Err(fail(Error::NonFinite { op: "loss" }, step, &net)),
                Err(e) => return Err(fail(e, step, &net)),
            };
            let (ws, as_) = net.stores_mut();
            let frozen = match phase {
                Phase::Weights => {
                    w_opt.step(ws, &wg, lr, &w_updates);
                    grad_norm(&ag, |_| true)
                }
                _ => {
                    a_opt.step(as_, &ag, cfg.arch_lr, &a_updates);
                    grad_norm(&wg, |_| true)
                }
            };
            audit.push(PhaseAudit {
                step,
                phase,
                frozen_grad_norm: frozen,
            });
            if phase == Phase::Weights {
                steps.push(log);
            }
        }
        step_seconds.push(t0.elapsed().as_secs_f64());
    }

    let arch = net.decode();
    let partial = SearchReport {
        variant: cfg.variant,
        lambda: cfg.lambda,
        seed: cfg.seed,
        batches: total,
        optimizer_steps: w_opt.steps() + a_opt.steps(),
        steps,
        audit,
        architecture: Vec::new(),
        hard_runtime_ms: 0.0,
        proxy_accuracy: None,
        wall_clock_s: 0.0,
        step_seconds,
    };
    let mut report = finish_report(cfg, space, data, model, &arch, partial)?;
    report.wall_clock_s = started.elapsed().as_secs_f64();
    Ok(BilevelOutcome { report, model: net })
}
