//! Single-level latency-aware search over weights and thresholds.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latency::RuntimeModel;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::space::{sample_keep, Architecture, Encoding, LayerRecord, SearchSpaceConfig, Supernet};

use super::checkpoint::Checkpoint;
use super::config::{SearchConfig, Variant};
use super::optim::{LrSchedule, Sgd, Update};
use super::train::{train_fixed, Batches};

/// `ce + lambda * ln(runtime_ms)`.
pub fn latency_loss<T: Scalar>(g: &mut Graph<T>, ce: Var, runtime_ms: Var, lambda: f64) -> Result<Var> {
    let log_r = g.log(runtime_ms)?;
    let weighted = g.affine(log_r, T::lit(lambda), T::zero())?;
    g.add(ce, weighted)
}

/// The same objective on plain numbers.
pub fn loss_value(ce: f64, runtime_ms: f64, lambda: f64) -> Result<f64> {
    if !(runtime_ms > 0.0) {
        return Err(Error::Domain(format!("runtime {runtime_ms} ms must be positive")));
    }
    Ok(ce + (lambda * runtime_ms.ln() + 0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub ce: f64,
    pub runtime_ms: f64,
    pub loss: f64,
    pub lr: f64,
    pub dropout_p: f64,
}

/// Which parameter group an optimizer step updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Joint,
    Weights,
    Architecture,
}

/// One optimizer step: the group that moved and the gradient norm that
/// reached the group held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub step: usize,
    pub phase: Phase,
    pub frozen_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub variant: Variant,
    pub lambda: f64,
    pub seed: u64,
    pub batches: usize,
    pub optimizer_steps: usize,
    pub steps: Vec<StepLog>,
    pub audit: Vec<PhaseAudit>,
    pub architecture: Vec<LayerRecord>,
    /// Hard-mode runtime of the decoded architecture.
    pub hard_runtime_ms: f64,
    pub proxy_accuracy: Option<f64>,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub step_seconds: Vec<f64>,
}

impl SearchReport {
    pub fn decoded(&self) -> Result<Architecture> {
        Architecture::from_records(&self.architecture)
    }

    /// Report with wall-clock fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> SearchReport {
        SearchReport {
            wall_clock_s: 0.0,
            step_seconds: Vec::new(),
            ..self.clone()
        }
    }
}

/// Where to leave a checkpoint of the last finite state if the search diverges.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub divergence_checkpoint: Option<PathBuf>,
}

pub struct SearchOutcome<T: Scalar> {
    pub report: SearchReport,
    pub supernet: Supernet<T>,
}

pub(crate) fn finish_report(
    cfg: &SearchConfig,
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    arch: &Architecture,
    partial: SearchReport,
) -> Result<SearchReport> {
    let proxy_accuracy = if cfg.proxy.epochs > 0 {
        let proxy = super::config::TrainConfig {
            seed: cfg.seed,
            ..cfg.proxy.clone()
        };
        Some(train_fixed::<f64>(space, arch, data, &proxy)?.0.accuracy)
    } else {
        None
    };
    Ok(SearchReport {
        architecture: arch.to_records(),
        hard_runtime_ms: model.architecture_runtime(arch)?,
        proxy_accuracy,
        ..partial
    })
}

pub(crate) fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::Domain(_))
}

pub(crate) fn diverged(step: usize, checkpoint: Option<(&PathBuf, Checkpoint)>) -> Error {
    let path = checkpoint.and_then(|(p, ck)| match ck.save(p) {
        Ok(()) => Some(p.clone()),
        Err(e) => {
            log::error!("could not save divergence checkpoint: {e}");
            None
        }
    });
    Error::Diverged {
        step,
        last_good_step: step.saturating_sub(1),
        checkpoint: path,
    }
}

pub(crate) fn grad_norm<T: Scalar>(grads: &[Vec<T>], select: impl Fn(usize) -> bool) -> f64 {
    grads
        .iter()
        .enumerate()
        .filter(|(i, _)| select(*i))
        .flat_map(|(_, g)| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Update settings for a supernet: weight decay on kernels, the configured
/// scale and decay on thresholds.
pub fn supernet_updates<T: Scalar>(net: &Supernet<T>, cfg: &SearchConfig) -> Vec<Option<Update>> {
    let thresholds = net.threshold_ids();
    net.params
        .iter()
        .map(|(id, _, t)| {
            Some(if thresholds.contains(&id) {
                Update {
                    lr_scale: cfg.threshold_lr_scale,
                    weight_decay: cfg.threshold_weight_decay,
                }
            } else {
                Update {
                    lr_scale: 1.0,
                    weight_decay: if t.shape().len() >= 2 { cfg.weight_decay } else { 0.0 },
                }
            })
        })
        .collect()
}

pub fn supernet_checkpoint<T: Scalar>(net: &Supernet<T>, cfg: &SearchConfig, step: usize) -> Checkpoint {
    let mut ck = Checkpoint::new(serde_json::json!({
        "kind": "supernet",
        "step": step,
        "space": net.config,
        "search": cfg,
    }));
    ck.push_store("", &net.params);
    ck.push_batchnorm("", &net.bn);
    ck
}

/// Joint gradient descent on weights and thresholds: one optimizer step per
/// batch, no alternating phases.
pub fn search<T: Scalar>(
    cfg: &SearchConfig,
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    opts: &RunOptions,
) -> Result<SearchOutcome<T>> {
    cfg.validate()?;
    if !matches!(cfg.variant, Variant::SingleSigmoid | Variant::SingleSte) {
        return Err(Error::Config(format!("{} is not a threshold variant", cfg.variant)));
    }
    if model.num_layers() != space.num_layers() {
        return Err(Error::Config(format!(
            "latency table has {} layers, search space has {}",
            model.num_layers(),
            space.num_layers()
        )));
    }
    let started = Instant::now();
    let mut net = Supernet::<T>::new(space, cfg.seed)?;
    let mut batches = Batches::new(&data.train, cfg.batch_size, cfg.seed)?;
    let total = cfg.total_steps(batches.per_epoch());
    let schedule = LrSchedule::new(cfg.lr, cfg.lr_warmup_fraction, total);
    let updates = supernet_updates(&net, cfg);
    let mut opt = Sgd::new(&net.params, cfg.momentum);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b);
    let mode = cfg.indicator_mode();
    let mut steps = Vec::with_capacity(total);
    let mut audit = Vec::with_capacity(total);
    let mut step_seconds = Vec::with_capacity(total);
    let mut last_good: Option<(ParamStore<T>, Vec<_>)> = None;

    for step in 0..total {
        let t0 = Instant::now();
        let p = cfg.dropout.probability(step, total);
        let keep = sample_keep(&mut dropout_rng, p, net.num_layers())?;
        let (x, labels) = data.batch(&batches.next_batch());
        let lr = schedule.at(step);
        let result = (|| -> Result<(StepLog, Vec<Vec<T>>)> {
            let mut g = Graph::new(cfg.seed.wrapping_add(step as u64));
            let b = net.params.bind(&mut g);
            let xv = g.constant(x.cast());
            let out = net.forward(&mut g, &b, xv, Encoding::Thresholds(mode), Some(&keep), true)?;
            let ce = g.cross_entropy(out.logits, &labels)?;
            let r = model.network_runtime(&mut g, &out.gates)?;
            let loss = latency_loss(&mut g, ce, r, cfg.lambda)?;
            let grads = g.backward(loss)?;
            let log = StepLog {
                step,
                ce: g.value(ce).item().as_f64(),
                runtime_ms: g.value(r).item().as_f64(),
                loss: g.value(loss).item().as_f64(),
                lr,
                dropout_p: p,
            };
            Ok((log, net.params.collect_grads(&b, &grads)))
        })();
        let (log, grads) = match result {
            Ok(v) if v.0.loss.is_finite() => v,
            Ok(_) => return Err(divergence(cfg, opts, &mut net, last_good, step)),
            Err(e) if is_numeric(&e) => return Err(divergence(cfg, opts, &mut net, last_good, step)),
            Err(e) => return Err(e),
        };
        if opts.divergence_checkpoint.is_some() {
            last_good = Some((net.params.clone(), net.bn.clone()));
        }
        opt.step(&mut net.params, &grads, lr, &updates);
        audit.push(PhaseAudit {
            step,
            phase: Phase::Joint,
            frozen_grad_norm: 0.0,
        });
        steps.push(log);
        step_seconds.push(t0.elapsed().as_secs_f64());
    }

    let arch = net.decode();
    let partial = SearchReport {
        variant: cfg.variant,
        lambda: cfg.lambda,
        seed: cfg.seed,
        batches: total,
        optimizer_steps: opt.steps(),
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
    Ok(SearchOutcome { report, supernet: net })
}

fn divergence<T: Scalar>(
    cfg: &SearchConfig,
    opts: &RunOptions,
    net: &mut Supernet<T>,
    last_good: Option<(ParamStore<T>, Vec<crate::autodiff::BatchNormState<T>>)>,
    step: usize,
) -> Error {
    let ck = match (&opts.divergence_checkpoint, last_good) {
        (Some(path), Some((params, bn))) => {
            net.params = params;
            net.bn = bn;
            Some((path, supernet_checkpoint(net, cfg, step.saturating_sub(1))))
        }
        _ => None,
    };
    diverged(step, ck)
}

/// Rebuilds a supernet saved by [`supernet_checkpoint`].
pub fn load_supernet(ck: &Checkpoint) -> Result<Supernet<f64>> {
    let space: SearchSpaceConfig = serde_json::from_value(
        ck.meta
            .get("space")
            .cloned()
            .ok_or_else(|| Error::Config("checkpoint has no search space".into()))?,
    )?;
    let mut net = Supernet::new(&space, 0)?;
    ck.restore_store("", &mut net.params)?;
    ck.restore_batchnorm("", &mut net.bn)?;
    Ok(net)
}
