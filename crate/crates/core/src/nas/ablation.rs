//! Shared versus individually trained kernels.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::Result;
use crate::space::{Architecture, FixedNet, KernelView, MBConvType, SeRatio, SearchSpaceConfig};

use super::config::TrainConfig;
use super::optim::{default_updates, LrSchedule, Sgd};
use super::train::{evaluate, train_fixed, Batches};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub kernel: u8,
    pub shared: bool,
    pub accuracy: f64,
}

fn uniform(space: &SearchSpaceConfig, kernel: u8) -> Architecture {
    Architecture(vec![
        MBConvType::Block {
            kernel,
            expansion: 6,
            se: SeRatio::None
        };
        space.num_layers()
    ])
}

/// Trains one all-5x5 network where every batch contributes the loss of
/// the inner 3x3 view and of the full kernels; gradients of both are
/// summed before a single update.
pub fn train_shared(space: &SearchSpaceConfig, data: &Dataset, cfg: &TrainConfig) -> Result<FixedNet<f64>> {
    cfg.validate()?;
    let mut net = FixedNet::new(space, &uniform(space, 5), cfg.seed)?;
    let mut batches = Batches::new(&data.train, cfg.batch_size, cfg.seed)?;
    let total = cfg.epochs * batches.per_epoch();
    let schedule = LrSchedule::new(cfg.lr, cfg.warmup_fraction, total);
    let updates = default_updates(&net.params, cfg.weight_decay);
    let mut opt = Sgd::new(&net.params, cfg.momentum);
    for step in 0..total {
        let (x, labels) = data.batch(&batches.next_batch());
        let mut sum: Option<Vec<Vec<f64>>> = None;
        for view in [KernelView::Inner3x3, KernelView::Full] {
            net.view = view;
            let mut g = Graph::new(0);
            let b = net.params.bind(&mut g);
            let xv = g.constant(x.clone());
            let logits = net.forward(&mut g, &b, xv, true)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let grads = net.params.collect_grads(&b, &g.backward(loss)?);
            sum = Some(match sum {
                None => grads,
                Some(mut acc) => {
                    for (a, g) in acc.iter_mut().zip(grads) {
                        for (x, y) in a.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                    acc
                }
            });
        }
        opt.step(&mut net.params, &sum.expect("two views"), schedule.at(step), &updates);
    }
    net.view = KernelView::Full;
    Ok(net)
}

/// Standalone 3x3 and 5x5 networks versus one shared network evaluated
/// through either kernel size.
pub fn shared_subset_ablation(space: &SearchSpaceConfig, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    let a = train_fixed::<f64>(space, &uniform(space, 3), data, cfg)?.0.accuracy;
    let b = train_fixed::<f64>(space, &uniform(space, 5), data, cfg)?.0.accuracy;
    let mut shared = train_shared(space, data, cfg)?;
    shared.view = KernelView::Inner3x3;
    let c = evaluate(&mut shared, data, &data.valid)?;
    shared.view = KernelView::Full;
    let d = evaluate(&mut shared, data, &data.valid)?;
    let row = |name: &str, kernel, is_shared, accuracy| AblationRow {
        name: name.into(),
        kernel,
        shared: is_shared,
        accuracy,
    };
    Ok(vec![
        row("standalone_3x3", 3, false, a),
        row("standalone_5x5", 5, false, b),
        row("shared_inner_3x3", 3, true, c),
        row("shared_full_5x5", 5, true, d),
    ])
}
