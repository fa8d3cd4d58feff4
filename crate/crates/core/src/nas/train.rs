//! Generic supervised training and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::space::{Architecture, Classifier, FixedNet, SearchSpaceConfig};

use super::config::TrainConfig;
use super::optim::{default_updates, LrSchedule, Sgd};

pub const EVAL_BATCH: usize = 256;

/// Reshuffled mini-batches of a fixed index set; a trailing batch with
/// fewer than two examples is dropped (batch statistics need two).
#[derive(Clone, Debug)]
pub struct Batches {
    pool: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    pub epoch: usize,
}

impl Batches {
    pub fn new(pool: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if pool.len() < 2 {
            return Err(Error::Empty(format!("need at least 2 examples to train, got {}", pool.len())));
        }
        Ok(Batches {
            pool: pool.to_vec(),
            batch_size: batch_size.min(pool.len()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        })
    }

    pub fn per_epoch(&self) -> usize {
        let n = self.pool.len();
        let full = n / self.batch_size;
        full + usize::from(n % self.batch_size >= 2)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() || self.cursor >= self.order.len() || self.order.len() - self.cursor < 2 {
            if !self.order.is_empty() {
                self.epoch += 1;
            }
            self.order = self.pool.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let b = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation accuracy after training.
    pub accuracy: f64,
    pub losses: Vec<f64>,
    pub optimizer_steps: usize,
    #[serde(skip)]
    pub step_seconds: Vec<f64>,
}

/// Classification accuracy on `indices` with batch statistics frozen.
pub fn evaluate<T: Scalar, M: Classifier<T>>(model: &mut M, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("no examples to evaluate".into()));
    }
    let mut correct = 0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, labels) = data.batch(chunk);
        let mut g = Graph::new(0);
        let b = model.params().bind_frozen(&mut g);
        let xv = g.constant(x.cast());
        let logits = model.logits(&mut g, &b, xv, false)?;
        let out = g.value(logits);
        let k = out.shape()[1];
        for (row, &label) in out.data().chunks(k).zip(&labels) {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Mini-batch SGD on the training split, then validation accuracy.
pub fn train_classifier<T: Scalar, M: Classifier<T>>(model: &mut M, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut batches = Batches::new(&data.train, cfg.batch_size, cfg.seed)?;
    let total = cfg.epochs * batches.per_epoch();
    let schedule = LrSchedule::new(cfg.lr, cfg.warmup_fraction, total);
    let updates = default_updates(model.params(), cfg.weight_decay);
    let mut opt = Sgd::new(model.params(), cfg.momentum);
    let mut losses = Vec::with_capacity(total);
    let mut step_seconds = Vec::with_capacity(total);
    for step in 0..total {
        let started = Instant::now();
        let (x, labels) = data.batch(&batches.next_batch());
        let mut g = Graph::new(cfg.seed.wrapping_add(step as u64));
        let b = model.params().bind(&mut g);
        let xv = g.constant(x.cast());
        let logits = model.logits(&mut g, &b, xv, true)?;
        let loss = g.cross_entropy(logits, &labels)?;
        let grads = g.backward(loss)?;
        let grads = model.params().collect_grads(&b, &grads);
        opt.step(model.params_mut(), &grads, schedule.at(step), &updates);
        losses.push(g.value(loss).item().as_f64());
        step_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainReport {
        accuracy: evaluate(model, data, &data.valid)?,
        losses,
        optimizer_steps: opt.steps(),
        step_seconds,
    })
}

/// Trains a freshly initialized compact network for `arch`.
pub fn train_fixed<T: Scalar>(
    space: &SearchSpaceConfig,
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(TrainReport, FixedNet<T>)> {
    let mut net = FixedNet::new(space, arch, cfg.seed)?;
    let report = train_classifier(&mut net, data, cfg)?;
    Ok((report, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch() {
        let pool: Vec<usize> = (0..10).collect();
        let mut b = Batches::new(&pool, 4, 0).unwrap();
        assert_eq!(b.per_epoch(), 3);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, pool);
        assert_eq!(b.epoch, 0);
        b.next_batch();
        assert_eq!(b.epoch, 1);
        let mut odd = Batches::new(&(0..9).collect::<Vec<_>>(), 4, 0).unwrap();
        assert_eq!(odd.per_epoch(), 2);
        assert_eq!(odd.next_batch().len(), 4);
        assert_eq!(odd.next_batch().len(), 4);
        assert_eq!(odd.next_batch().len(), 4);
        assert_eq!(odd.epoch, 1);
    }
}
