//! Tuning of the runtime-loss weight λ against a runtime-targeted reward:
//! vanilla GP Bayesian optimization, cost-aware multi-fidelity BO over the
//! search budget, and uniform random search.

pub mod backend;
pub mod gp;
pub mod grid;
pub mod suggest;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::LayerRecord;

pub use backend::{Backend, Evaluation, SearchBackend, SyntheticBackend};
pub use gp::{Gp, GpHyper};
pub use grid::{grid_study, GridStudy};
pub use suggest::{bo_suggest, expected_improvement, multifidelity_suggest, LambdaBounds, Observation};

/// Accuracy discounted by `R_T / R` once the runtime `R` overshoots the
/// target; no bonus for being under it.
pub fn reward(accuracy: f64, runtime_ms: f64, target_ms: f64) -> f64 {
    if runtime_ms <= target_ms {
        accuracy
    } else {
        accuracy * (runtime_ms / target_ms).powi(-1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bo,
    Mf,
    Random,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bo => "bo",
            Method::Mf => "mf",
            Method::Random => "random",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bo" => Ok(Method::Bo),
            "mf" => Ok(Method::Mf),
            "random" => Ok(Method::Random),
            other => Err(Error::Config(format!("unknown hypertuning method {other:?} (bo, mf, random)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypertuneConfig {
    pub method: Method,
    pub target_ms: f64,
    pub total_epoch_budget: usize,
    /// Search epochs per evaluation for `bo` and `random`.
    pub eval_epochs: usize,
    /// Budget axis for `mf`; the largest entry is the top fidelity.
    pub fidelities: Vec<usize>,
    pub bounds: LambdaBounds,
    /// Evaluations in flight at once.
    pub workers: usize,
    pub seed: u64,
}

impl Default for HypertuneConfig {
    fn default() -> Self {
        HypertuneConfig {
            method: Method::Bo,
            target_ms: 1.0,
            total_epoch_budget: 120,
            eval_epochs: 8,
            fidelities: vec![2, 4, 8],
            bounds: LambdaBounds::default(),
            workers: 1,
            seed: 0,
        }
    }
}

impl HypertuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.target_ms > 0.0 && self.target_ms.is_finite()) {
            return Err(Error::Config(format!("target runtime must be positive, got {}", self.target_ms)));
        }
        if self.eval_epochs == 0 || self.fidelities.is_empty() || self.fidelities.contains(&0) {
            return Err(Error::Config("evaluation budgets must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    fn cheapest(&self) -> usize {
        match self.method {
            Method::Mf => *self.fidelities.iter().min().expect("validated"),
            _ => self.eval_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSample {
    /// Submission index; also the offset added to the seed for this run.
    pub index: usize,
    pub lambda: f64,
    pub budget_epochs: usize,
    pub accuracy: f64,
    pub runtime_ms: f64,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Vec<LayerRecord>>,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncumbentPoint {
    pub epochs_used: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypertuneTrace {
    pub method: Method,
    pub target_ms: f64,
    pub total_epoch_budget: usize,
    pub epochs_used: usize,
    /// Samples in the order they were incorporated into the model.
    pub samples: Vec<TradeoffSample>,
    /// Best reward so far after each sample.
    pub incumbent: Vec<IncumbentPoint>,
    /// Index into `samples` of the best reward (first on ties).
    pub best: usize,
}

impl HypertuneTrace {
    pub fn best_sample(&self) -> &TradeoffSample {
        &self.samples[self.best]
    }

    /// Trace with wall-clock fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> HypertuneTrace {
        let mut t = self.clone();
        for s in &mut t.samples {
            s.wall_clock_s = 0.0;
        }
        t
    }

    pub fn final_reward(&self) -> f64 {
        self.incumbent.last().map_or(0.0, |p| p.reward)
    }
}

pub(crate) fn evaluate_sample(
    backend: &dyn Backend,
    target_ms: f64,
    index: usize,
    lambda: f64,
    budget: usize,
    seed: u64,
) -> TradeoffSample {
    let start = Instant::now();
    let result = backend.evaluate(lambda, budget, seed);
    let wall_clock_s = start.elapsed().as_secs_f64();
    let (accuracy, runtime_ms, failure, architecture) = match result {
        Ok(e) if e.accuracy.is_finite() && e.runtime_ms.is_finite() && e.runtime_ms > 0.0 => {
            (e.accuracy, e.runtime_ms, None, e.architecture)
        }
        Ok(e) => (
            0.0,
            0.0,
            Some(format!("invalid evaluation: accuracy {} runtime {}", e.accuracy, e.runtime_ms)),
            None,
        ),
        Err(err) => {
            log::warn!("evaluation {index} (λ = {lambda:.4e}, {budget} epochs) failed: {err}");
            (0.0, 0.0, Some(err.to_string()), None)
        }
    };
    TradeoffSample {
        index,
        lambda,
        budget_epochs: budget,
        accuracy,
        runtime_ms,
        reward: reward(accuracy, runtime_ms, target_ms),
        failure,
        architecture,
        wall_clock_s,
    }
}

/// Suggests up to `cfg.workers` points at once. Pending points are fed back
/// as observations at their posterior mean (kriging believer) so a batch
/// spreads out instead of repeating one maximizer.
fn suggest_batch(
    cfg: &HypertuneConfig,
    observations: &[Observation],
    remaining: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(f64, usize)>> {
    let top = *cfg.fidelities.iter().max().expect("validated");
    let mut out = Vec::new();
    let mut left = remaining;
    let mut obs = observations.to_vec();
    let mut gp: Option<Gp> = None;
    while out.len() < cfg.workers && left >= cfg.cheapest() {
        let seed: u64 = rng.gen();
        if cfg.method == Method::Random {
            out.push((cfg.bounds.from_unit(rng.gen()), cfg.eval_epochs));
            left -= cfg.eval_epochs;
            continue;
        }
        let xs: Vec<Vec<f64>> = obs.iter().map(|o| point(cfg, o)).collect();
        let ys: Vec<f64> = obs.iter().map(|o| o.value).collect();
        // Hyperparameters are selected once per batch; fantasies only condition.
        gp = match gp {
            _ if obs.is_empty() => None,
            None => Some(Gp::fit(&xs, &ys)?),
            Some(g) => Some(Gp::fit_with(&xs, &ys, g.hyper)?),
        };
        let affordable: Vec<usize> = cfg.fidelities.iter().copied().filter(|&b| b <= left).collect();
        let (lambda, budget) = match (&gp, cfg.method) {
            (None, Method::Mf) => multifidelity_suggest(&[], &cfg.bounds, &cfg.fidelities, &affordable, seed)?,
            (None, _) => (bo_suggest(&[], &cfg.bounds, seed)?, cfg.eval_epochs),
            (Some(g), Method::Mf) => {
                suggest::mf_maximize(g, &obs, &cfg.bounds, &cfg.fidelities, &affordable, seed, top)
            }
            (Some(g), _) => (cfg.bounds.from_unit(suggest::bo_maximize(g, &ys, seed)), cfg.eval_epochs),
        };
        left -= budget;
        let mut pending = Observation {
            u: cfg.bounds.to_unit(lambda),
            budget,
            value: 0.0,
        };
        pending.value = gp.as_ref().map_or(0.0, |g| g.predict(&point(cfg, &pending)).0);
        obs.push(pending);
        out.push((lambda, budget));
    }
    Ok(out)
}

fn point(cfg: &HypertuneConfig, o: &Observation) -> Vec<f64> {
    match cfg.method {
        Method::Mf => vec![o.u, suggest::budget_unit(o.budget, &cfg.fidelities)],
        _ => vec![o.u],
    }
}

/// Runs suggest → evaluate → update until no further evaluation fits into
/// the epoch budget.
pub fn hypertune(cfg: &HypertuneConfig, backend: &dyn Backend) -> Result<HypertuneTrace> {
    cfg.validate()?;
    if cfg.total_epoch_budget < cfg.cheapest() {
        return Err(Error::Empty(format!(
            "epoch budget {} is smaller than one evaluation ({} epochs); trace would be empty",
            cfg.total_epoch_budget,
            cfg.cheapest()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples: Vec<TradeoffSample> = Vec::new();
    let mut observations = Vec::new();
    let mut incumbent = Vec::new();
    let mut used = 0;
    let mut best = (f64::NEG_INFINITY, 0);
    loop {
        let batch = suggest_batch(cfg, &observations, cfg.total_epoch_budget - used, &mut rng)?;
        if batch.is_empty() {
            break;
        }
        let first = samples.len();
        let results: Vec<TradeoffSample> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(j, &(lambda, budget))| {
                    let index = first + j;
                    evaluate_sample(backend, cfg.target_ms, index, lambda, budget, cfg.seed.wrapping_add(index as u64))
                })
                .collect()
        });
        for s in results {
            used += s.budget_epochs;
            observations.push(Observation {
                u: cfg.bounds.to_unit(s.lambda),
                budget: s.budget_epochs,
                value: s.reward,
            });
            if s.reward > best.0 {
                best = (s.reward, samples.len());
            }
            incumbent.push(IncumbentPoint {
                epochs_used: used,
                reward: best.0,
            });
            log::info!(
                "[{}] λ = {:.4e} b = {} acc = {:.4} R = {:.4} ms reward = {:.4} (best {:.4})",
                s.index,
                s.lambda,
                s.budget_epochs,
                s.accuracy,
                s.runtime_ms,
                s.reward,
                best.0
            );
            samples.push(s);
        }
    }
    Ok(HypertuneTrace {
        method: cfg.method,
        target_ms: cfg.target_ms,
        total_epoch_budget: cfg.total_epoch_budget,
        epochs_used: used,
        samples,
        incumbent,
        best: best.1,
    })
}
