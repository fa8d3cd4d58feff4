//! Evaluation backends: a real search-plus-proxy-training run, and a cheap
//! analytic stand-in for studying the tuners themselves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latency::RuntimeModel;
use crate::nas::{run_search, RunOptions, SearchConfig};
use crate::space::{LayerRecord, SearchSpaceConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub runtime_ms: f64,
    pub architecture: Option<Vec<LayerRecord>>,
}

/// Maps `(λ, search epochs, seed)` to the accuracy and runtime of the
/// resulting architecture. Implementations must be deterministic in `seed`.
pub trait Backend: Sync {
    fn evaluate(&self, lambda: f64, budget_epochs: usize, seed: u64) -> Result<Evaluation>;
}

impl<F> Backend for F
where
    F: Fn(f64, usize, u64) -> Result<Evaluation> + Sync,
{
    fn evaluate(&self, lambda: f64, budget_epochs: usize, seed: u64) -> Result<Evaluation> {
        self(lambda, budget_epochs, seed)
    }
}

/// Closed-form tradeoff curve.
///
/// Runtime falls smoothly from `r_max` to `r_min` as λ grows; accuracy
/// rises with runtime and with the budget. Short budgets see an effective
/// λ of `λ·(b/b_ref)^overshoot`, i.e. they under-compress, so their reward
/// optimum sits at larger λ than the full-budget one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBackend {
    pub r_min: f64,
    pub r_max: f64,
    pub lambda_mid: f64,
    pub steepness: f64,
    pub acc_max: f64,
    pub acc_drop: f64,
    pub budget_penalty: f64,
    pub budget_tau: f64,
    pub reference_budget: f64,
    pub overshoot: f64,
    /// Std. dev. of seeded Gaussian accuracy noise.
    pub noise: f64,
}

impl Default for SyntheticBackend {
    fn default() -> Self {
        SyntheticBackend {
            r_min: 20.0,
            r_max: 120.0,
            lambda_mid: 0.3,
            steepness: 1.0,
            acc_max: 0.92,
            acc_drop: 0.35,
            budget_penalty: 0.15,
            budget_tau: 3.0,
            reference_budget: 8.0,
            overshoot: 1.5,
            noise: 0.005,
        }
    }
}

impl SyntheticBackend {
    pub fn runtime_ms(&self, lambda: f64, budget_epochs: usize) -> f64 {
        let eff = lambda * (budget_epochs as f64 / self.reference_budget).powf(self.overshoot);
        self.r_min + (self.r_max - self.r_min) / (1.0 + (eff / self.lambda_mid).powf(self.steepness))
    }

    /// Noise-free accuracy.
    pub fn mean_accuracy(&self, lambda: f64, budget_epochs: usize) -> f64 {
        let r = self.runtime_ms(lambda, budget_epochs);
        let s = (r - self.r_min) / (self.r_max - self.r_min);
        self.acc_max - self.acc_drop * (1.0 - s).powi(2) - self.budget_penalty * (-(budget_epochs as f64) / self.budget_tau).exp()
    }
}

impl Backend for SyntheticBackend {
    fn evaluate(&self, lambda: f64, budget_epochs: usize, seed: u64) -> Result<Evaluation> {
        if !(lambda > 0.0) || budget_epochs == 0 {
            return Err(Error::Config(format!("bad evaluation point λ = {lambda}, b = {budget_epochs}")));
        }
        let noise = if self.noise > 0.0 {
            let n = Normal::new(0.0, self.noise).map_err(|e| Error::Config(e.to_string()))?;
            n.sample(&mut ChaCha8Rng::seed_from_u64(seed))
        } else {
            0.0
        };
        Ok(Evaluation {
            accuracy: (self.mean_accuracy(lambda, budget_epochs) + noise).clamp(0.0, 1.0),
            runtime_ms: self.runtime_ms(lambda, budget_epochs),
            architecture: None,
        })
    }
}

/// One evaluation = a full architecture search for `budget_epochs` epochs
/// at the given λ, followed by proxy training of the decoded architecture.
/// Proxy epochs come from `base.proxy` and are not charged to the budget.
pub struct SearchBackend<'a> {
    pub space: &'a SearchSpaceConfig,
    pub data: &'a Dataset,
    pub model: &'a RuntimeModel,
    pub base: SearchConfig,
}

impl Backend for SearchBackend<'_> {
    fn evaluate(&self, lambda: f64, budget_epochs: usize, seed: u64) -> Result<Evaluation> {
        if self.base.proxy.epochs == 0 {
            return Err(Error::Config("the search backend needs proxy.epochs > 0 to score architectures".into()));
        }
        let cfg = SearchConfig {
            lambda,
            epochs: budget_epochs,
            steps: None,
            seed,
            ..self.base.clone()
        };
        let report = run_search(&cfg, self.space, self.data, self.model, &RunOptions::default())?.into_report();
        Ok(Evaluation {
            accuracy: report.proxy_accuracy.expect("proxy epochs > 0"),
            runtime_ms: report.hard_runtime_ms,
            architecture: Some(report.architecture),
        })
    }
}
