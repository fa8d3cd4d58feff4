use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::GateKind;
use crate::error::{Error, Result};
use crate::space::DropoutSchedule;

/// Solver used to search the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Thresholds with sigmoid indicators, single-level descent.
    SingleSigmoid,
    /// Thresholds with hard indicators and straight-through gradients.
    SingleSte,
    /// Binary softmax over each decision, weights shared, bilevel.
    SingleSoftmax,
    /// Independent candidate blocks mixed by a softmax, bilevel.
    MultiPathSoftmax,
    /// Rejection-sampled architectures.
    Random,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SingleSigmoid,
        Variant::SingleSte,
        Variant::SingleSoftmax,
        Variant::MultiPathSoftmax,
        Variant::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleSigmoid => "single_sigmoid",
            Variant::SingleSte => "single_ste",
            Variant::SingleSoftmax => "single_softmax",
            Variant::MultiPathSoftmax => "multi_path_softmax",
            Variant::Random => "random",
        }
    }

    pub fn is_softmax(self) -> bool {
        matches!(self, Variant::SingleSoftmax | Variant::MultiPathSoftmax)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Plain supervised training schedule (proxy training, fixed networks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_fraction: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup fraction {} outside [0, 1]", self.warmup_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub variant: Variant,
    /// Weight of the log-runtime term.
    pub lambda: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of the steps spent in linear learning-rate warmup.
    pub lr_warmup_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplies `lr` for the thresholds.
    pub threshold_lr_scale: f64,
    pub threshold_weight_decay: f64,
    /// Sigmoid steepness.
    pub beta: f64,
    pub dropout: DropoutSchedule,
    /// Learning rate of the softmax logits (bilevel variants).
    pub arch_lr: f64,
    /// Fraction of the training split held out for architecture steps.
    pub valid_fraction: f64,
    /// Temperature of optional Gumbel noise on the softmax logits.
    pub gumbel_temperature: Option<f64>,
    /// Proxy training of the decoded architecture; `epochs = 0` skips it.
    pub proxy: TrainConfig,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            variant: Variant::SingleSigmoid,
            lambda: 0.0,
            epochs: 3,
            steps: None,
            batch_size: 32,
            lr: 0.05,
            lr_warmup_fraction: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            threshold_lr_scale: 1.0,
            threshold_weight_decay: 0.0,
            beta: 5.0,
            dropout: DropoutSchedule::default(),
            arch_lr: 0.05,
            valid_fraction: 0.2,
            gumbel_temperature: None,
            proxy: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        if self.steps.is_none() && self.epochs == 0 {
            return Err(Error::Config("search budget must be at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be positive", self.beta)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0 < self.valid_fraction && self.valid_fraction < 1.0) {
            return Err(Error::Config(format!("valid fraction {} outside (0, 1)", self.valid_fraction)));
        }
        if let Some(t) = self.gumbel_temperature {
            if !(t > 0.0) {
                return Err(Error::Config(format!("gumbel temperature {t} must be positive")));
            }
        }
        self.dropout.validate()?;
        self.proxy.validate()
    }

    /// Indicator relaxation used by threshold variants.
    pub fn indicator_mode(&self) -> GateKind {
        match self.variant {
            Variant::SingleSte => GateKind::StraightThrough,
            _ => GateKind::Sigmoid { beta: self.beta },
        }
    }

    pub fn total_steps(&self, batches_per_epoch: usize) -> usize {
        self.steps.unwrap_or(self.epochs * batches_per_epoch)
    }
}
