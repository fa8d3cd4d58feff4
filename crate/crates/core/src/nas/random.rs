//! Rejection-sampling baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latency::RuntimeModel;
use crate::space::{Architecture, LayerRecord, MBConvType, ResolvedLayer, SearchSpaceConfig};

use super::config::TrainConfig;
use super::train::train_fixed;

/// Uniform draw over each layer's candidate types.
pub fn sample_architecture<R: Rng>(layers: &[ResolvedLayer], rng: &mut R) -> Architecture {
    Architecture(
        layers
            .iter()
            .map(|l| {
                let c = MBConvType::candidates(l.skippable());
                c[rng.gen_range(0..c.len())]
            })
            .collect(),
    )
}

/// Smallest and largest hard-mode runtime reachable in the space.
pub fn runtime_bounds(model: &RuntimeModel, layers: &[ResolvedLayer]) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (model.table.fixed_overhead_ms, model.table.fixed_overhead_ms);
    for l in layers {
        let ms = MBConvType::candidates(l.skippable())
            .into_iter()
            .map(|t| model.table.type_ms(l.index, t))
            .collect::<Result<Vec<_>>>()?;
        lo += ms.iter().copied().fold(f64::INFINITY, f64::min);
        hi += ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok((lo, hi))
}

/// Hard-mode runtime of every architecture in the space, sorted ascending.
/// The network runtime is additive over layers, so this is built by
/// repeatedly adding each layer's candidate runtimes to the partial sums.
pub fn enumerate_runtimes(model: &RuntimeModel, layers: &[ResolvedLayer]) -> Result<Vec<f64>> {
    let mut sums = vec![0.0];
    for l in layers {
        let ms = MBConvType::candidates(l.skippable())
            .into_iter()
            .map(|t| model.table.type_ms(l.index, t))
            .collect::<Result<Vec<_>>>()?;
        sums = sums.iter().flat_map(|s| ms.iter().map(move |m| s + m)).collect();
    }
    let mut out: Vec<f64> = sums.into_iter().map(|s| model.table.fixed_overhead_ms + s).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Nearest-rank percentile (`p` in (0, 100]) of the enumerated runtimes.
pub fn runtime_percentile(model: &RuntimeModel, layers: &[ResolvedLayer], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Config(format!("percentile must lie in (0, 100], got {p}")));
    }
    let all = enumerate_runtimes(model, layers)?;
    let rank = ((p / 100.0) * all.len() as f64).ceil() as usize;
    Ok(all[rank.clamp(1, all.len()) - 1])
}

/// Draws until an architecture's runtime falls in `[lo, hi]`; returns it
/// with its runtime and the number of draws.
pub fn sample_in_window<R: Rng>(
    model: &RuntimeModel,
    layers: &[ResolvedLayer],
    window: (f64, f64),
    max_attempts: usize,
    rng: &mut R,
) -> Result<(Architecture, f64, usize)> {
    let (lo, hi) = runtime_bounds(model, layers)?;
    let infeasible = || {
        Error::Infeasible(format!(
            "no architecture with runtime in [{}, {}] ms; achievable runtimes span [{lo}, {hi}] ms",
            window.0, window.1
        ))
    };
    if window.0 > window.1 || window.1 < lo || window.0 > hi {
        return Err(infeasible());
    }
    for attempt in 1..=max_attempts {
        let arch = sample_architecture(layers, rng);
        let r = model.architecture_runtime(&arch)?;
        if (window.0..=window.1).contains(&r) {
            return Ok((arch, r, attempt));
        }
    }
    Err(infeasible())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSearchConfig {
    pub samples: usize,
    /// Runtime window in milliseconds.
    pub window: (f64, f64),
    pub max_attempts: usize,
    pub proxy: TrainConfig,
    /// Sample `i` uses seed `seed + i` for both the draw and its training.
    pub seed: u64,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        RandomSearchConfig {
            samples: 10,
            window: (0.0, f64::MAX),
            max_attempts: 100_000,
            proxy: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSample {
    pub seed: u64,
    pub architecture: Vec<LayerRecord>,
    pub runtime_ms: f64,
    pub accuracy: f64,
    pub attempts: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance (0 for a single value).
    pub variance: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            n,
            mean,
            variance,
            std: variance.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchReport {
    pub samples: Vec<RandomSample>,
    pub acceptance_rate: f64,
    pub accuracy: Summary,
    pub runtime_ms: Summary,
    pub best: usize,
}

impl RandomSearchReport {
    pub fn best_sample(&self) -> &RandomSample {
        &self.samples[self.best]
    }
}

/// One rejection-sampled, proxy-trained architecture.
pub fn random_sample(
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    cfg: &RandomSearchConfig,
    seed: u64,
) -> Result<RandomSample> {
    let layers = space.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (arch, runtime_ms, attempts) = sample_in_window(model, &layers, cfg.window, cfg.max_attempts, &mut rng)?;
    let proxy = TrainConfig {
        seed,
        ..cfg.proxy.clone()
    };
    let accuracy = train_fixed::<f64>(space, &arch, data, &proxy)?.0.accuracy;
    Ok(RandomSample {
        seed,
        architecture: arch.to_records(),
        runtime_ms,
        accuracy,
        attempts,
    })
}

pub fn random_search(
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    cfg: &RandomSearchConfig,
) -> Result<RandomSearchReport> {
    if cfg.samples == 0 {
        return Err(Error::Config("random search needs at least one sample".into()));
    }
    let samples = (0..cfg.samples as u64)
        .map(|i| random_sample(space, data, model, cfg, cfg.seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(samples))
}

pub fn summarize(samples: Vec<RandomSample>) -> RandomSearchReport {
    let attempts: usize = samples.iter().map(|s| s.attempts).sum();
    let acc: Vec<f64> = samples.iter().map(|s| s.accuracy).collect();
    let rt: Vec<f64> = samples.iter().map(|s| s.runtime_ms).collect();
    let mut best = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.accuracy > samples[best].accuracy {
            best = i;
        }
    }
    RandomSearchReport {
        acceptance_rate: samples.len() as f64 / attempts.max(1) as f64,
        accuracy: Summary::of(&acc),
        runtime_ms: Summary::of(&rt),
        best,
        samples,
    }
}
