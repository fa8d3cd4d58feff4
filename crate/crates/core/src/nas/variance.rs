//! Repeated searches with different seeds and their accuracy/runtime spread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latency::RuntimeModel;
use crate::space::{LayerRecord, SearchSpaceConfig};

use super::config::{SearchConfig, TrainConfig, Variant};
use super::random::{random_sample, RandomSearchConfig, Summary};
use super::search::RunOptions;
use super::train::train_fixed;
use super::{run_search, SearchRun};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarianceConfig {
    pub variants: Vec<Variant>,
    /// One run per seed, in this order.
    pub seeds: Vec<u64>,
    /// Architectures drawn from the best softmax run's distribution.
    pub intra_samples: usize,
    /// Runtime window of the random variant.
    pub window: (f64, f64),
    pub workers: usize,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        VarianceConfig {
            variants: Variant::ALL.to_vec(),
            seeds: (0..20).collect(),
            intra_samples: 20,
            window: (0.0, f64::MAX),
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// One architecture per search run.
    Inter,
    /// Architectures sampled from a single run's softmax distribution.
    Intra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRun {
    pub seed: u64,
    pub accuracy: f64,
    pub runtime_ms: f64,
    pub architecture: Vec<LayerRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCell {
    pub variant: Variant,
    pub kind: CellKind,
    pub accuracy: Summary,
    pub runtime_ms: Summary,
    pub runs: Vec<VarianceRun>,
}

impl VarianceCell {
    fn new(variant: Variant, kind: CellKind, runs: Vec<VarianceRun>) -> Self {
        let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
        let rt: Vec<f64> = runs.iter().map(|r| r.runtime_ms).collect();
        VarianceCell {
            variant,
            kind,
            accuracy: Summary::of(&acc),
            runtime_ms: Summary::of(&rt),
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceObservation {
    pub sigmoid_inter_accuracy_variance: f64,
    pub softmax_intra_accuracy_variance: f64,
    pub sigmoid_not_above_softmax_intra: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<VarianceCell>,
    /// Sigmoid inter-run variance versus single-softmax intra-run variance,
    /// when both were run.
    pub observation: Option<VarianceObservation>,
}

fn proxy_for(cfg: &SearchConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.proxy.clone()
    }
}

pub fn variance_study(
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    base: &SearchConfig,
    vcfg: &VarianceConfig,
) -> Result<VarianceReport> {
    if vcfg.seeds.len() < 2 {
        return Err(Error::Config(format!("variance study needs at least 2 runs, got {}", vcfg.seeds.len())));
    }
    if base.proxy.epochs == 0 {
        return Err(Error::Config("variance study needs proxy training (proxy.epochs > 0)".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(vcfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut cells = Vec::new();
    for &variant in &vcfg.variants {
        let results: Vec<Result<(VarianceRun, Option<SearchRun>)>> = pool.install(|| {
            vcfg.seeds
                .par_iter()
                .map(|&seed| run_one(space, data, model, base, vcfg, variant, seed))
                .collect()
        });
        let mut runs = Vec::with_capacity(results.len());
        let mut models = Vec::with_capacity(results.len());
        for r in results {
            let (run, m) = r?;
            runs.push(run);
            models.push(m);
        }
        if variant.is_softmax() {
            let mut best = 0;
            for (i, r) in runs.iter().enumerate() {
                if r.accuracy > runs[best].accuracy {
                    best = i;
                }
            }
            let seed = runs[best].seed;
            let Some(SearchRun::Bilevel(outcome)) = models.swap_remove(best) else {
                unreachable!("softmax variants run bilevel search")
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7a);
            let archs: Vec<_> = (0..vcfg.intra_samples).map(|_| outcome.model.sample(&mut rng)).collect();
            let intra: Vec<Result<VarianceRun>> = pool.install(|| {
                archs
                    .par_iter()
                    .enumerate()
                    .map(|(j, arch)| {
                        let s = j as u64;
                        let acc = train_fixed::<f64>(space, arch, data, &proxy_for(base, s))?.0.accuracy;
                        Ok(VarianceRun {
                            seed: s,
                            accuracy: acc,
                            runtime_ms: model.architecture_runtime(arch)?,
                            architecture: arch.to_records(),
                        })
                    })
                    .collect()
            });
            cells.push(VarianceCell::new(variant, CellKind::Inter, runs));
            cells.push(VarianceCell::new(variant, CellKind::Intra, intra.into_iter().collect::<Result<_>>()?));
        } else {
            cells.push(VarianceCell::new(variant, CellKind::Inter, runs));
        }
    }
    let find = |v: Variant, k: CellKind| cells.iter().find(|c| c.variant == v && c.kind == k);
    let observation = match (find(Variant::SingleSigmoid, CellKind::Inter), find(Variant::SingleSoftmax, CellKind::Intra)) {
        (Some(s), Some(m)) => Some(VarianceObservation {
            sigmoid_inter_accuracy_variance: s.accuracy.variance,
            softmax_intra_accuracy_variance: m.accuracy.variance,
            sigmoid_not_above_softmax_intra: s.accuracy.variance <= m.accuracy.variance,
        }),
        _ => None,
    };
    Ok(VarianceReport {
        seeds: vcfg.seeds.clone(),
        cells,
        observation,
    })
}

fn run_one(
    space: &SearchSpaceConfig,
    data: &Dataset,
    model: &RuntimeModel,
    base: &SearchConfig,
    vcfg: &VarianceConfig,
    variant: Variant,
    seed: u64,
) -> Result<(VarianceRun, Option<SearchRun>)> {
    if variant == Variant::Random {
        let rcfg = RandomSearchConfig {
            samples: 1,
            window: vcfg.window,
            proxy: base.proxy.clone(),
            seed,
            ..Default::default()
        };
        let s = random_sample(space, data, model, &rcfg, seed)?;
        return Ok((
            VarianceRun {
                seed,
                accuracy: s.accuracy,
                runtime_ms: s.runtime_ms,
                architecture: s.architecture,
            },
            None,
        ));
    }
    let cfg = SearchConfig {
        variant,
        seed,
        ..base.clone()
    };
    let run = run_search(&cfg, space, data, model, &RunOptions::default())?;
    let r = run.report();
    let out = VarianceRun {
        seed,
        accuracy: r.proxy_accuracy.expect("proxy training enabled"),
        runtime_ms: r.hard_runtime_ms,
        architecture: r.architecture.clone(),
    };
    let keep = variant.is_softmax().then_some(run);
    Ok((out, keep))
}
