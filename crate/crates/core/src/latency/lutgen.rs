//! Synthetic latency tables from analytic operation counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::space::{ResolvedLayer, SearchSpaceConfig, SeRatio};

use super::table::{LatencyTable, EXPANSIONS, KERNELS};

/// Milliseconds per multiply-accumulate.
pub const MS_PER_MAC: f64 = 1e-5;
/// Relative cost of a memory-bound elementwise operation versus one MAC.
pub const ELEMENTWISE_WEIGHT: f64 = 4.0;
pub const MAX_NOISE: f64 = 0.2;

/// Multiply-accumulates of the expand, depthwise and project convolutions.
pub fn block_macs(l: &ResolvedLayer, kernel: usize, expansion: usize) -> f64 {
    let e = l.expanded(expansion) as f64;
    let hw_in = (l.in_size * l.in_size) as f64;
    let hw_out = (l.out_size * l.out_size) as f64;
    l.in_channels as f64 * e * hw_in + e * (kernel * kernel) as f64 * hw_out + e * l.out_channels as f64 * hw_out
}

/// Cost of the SE path: its two fully connected layers plus pooling and
/// channel rescaling, which scale with the feature-map size.
pub fn se_cost(l: &ResolvedLayer, expansion: usize, se: SeRatio) -> f64 {
    if se == SeRatio::None {
        return 0.0;
    }
    let e = l.expanded(expansion) as f64;
    let s = l.squeeze(se.value()) as f64;
    let hw_out = (l.out_size * l.out_size) as f64;
    2.0 * e * s + ELEMENTWISE_WEIGHT * e * hw_out
}

/// Runtime of the stem, head and classifier.
pub fn overhead_macs(cfg: &SearchSpaceConfig) -> f64 {
    let stem_hw = (cfg.stem_out_size() * cfg.stem_out_size()) as f64;
    let last_hw = (cfg.last_size() * cfg.last_size()) as f64;
    let stem = (cfg.stem_channels * cfg.in_channels * 9) as f64 * stem_hw;
    let head = (cfg.head_channels * cfg.last_channels()) as f64 * last_hw;
    stem + head + (cfg.head_channels * cfg.classes) as f64
}

/// Synthetic table: `MS_PER_MAC * (MACs + SE cost) * (1 + u)` with
/// `u ~ U(-noise, noise)` drawn once per (layer, k, e) so the SE scaling
/// factors are noise-free. Noisy entries are raised where needed so the
/// table stays monotone in k and e.
pub fn lutgen(cfg: &SearchSpaceConfig, seed: u64, noise: f64) -> Result<LatencyTable> {
    if !(0.0..=MAX_NOISE).contains(&noise) {
        return Err(Error::Config(format!("lutgen noise {noise} outside [0, {MAX_NOISE}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = cfg
        .resolve()?
        .iter()
        .map(|l| {
            let mut out = [[[0.0; 3]; 2]; 2];
            for (ki, &k) in KERNELS.iter().enumerate() {
                for (ei, &e) in EXPANSIONS.iter().enumerate() {
                    let u = if noise > 0.0 { rng.gen_range(-noise..=noise) } else { 0.0 };
                    let macs = block_macs(l, k as usize, e as usize);
                    for (q, se) in SeRatio::ALL.into_iter().enumerate() {
                        out[ki][ei][q] = MS_PER_MAC * (macs + se_cost(l, e as usize, se)) * (1.0 + u);
                    }
                }
            }
            for q in 0..3 {
                for ei in 0..2 {
                    out[1][ei][q] = out[1][ei][q].max(out[0][ei][q]);
                }
                for ki in 0..2 {
                    out[ki][1][q] = out[ki][1][q].max(out[ki][0][q]);
                }
            }
            out
        })
        .collect();
    LatencyTable::new(MS_PER_MAC * overhead_macs(cfg), layers)
}
