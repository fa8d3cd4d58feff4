//! Acquisition and suggestion rules over log λ (and the budget axis).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::gp::Gp;
use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 1024;

/// Search interval for λ; the search itself runs on `ln λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for LambdaBounds {
    fn default() -> Self {
        LambdaBounds { lo: 1e-3, hi: 1e2 }
    }
}

impl LambdaBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(Error::Config(format!(
                "λ bounds must satisfy 0 < lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Position of `lambda` on the unit interval in log space.
    pub fn to_unit(&self, lambda: f64) -> f64 {
        (lambda.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        (self.lo.ln() + u.clamp(0.0, 1.0) * (self.hi.ln() - self.lo.ln())).exp()
    }
}

/// Expected improvement over `best` for a maximization problem.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    let gain = mean - best;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let z = gain / sd;
    (gain * n.cdf(z) + sd * n.pdf(z)).max(0.0)
}

/// Base-2 van der Corput points shifted by a seeded offset (mod 1).
pub fn quasi_random_grid(n: usize, seed: u64) -> Vec<f64> {
    let shift: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
    (0..n)
        .map(|i| {
            let (mut k, mut denom, mut v) = (i as u64, 1.0, 0.0);
            while k > 0 {
                denom *= 2.0;
                v += (k & 1) as f64 / denom;
                k >>= 1;
            }
            (v + shift).fract()
        })
        .collect()
}

/// Observation on the unit-scaled search domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    /// `ln λ` scaled to [0, 1].
    pub u: f64,
    pub budget: usize,
    pub value: f64,
}

/// Next λ for vanilla BO: the EI maximizer over the quasi-random grid, or a
/// seeded uniform draw when nothing has been observed.
pub fn bo_suggest(observations: &[Observation], bounds: &LambdaBounds, seed: u64) -> Result<f64> {
    bounds.validate()?;
    if observations.is_empty() {
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
        return Ok(bounds.from_unit(u));
    }
    let xs: Vec<Vec<f64>> = observations.iter().map(|o| vec![o.u]).collect();
    let ys: Vec<f64> = observations.iter().map(|o| o.value).collect();
    let gp = Gp::fit(&xs, &ys)?;
    Ok(bounds.from_unit(bo_maximize(&gp, &ys, seed)))
}

pub(crate) fn bo_maximize(gp: &Gp, ys: &[f64], seed: u64) -> f64 {
    let best = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut arg = (f64::NEG_INFINITY, 0.5);
    for u in quasi_random_grid(GRID_POINTS, seed) {
        let (m, v) = gp.predict(&[u]);
        let ei = expected_improvement(m, v, best);
        if ei > arg.0 {
            arg = (ei, u);
        }
    }
    arg.1
}

/// Budget position on the unit interval.
pub fn budget_unit(budget: usize, budgets: &[usize]) -> f64 {
    let lo = *budgets.iter().min().unwrap_or(&budget) as f64;
    let hi = *budgets.iter().max().unwrap_or(&budget) as f64;
    if hi > lo {
        (budget as f64 - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Cost-weighted multi-fidelity suggestion.
///
/// Candidate `(λ, b)` scores `EI(λ, b_max) · ρ(b, b_max) / b`, where the
/// improvement is measured at the top fidelity and ρ is the GP's prior
/// correlation between the two budgets: cheaper budgets win unless the
/// fitted model says they carry little information about the top one.
/// Only budgets in `affordable` are considered.
pub fn multifidelity_suggest(
    observations: &[Observation],
    bounds: &LambdaBounds,
    budgets: &[usize],
    affordable: &[usize],
    seed: u64,
) -> Result<(f64, usize)> {
    bounds.validate()?;
    let cheapest = *affordable
        .iter()
        .min()
        .ok_or_else(|| Error::Empty("no affordable budget".into()))?;
    if observations.is_empty() {
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
        return Ok((bounds.from_unit(u), cheapest));
    }
    let top = *budgets.iter().max().expect("non-empty budgets");
    let xs: Vec<Vec<f64>> = observations
        .iter()
        .map(|o| vec![o.u, budget_unit(o.budget, budgets)])
        .collect();
    let ys: Vec<f64> = observations.iter().map(|o| o.value).collect();
    let gp = Gp::fit(&xs, &ys)?;
    Ok(mf_maximize(&gp, observations, bounds, budgets, affordable, seed, top))
}

pub(crate) fn mf_maximize(
    gp: &Gp,
    observations: &[Observation],
    bounds: &LambdaBounds,
    budgets: &[usize],
    affordable: &[usize],
    seed: u64,
    top: usize,
) -> (f64, usize) {
    let best = observations
        .iter()
        .filter(|o| o.budget == top)
        .map(|o| o.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let best = if best.is_finite() {
        best
    } else {
        observations.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max)
    };
    let top_u = budget_unit(top, budgets);
    let mut sorted = affordable.to_vec();
    sorted.sort_unstable();
    let mut arg = (f64::NEG_INFINITY, 0.5, sorted[0]);
    for u in quasi_random_grid(GRID_POINTS, seed) {
        let (m, v) = gp.predict(&[u, top_u]);
        let ei = expected_improvement(m, v, best);
        for &b in &sorted {
            let d = (budget_unit(b, budgets) - top_u) / gp.hyper.lengthscales[1];
            let score = ei * (-0.5 * d * d).exp() / b as f64;
            if score > arg.0 {
                arg = (score, u, b);
            }
        }
    }
    (bounds.from_unit(arg.1), arg.2)
}
