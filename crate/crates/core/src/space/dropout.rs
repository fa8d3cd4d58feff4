use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::superkernel::Keep;

/// Drop probability for optional superkernel subsets, decaying linearly to
/// zero at the end of the warmup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutSchedule {
    pub initial: f64,
    /// Fraction of the search during which dropout is active.
    pub warmup_fraction: f64,
}

impl Default for DropoutSchedule {
    fn default() -> Self {
        DropoutSchedule {
            initial: 0.3,
            warmup_fraction: 0.75,
        }
    }
}

impl DropoutSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.initial) {
            return Err(Error::Config(format!("dropout probability {} outside [0, 1]", self.initial)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "dropout warmup fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_fraction * total_steps as f64).round() as usize
    }

    pub fn probability(&self, step: usize, total_steps: usize) -> f64 {
        let warm = self.warmup_steps(total_steps);
        if step >= warm {
            0.0
        } else {
            self.initial * (1.0 - step as f64 / warm as f64)
        }
    }
}

/// Independently drops each optional subset (5x5 shell, second expansion
/// half, both SE subsets) of every layer with probability `p`.
pub fn sample_keep<R: Rng + ?Sized>(rng: &mut R, p: f64, layers: usize) -> Result<Vec<Keep>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1]")));
    }
    let mut keep = || rng.gen::<f64>() >= p;
    Ok((0..layers)
        .map(|_| Keep {
            k5: keep(),
            e6: keep(),
            se25: keep(),
            se50: keep(),
        })
        .collect())
}
