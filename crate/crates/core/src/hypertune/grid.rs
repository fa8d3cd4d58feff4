use serde::{Deserialize, Serialize};

use super::{evaluate_sample, Backend, TradeoffSample};
use crate::error::{Error, Result};

/// Rewards over a λ × budget grid; rows are λ values, columns budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridStudy {
    pub target_ms: f64,
    pub lambdas: Vec<f64>,
    pub budgets: Vec<usize>,
    pub samples: Vec<Vec<TradeoffSample>>,
}

impl GridStudy {
    pub fn rewards(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|row| row.iter().map(|s| s.reward).collect()).collect()
    }

    /// Column of the best reward in each row (first on ties).
    pub fn row_argmax(&self) -> Vec<usize> {
        self.rewards().iter().map(|row| argmax(row)).collect()
    }

    /// `lambda,<b1>,<b2>,...` header followed by one row per λ.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["lambda".to_string()];
        header.extend(self.budgets.iter().map(|b| b.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (lambda, row) in self.lambdas.iter().zip(self.rewards()) {
            let mut rec = vec![lambda.to_string()];
            rec.extend(row.iter().map(|r| r.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Evaluates every `(λ, budget)` cell, seeding cell `i` (row-major) with
/// `seed + i`. Unlike the tuners, a failed cell aborts the study.
pub fn grid_study(
    lambdas: &[f64],
    budgets: &[usize],
    target_ms: f64,
    backend: &dyn Backend,
    seed: u64,
) -> Result<GridStudy> {
    if lambdas.is_empty() || budgets.is_empty() {
        return Err(Error::Empty("grid study needs at least one λ and one budget".into()));
    }
    if !(target_ms > 0.0) {
        return Err(Error::Config(format!("target runtime must be positive, got {target_ms}")));
    }
    let mut samples = Vec::with_capacity(lambdas.len());
    for (r, &lambda) in lambdas.iter().enumerate() {
        let mut row = Vec::with_capacity(budgets.len());
        for (c, &b) in budgets.iter().enumerate() {
            let index = r * budgets.len() + c;
            let s = evaluate_sample(backend, target_ms, index, lambda, b, seed.wrapping_add(index as u64));
            if let Some(f) = &s.failure {
                return Err(Error::Config(format!("grid cell λ = {lambda}, b = {b} failed: {f}")));
            }
            row.push(s);
        }
        samples.push(row);
    }
    Ok(GridStudy {
        target_ms,
        lambdas: lambdas.to_vec(),
        budgets: budgets.to_vec(),
        samples,
    })
}
