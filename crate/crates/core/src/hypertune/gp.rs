//! Exact Gaussian-process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const MAX_JITTER: f64 = 1e-4;
const LENGTHSCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
const SIGNAL_VARIANCES: [f64; 3] = [0.25, 1.0, 4.0];
const NOISE_VARIANCES: [f64; 3] = [1e-6, 1e-4, 1e-2];

/// Kernel hyperparameters; inputs are expected on a unit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GpHyper {
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GpHyper {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * d2).exp()
    }
}

/// Posterior of a GP on standardized targets.
#[derive(Clone, Debug)]
pub struct Gp {
    pub hyper: GpHyper,
    pub xs: Vec<Vec<f64>>,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Jitter that was added to the diagonal to factorize.
    pub jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

fn factorize(hyper: &GpHyper, xs: &[Vec<f64>]) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        hyper.kernel(&xs[i], &xs[j]) + if i == j { hyper.noise_variance } else { 0.0 }
    });
    let mut jitter = 0.0;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Domain(format!(
                "GP covariance not positive definite with jitter up to {MAX_JITTER}"
            )));
        }
    }
}

impl Gp {
    /// Conditions on `(xs, ys)` with fixed hyperparameters.
    pub fn fit_with(xs: &[Vec<f64>], ys: &[f64], hyper: GpHyper) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Empty(format!(
                "GP needs matching non-empty inputs, got {} points and {} targets",
                xs.len(),
                ys.len()
            )));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite { op: "gp_fit" });
        }
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_scale = if sd > 1e-12 { sd } else { 1.0 };
        let y = DVector::from_iterator(ys.len(), ys.iter().map(|v| (v - y_mean) / y_scale));
        let (chol, jitter) = factorize(&hyper, xs)?;
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let log_likelihood = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        Ok(Gp {
            hyper,
            xs: xs.to_vec(),
            y_mean,
            y_scale,
            jitter,
            chol,
            alpha,
            log_likelihood,
        })
    }

    /// Picks the hyperparameters with the highest marginal likelihood on a
    /// fixed logarithmic grid (ARD lengthscales for multi-dimensional inputs).
    /// Ties go to the longer lengthscale, so a dimension the data cannot
    /// resolve is treated as irrelevant rather than as noise.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        let dims = xs.first().map_or(1, Vec::len);
        let mut scales: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..dims {
            scales = scales
                .into_iter()
                .flat_map(|p| {
                    LENGTHSCALES.iter().rev().map(move |&l| {
                        let mut q = p.clone();
                        q.push(l);
                        q
                    })
                })
                .collect();
        }
        let mut best: Option<Gp> = None;
        let mut last_err = None;
        for ls in &scales {
            for &s in &SIGNAL_VARIANCES {
                for &noise in &NOISE_VARIANCES {
                    let hyper = GpHyper {
                        lengthscales: ls.clone(),
                        signal_variance: s,
                        noise_variance: noise,
                    };
                    match Gp::fit_with(xs, ys, hyper) {
                        Ok(gp) => {
                            if best.as_ref().is_none_or(|b| gp.log_likelihood > b.log_likelihood) {
                                best = Some(gp);
                            }
                        }
                        Err(e) => last_err = Some(e),
                    }
                }
            }
        }
        best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Empty("no GP hyperparameters".into())))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| self.hyper.kernel(x, xi)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).expect("triangular solve");
        let var = (self.hyper.kernel(x, x) - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mean, self.y_scale * self.y_scale * var)
    }

    /// Prior variance in target units.
    pub fn prior_variance(&self) -> f64 {
        self.y_scale * self.y_scale * self.hyper.signal_variance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_is_interpolated() {
        let gp = Gp::fit(&[vec![0.0]], &[1.0]).unwrap();
        assert!((gp.predict(&[0.0]).0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_observations_give_constant_mean() {
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.25]).collect();
        let gp = Gp::fit(&xs, &[2.0; 4]).unwrap();
        for q in [0.1, 0.5, 0.9, 3.0] {
            let (m, v) = gp.predict(&[q]);
            assert!((m - 2.0).abs() < 1e-12);
            assert!(v <= gp.prior_variance() + 1e-12);
        }
    }

    #[test]
    fn duplicate_points_need_jitter_or_noise() {
        let xs = vec![vec![0.5]; 3];
        let gp = Gp::fit(&xs, &[1.0, 1.0, 1.0]).unwrap();
        assert!(gp.predict(&[0.5]).1 >= 0.0);
    }
}
