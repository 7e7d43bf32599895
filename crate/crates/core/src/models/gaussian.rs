use serde::{Deserialize, Serialize};

use super::{Dataset, Model};
use crate::error::{Error, Result};
use crate::math::{log_normal_isotropic, LN_2PI};

/// Conjugate Gaussian toy: `θ ~ N(m₀ 1, s₀² I)`, `x_i ~ N(θ, s² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianToyConfig {
    pub dim: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub likelihood_var: f64,
}

impl Default for GaussianToyConfig {
    fn default() -> Self {
        Self { dim: 1, prior_mean: 0.0, prior_var: 4.0, likelihood_var: 1.0 }
    }
}

impl GaussianToyConfig {
    fn validate(&self) -> Result<()> {
        if !(self.prior_var > 0.0 && self.likelihood_var > 0.0) {
            return Err(Error::InvalidParameter("Gaussian toy variances must be positive".into()));
        }
        Ok(())
    }

    /// Analytic tempered posterior `(mean, variance)` given observations and `β`.
    /// With `β = 1` and all the data this is the full-data posterior.
    pub fn posterior(&self, data: &Dataset, prior_temper: f64) -> (Vec<f64>, f64) {
        let d = data.outputs().cols();
        let n = data.len() as f64;
        let precision = prior_temper / self.prior_var + n / self.likelihood_var;
        let mut mean = vec![prior_temper * self.prior_mean / self.prior_var; d];
        for i in 0..data.len() {
            for (m, x) in mean.iter_mut().zip(data.outputs().row(i)) {
                *m += x / self.likelihood_var;
            }
        }
        mean.iter_mut().for_each(|m| *m /= precision);
        (mean, 1.0 / precision)
    }
}

#[derive(Debug, Clone)]
pub struct GaussianToy {
    config: GaussianToyConfig,
    dim: usize,
    beta: f64,
    n: f64,
    sum_x: Vec<f64>,
    sum_sq: f64,
}

impl GaussianToy {
    pub fn new(config: GaussianToyConfig, shard: &Dataset, prior_temper: f64) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        if dim == 0 || shard.outputs().cols() != dim {
            return Err(Error::DataValidation(format!(
                "Gaussian toy expects {dim} output columns, shard has {}",
                shard.outputs().cols()
            )));
        }
        let mut sum_x = vec![0.0; dim];
        let mut sum_sq = 0.0;
        for i in 0..shard.len() {
            for (s, x) in sum_x.iter_mut().zip(shard.outputs().row(i)) {
                *s += x;
                sum_sq += x * x;
            }
        }
        Ok(Self { config, dim, beta: prior_temper, n: shard.len() as f64, sum_x, sum_sq })
    }
}

impl Model for GaussianToy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn prior_temper(&self) -> f64 {
        self.beta
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        let c = &self.config;
        let d = self.dim as f64;
        let prior = -0.5 * d * (LN_2PI + c.prior_var.ln())
            - theta.iter().map(|t| (t - c.prior_mean).powi(2)).sum::<f64>() / (2.0 * c.prior_var);
        // Σ_i ||x_i − θ||² from sufficient statistics
        let sq = self.sum_sq - 2.0 * theta.iter().zip(&self.sum_x).map(|(t, s)| t * s).sum::<f64>()
            + self.n * theta.iter().map(|t| t * t).sum::<f64>();
        let lik = -0.5 * self.n * d * (LN_2PI + c.likelihood_var.ln()) - sq / (2.0 * c.likelihood_var);
        self.beta * prior + lik
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let c = &self.config;
        theta
            .iter()
            .zip(&self.sum_x)
            .map(|(t, s)| -self.beta * (t - c.prior_mean) / c.prior_var + (s - self.n * t) / c.likelihood_var)
            .collect()
    }

    fn hessian_trace(&self, _theta: &[f64]) -> f64 {
        let c = &self.config;
        -(self.dim as f64) * (self.beta / c.prior_var + self.n / c.likelihood_var)
    }
}

pub(super) fn log_predictive(config: &GaussianToyConfig, theta: &[f64], outputs: &[f64]) -> f64 {
    log_normal_isotropic(outputs, theta, config.likelihood_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::{fd_gradient, fd_hessian_trace, rel_err};
    use crate::models::Matrix;

    fn data(rows: &[&[f64]]) -> Dataset {
        let d = rows.first().map_or(1, |r| r.len());
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Dataset::new(Matrix::zeros(rows.len(), 0), Matrix::new(rows.len(), d, flat).unwrap()).unwrap()
    }

    #[test]
    fn single_datum_conjugate_update() {
        let cfg = GaussianToyConfig { dim: 1, prior_mean: 1.0, prior_var: 2.0, likelihood_var: 0.5 };
        let (mean, var) = cfg.posterior(&data(&[&[3.0]]), 1.0);
        let precision = 1.0 / 2.0 + 1.0 / 0.5;
        assert!((var - 1.0 / precision).abs() < 1e-15);
        assert!((mean[0] - (1.0 / 2.0 + 3.0 / 0.5) / precision).abs() < 1e-15);
    }

    #[test]
    fn tempered_prior_without_data_scales_variance() {
        let cfg = GaussianToyConfig { dim: 2, prior_mean: -0.5, prior_var: 3.0, likelihood_var: 1.0 };
        let empty = Dataset::new(Matrix::zeros(0, 0), Matrix::zeros(0, 2)).unwrap();
        let beta = 0.25;
        let (mean, var) = cfg.posterior(&empty, beta);
        assert!((var - 3.0 / beta).abs() < 1e-12);
        assert!(mean.iter().all(|m| (m + 0.5).abs() < 1e-15));
    }

    #[test]
    fn log_joint_matches_direct_sum() {
        let cfg = GaussianToyConfig { dim: 2, prior_mean: 0.2, prior_var: 1.5, likelihood_var: 0.7 };
        let d = data(&[&[1.0, -1.0], &[0.5, 2.0], &[-0.3, 0.1]]);
        let model = GaussianToy::new(cfg.clone(), &d, 0.5).unwrap();
        let theta = [0.4, -0.9];
        let direct = 0.5 * log_normal_isotropic(&theta, &[0.2, 0.2], 1.5)
            + (0..3).map(|i| log_normal_isotropic(d.outputs().row(i), &theta, 0.7)).sum::<f64>();
        assert!((model.log_joint(&theta) - direct).abs() < 1e-12);
        let fd = fd_gradient(&model, &theta, 1e-5);
        for (a, b) in model.gradient(&theta).iter().zip(&fd) {
            assert!(rel_err(*a, *b) < 1e-7);
        }
        assert!(rel_err(model.hessian_trace(&theta), fd_hessian_trace(&model, &theta, 1e-5)) < 1e-7);
    }
}
