//! Hierarchical Bayesian logistic regression:
//!
//! ```text
//! α   ~ Gamma(a, b)            (shape a, rate b)
//! w_v ~ N(0, 1/α)              v = 1..V
//! y_n ~ Bernoulli(σ(−wᵀx_n))
//! ```
//!
//! Parameters are `θ = (w, t)` with `t = log α`; the `+t` log-Jacobian of
//! `α = e^t` is part of the (tempered) prior.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{Dataset, Model};
use crate::error::{Error, Result};
use crate::math::{dot, log_sigmoid, sigmoid, LN_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModelConfig {
    /// Coefficient count `V`.
    pub features: usize,
    pub prior_shape: f64,
    pub prior_rate: f64,
}

impl LogisticModelConfig {
    pub fn new(features: usize) -> Self {
        Self { features, prior_shape: 1.0, prior_rate: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.prior_shape > 0.0 && self.prior_rate > 0.0) {
            return Err(Error::InvalidParameter("Gamma hyperprior shape and rate must be positive".into()));
        }
        if self.features == 0 {
            return Err(Error::InvalidParameter("logistic model needs at least one feature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    config: LogisticModelConfig,
    beta: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    row_sq_norms: Vec<f64>,
    prior_const: f64,
}

impl LogisticModel {
    pub fn new(config: LogisticModelConfig, shard: &Dataset, prior_temper: f64) -> Result<Self> {
        config.validate()?;
        let v = config.features;
        if shard.features().cols() != v {
            return Err(Error::DataValidation(format!(
                "logistic shard has {} feature columns, model expects {v}",
                shard.features().cols()
            )));
        }
        if shard.outputs().cols() != 1 {
            return Err(Error::DataValidation("logistic shard needs exactly one label column".into()));
        }
        let y = shard.outputs().as_slice().to_vec();
        if let Some(bad) = y.iter().find(|&&l| l != 0.0 && l != 1.0) {
            return Err(Error::DataValidation(format!("label {bad} is not 0 or 1")));
        }
        let x = shard.features().as_slice().to_vec();
        let row_sq_norms = x.chunks(v).map(|r| dot(r, r)).collect();
        let a = config.prior_shape;
        let prior_const = a * config.prior_rate.ln() - ln_gamma(a) - 0.5 * v as f64 * LN_2PI;
        Ok(Self { config, beta: prior_temper, x, y, row_sq_norms, prior_const })
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.x.chunks(self.config.features).zip(self.y.iter().copied())
    }

    fn log_prior(&self, w: &[f64], t: f64) -> f64 {
        let a = self.config.prior_shape;
        let b = self.config.prior_rate;
        let v = self.config.features as f64;
        let et = t.exp();
        // log Gamma(e^t; a, b) + t + Σ_v log N(w_v; 0, e^{−t})
        self.prior_const + a * t - b * et + 0.5 * v * t - 0.5 * et * dot(w, w)
    }
}

impl Model for LogisticModel {
    fn dim(&self) -> usize {
        self.config.features + 1
    }

    fn prior_temper(&self) -> f64 {
        self.beta
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        let (w, t) = theta.split_at(self.config.features);
        let lik: f64 = self
            .rows()
            .map(|(x, y)| {
                let eta = -dot(w, x);
                y * log_sigmoid(eta) + (1.0 - y) * log_sigmoid(-eta)
            })
            .sum();
        self.beta * self.log_prior(w, t[0]) + lik
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let v = self.config.features;
        let (w, t) = theta.split_at(v);
        let et = t[0].exp();
        let mut grad = vec![0.0; v + 1];
        for (x, y) in self.rows() {
            // d/dη log Bern(y; σ(η)) = y − σ(η), dη/dw = −x
            let r = y - sigmoid(-dot(w, x));
            for (g, xi) in grad.iter_mut().zip(x) {
                *g -= r * xi;
            }
        }
        for (g, wi) in grad.iter_mut().zip(w) {
            *g -= self.beta * et * wi;
        }
        let a = self.config.prior_shape;
        let b = self.config.prior_rate;
        grad[v] = self.beta * (a - b * et + 0.5 * v as f64 - 0.5 * et * dot(w, w));
        grad
    }

    fn hessian_trace(&self, theta: &[f64]) -> f64 {
        let v = self.config.features;
        let (w, t) = theta.split_at(v);
        let et = t[0].exp();
        let lik: f64 = self
            .rows()
            .zip(&self.row_sq_norms)
            .map(|((x, _), sq)| {
                let p = sigmoid(-dot(w, x));
                -p * (1.0 - p) * sq
            })
            .sum();
        let prior = -(v as f64) * et - self.config.prior_rate * et - 0.5 * et * dot(w, w);
        lik + self.beta * prior
    }

    fn log_joint_and_trace(&self, theta: &[f64]) -> (f64, f64) {
        let v = self.config.features;
        let (w, t) = theta.split_at(v);
        let et = t[0].exp();
        let mut lik = 0.0;
        let mut trace = 0.0;
        for ((x, y), sq) in self.rows().zip(&self.row_sq_norms) {
            let eta = -dot(w, x);
            lik += y * log_sigmoid(eta) + (1.0 - y) * log_sigmoid(-eta);
            let p = sigmoid(eta);
            trace -= p * (1.0 - p) * sq;
        }
        let prior_trace = -(v as f64) * et - self.config.prior_rate * et - 0.5 * et * dot(w, w);
        (
            self.beta * self.log_prior(w, t[0]) + lik,
            trace + self.beta * prior_trace,
        )
    }
}

pub(super) fn positive_probability(theta: &[f64], features: &[f64]) -> f64 {
    sigmoid(-dot(&theta[..features.len()], features))
}

pub(super) fn log_predictive(theta: &[f64], features: &[f64], label: f64) -> f64 {
    let eta = -dot(&theta[..features.len()], features);
    if label == 1.0 {
        log_sigmoid(eta)
    } else {
        log_sigmoid(-eta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::{fd_gradient, fd_hessian_trace, rel_err};
    use crate::models::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shard(n: usize, v: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * v).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        Dataset::new(Matrix::new(n, v, x).unwrap(), Matrix::new(n, 1, y).unwrap()).unwrap()
    }

    #[test]
    fn zero_weights_give_coin_flip_likelihood() {
        let data = shard(37, 3, 1);
        let model = LogisticModel::new(LogisticModelConfig::new(3), &data, 1.0).unwrap();
        for t in [-1.0, 0.0, 2.5] {
            let theta = [0.0, 0.0, 0.0, t];
            let lik = model.log_joint(&theta) - model.log_prior(&theta[..3], t);
            assert!((lik - 37.0 * 0.5f64.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_binary_labels() {
        let x = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let y = Matrix::new(2, 1, vec![1.0, 0.5]).unwrap();
        let data = Dataset::new(x, y).unwrap();
        let err = LogisticModel::new(LogisticModelConfig::new(1), &data, 1.0).unwrap_err();
        assert!(matches!(err, Error::DataValidation(_)));
    }

    #[test]
    fn log_prior_matches_gamma_and_normal_densities() {
        let data = shard(1, 2, 2);
        let cfg = LogisticModelConfig { features: 2, prior_shape: 2.5, prior_rate: 0.7 };
        let model = LogisticModel::new(cfg, &data, 1.0).unwrap();
        let (w, t) = ([0.3, -1.1], 0.4f64);
        let alpha = t.exp();
        let gamma = 2.5 * 0.7f64.ln() - ln_gamma(2.5) + 1.5 * alpha.ln() - 0.7 * alpha;
        let normals: f64 = w
            .iter()
            .map(|wi| -0.5 * (LN_2PI - alpha.ln()) - 0.5 * alpha * wi * wi)
            .sum();
        assert!((model.log_prior(&w, t) - (gamma + t + normals)).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let data = shard(60, 4, 3);
        let model = LogisticModel::new(LogisticModelConfig::new(4), &data, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = model.gradient(&theta);
            for (a, b) in g.iter().zip(fd_gradient(&model, &theta, 1e-5)) {
                assert!(rel_err(*a, b) < 1e-6, "{a} vs {b}");
            }
            let tr = model.hessian_trace(&theta);
            assert!(rel_err(tr, fd_hessian_trace(&model, &theta, 1e-5)) < 1e-5);
            let (lj, tr2) = model.log_joint_and_trace(&theta);
            assert!((lj - model.log_joint(&theta)).abs() < 1e-9);
            assert!((tr - tr2).abs() < 1e-9);
        }
    }
}
