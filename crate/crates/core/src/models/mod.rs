//! Model plugins: a tempered log-joint with its gradient and Hessian trace,
//! plus the data containers the models read from.
//!
//! Every model works on an unconstrained parameter vector in `R^d`.
//! Constrained quantities are reparameterized (log for positive scalars,
//! logit for the unit interval) and the log-Jacobian of the map is part of
//! the prior, so it is tempered together with the prior. The product of the
//! `M` shard log-joints with `β = 1/M` is then the full-data log-joint in the
//! same coordinates.

mod data;
mod gaussian;
mod logistic;
mod synthetic;
mod target;
mod tlsa;

pub use data::{Dataset, Matrix};
pub use gaussian::{GaussianToy, GaussianToyConfig};
pub use logistic::{LogisticModel, LogisticModelConfig};
pub use synthetic::{generate_logistic_with_truth, generate_synthetic, GroundTruth, SyntheticData};
pub use target::MixtureTarget;
pub use tlsa::{TlsaModel, TlsaModelConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A twice-differentiable log-density over `R^d`, typically a tempered
/// subposterior `β log p(θ) + log p(x_shard | θ)`.
pub trait Model: Send + Sync {
    fn dim(&self) -> usize;

    /// Exponent `β` applied to the prior (including reparameterization Jacobians).
    fn prior_temper(&self) -> f64;

    fn log_joint(&self, theta: &[f64]) -> f64;

    fn gradient(&self, theta: &[f64]) -> Vec<f64>;

    /// `Tr ∇² log_joint(θ)`.
    fn hessian_trace(&self, theta: &[f64]) -> f64;

    /// Log-joint and Hessian trace together; models override this when the
    /// two share work.
    fn log_joint_and_trace(&self, theta: &[f64]) -> (f64, f64) {
        (self.log_joint(theta), self.hessian_trace(theta))
    }
}

/// Which model family a dataset belongs to, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Gaussian(GaussianToyConfig),
    Logistic(LogisticModelConfig),
    Tlsa(TlsaModelConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Gaussian(_) => "gaussian",
            ModelConfig::Logistic(_) => "logistic",
            ModelConfig::Tlsa(_) => "tlsa",
        }
    }

    /// Dimension of the unconstrained parameter vector.
    pub fn param_dim(&self) -> usize {
        match self {
            ModelConfig::Gaussian(c) => c.dim,
            ModelConfig::Logistic(c) => c.features + 1,
            ModelConfig::Tlsa(c) => c.param_dim(),
        }
    }

    /// Build the tempered model over one shard.
    pub fn build(&self, shard: &Dataset, prior_temper: f64) -> Result<Box<dyn Model>> {
        if !(prior_temper > 0.0 && prior_temper <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prior temper must lie in (0, 1], got {prior_temper}"
            )));
        }
        Ok(match self {
            ModelConfig::Gaussian(c) => Box::new(GaussianToy::new(c.clone(), shard, prior_temper)?),
            ModelConfig::Logistic(c) => Box::new(LogisticModel::new(c.clone(), shard, prior_temper)?),
            ModelConfig::Tlsa(c) => Box::new(TlsaModel::new(c.clone(), shard, prior_temper)?),
        })
    }

    /// `log p(outputs_row | features_row, θ)` for one held-out row.
    pub fn log_predictive(&self, theta: &[f64], features: &[f64], outputs: &[f64]) -> f64 {
        match self {
            ModelConfig::Gaussian(c) => gaussian::log_predictive(c, theta, outputs),
            ModelConfig::Logistic(_) => logistic::log_predictive(theta, features, outputs[0]),
            ModelConfig::Tlsa(c) => tlsa::log_predictive(c, theta, features, outputs),
        }
    }

    /// Probability of label 1 for logistic models; `None` otherwise.
    pub fn positive_probability(&self, theta: &[f64], features: &[f64]) -> Option<f64> {
        match self {
            ModelConfig::Logistic(_) => Some(logistic::positive_probability(theta, features)),
            _ => None,
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Central finite differences used by the model unit tests.
    use super::Model;

    pub fn fd_gradient(model: &dyn Model, theta: &[f64], h: f64) -> Vec<f64> {
        let mut x = theta.to_vec();
        (0..theta.len())
            .map(|i| {
                x[i] = theta[i] + h;
                let up = model.log_joint(&x);
                x[i] = theta[i] - h;
                let down = model.log_joint(&x);
                x[i] = theta[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    pub fn fd_hessian_trace(model: &dyn Model, theta: &[f64], h: f64) -> f64 {
        let mut x = theta.to_vec();
        (0..theta.len())
            .map(|i| {
                x[i] = theta[i] + h;
                let up = model.gradient(&x)[i];
                x[i] = theta[i] - h;
                let down = model.gradient(&x)[i];
                x[i] = theta[i];
                (up - down) / (2.0 * h)
            })
            .sum()
    }

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }
}
