use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tlsa::predict_mean;
use super::{Dataset, Matrix, ModelConfig};
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid};

/// Parameters a synthetic dataset was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: ModelConfig,
    pub seed: u64,
    /// True parameters in the model's unconstrained coordinates.
    pub theta: Vec<f64>,
    /// Natural-scale parameters by name.
    pub natural: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: Dataset,
    pub truth: GroundTruth,
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(e.to_string())
}

/// Draw `n` observations from the model's generative process.
pub fn generate_synthetic(config: &ModelConfig, n: usize, seed: u64) -> Result<SyntheticData> {
    if n == 0 {
        return Err(Error::Configuration("synthetic dataset needs N ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut natural = BTreeMap::new();
    let (data, theta) = match config {
        ModelConfig::Gaussian(c) => {
            let prior = Normal::new(c.prior_mean, c.prior_var.sqrt()).map_err(invalid)?;
            let theta: Vec<f64> = (0..c.dim).map(|_| prior.sample(&mut rng)).collect();
            let sd = c.likelihood_var.sqrt();
            let mut out = Vec::with_capacity(n * c.dim);
            for _ in 0..n {
                out.extend(theta.iter().map(|t| t + sd * rng.sample::<f64, _>(StandardNormal)));
            }
            let data = Dataset::new(Matrix::zeros(n, 0), Matrix::new(n, c.dim, out)?)?;
            natural.insert("theta".into(), theta.clone());
            (data, theta)
        }
        ModelConfig::Logistic(c) => {
            let alpha = Gamma::new(c.prior_shape, 1.0 / c.prior_rate).map_err(invalid)?.sample(&mut rng);
            let w_dist = Normal::new(0.0, alpha.recip().sqrt()).map_err(invalid)?;
            let w: Vec<f64> = (0..c.features).map(|_| w_dist.sample(&mut rng)).collect();
            let data = logistic_rows(&w, n, &mut rng)?;
            natural.insert("alpha".into(), vec![alpha]);
            natural.insert("w".into(), w.clone());
            let mut theta = w;
            theta.push(alpha.ln());
            (data, theta)
        }
        ModelConfig::Tlsa(c) => {
            let exp = Exp::new(c.rho).map_err(invalid)?;
            let widths: Vec<f64> = (0..c.sources).map(|_| exp.sample(&mut rng)).collect();
            let centers: Vec<f64> = (0..c.sources * c.spatial_dims).map(|_| rng.random::<f64>()).collect();
            let w_dist = Normal::new(0.0, c.weight_var.sqrt()).map_err(invalid)?;
            let weights: Vec<f64> = (0..c.covariates * c.sources).map(|_| w_dist.sample(&mut rng)).collect();
            let theta = c.pack(&weights, &widths, &centers);
            let locations = c.locations();
            let noise_sd = c.tau.recip().sqrt();
            let mut x = Vec::with_capacity(n * c.covariates);
            let mut u = Vec::with_capacity(n * c.outputs);
            for _ in 0..n {
                let row: Vec<f64> = (0..c.covariates).map(|_| rng.sample(StandardNormal)).collect();
                let mean = predict_mean(c, &locations, &theta, &row);
                u.extend(mean.iter().map(|m| m + noise_sd * rng.sample::<f64, _>(StandardNormal)));
                x.extend(row);
            }
            let data = Dataset::new(Matrix::new(n, c.covariates, x)?, Matrix::new(n, c.outputs, u)?)?;
            natural.insert("lambda".into(), widths);
            natural.insert("r_bar".into(), centers);
            natural.insert("w".into(), weights);
            (data, theta)
        }
    };
    Ok(SyntheticData { data, truth: GroundTruth { model: config.clone(), seed, theta, natural } })
}

/// Logistic data with fixed coefficients `w` (standard normal features).
pub fn generate_logistic_with_truth(w: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    logistic_rows(w, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn logistic_rows<R: Rng>(w: &[f64], n: usize, rng: &mut R) -> Result<Dataset> {
    let v = w.len();
    let mut x = Vec::with_capacity(n * v);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..v).map(|_| rng.sample(StandardNormal)).collect();
        let p = sigmoid(-dot(w, &row));
        y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        x.extend(row);
    }
    Dataset::new(Matrix::new(n, v, x)?, Matrix::new(n, 1, y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianToyConfig, LogisticModelConfig, TlsaModelConfig};

    #[test]
    fn tlsa_defaults_follow_experiment_setup() {
        let cfg = TlsaModelConfig::default();
        assert_eq!((cfg.tau, cfg.weight_var, cfg.rho, cfg.outputs), (1.0, 5.0, 1.0, 50));
        let syn = generate_synthetic(&ModelConfig::Tlsa(cfg.clone()), 1000, 7).unwrap();
        assert_eq!(syn.data.len(), 1000);
        assert_eq!(syn.data.outputs().cols(), 50);
        assert_eq!(syn.truth.theta.len(), cfg.param_dim());
    }

    #[test]
    fn zero_truth_gives_balanced_labels() {
        let n = 4000;
        let data = generate_logistic_with_truth(&[0.0; 5], n, 11).unwrap();
        let ones: f64 = data.outputs().as_slice().iter().sum();
        let band = 3.0 * (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < band, "{ones}");
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = ModelConfig::Logistic(LogisticModelConfig::new(4));
        let a = generate_synthetic(&cfg, 50, 3).unwrap();
        let b = generate_synthetic(&cfg, 50, 3).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic(&cfg, 50, 4).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn holdout_reserves_ten_percent() {
        let cfg = ModelConfig::Gaussian(GaussianToyConfig::default());
        let syn = generate_synthetic(&cfg, 1000, 1).unwrap();
        let (train, test) = syn.data.split_holdout(0.1, 1).unwrap();
        assert_eq!((train.len(), test.len()), (900, 100));
    }

    #[test]
    fn zero_rows_rejected() {
        let cfg = ModelConfig::Gaussian(GaussianToyConfig::default());
        assert!(generate_synthetic(&cfg, 0, 1).is_err());
    }
}
