use super::Model;
use crate::math::log_normal_isotropic;
use crate::mixture::MixtureApprox;

/// A fixed Gaussian-mixture density used as a synthetic target, e.g. for
/// checking that a fit finds every mode.
#[derive(Debug, Clone)]
pub struct MixtureTarget {
    mixture: MixtureApprox,
}

impl MixtureTarget {
    pub fn new(mixture: MixtureApprox) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &MixtureApprox {
        &self.mixture
    }

    /// Responsibilities and per-component score vectors `(μ_k − θ)/σ_k²`.
    fn responsibilities(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let logs: Vec<f64> = self
            .mixture
            .components()
            .iter()
            .map(|c| log_normal_isotropic(theta, c.mean(), c.variance()))
            .collect();
        let resp = crate::math::softmax(&logs);
        let scores = self
            .mixture
            .components()
            .iter()
            .map(|c| c.mean().iter().zip(theta).map(|(m, t)| (m - t) / c.variance()).collect())
            .collect();
        (resp, scores)
    }
}

impl Model for MixtureTarget {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn prior_temper(&self) -> f64 {
        1.0
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        self.mixture.log_density(theta).unwrap_or(f64::NAN)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (resp, scores) = self.responsibilities(theta);
        let mut grad = vec![0.0; theta.len()];
        for (r, s) in resp.iter().zip(&scores) {
            for (g, si) in grad.iter_mut().zip(s) {
                *g += r * si;
            }
        }
        grad
    }

    fn hessian_trace(&self, theta: &[f64]) -> f64 {
        // Tr ∇² log Σ = Σ_k r_k (−d/σ_k² + ‖s_k‖²) − ‖Σ_k r_k s_k‖²
        let d = theta.len() as f64;
        let (resp, scores) = self.responsibilities(theta);
        let mut mean_score = vec![0.0; theta.len()];
        let mut acc = 0.0;
        for ((r, s), c) in resp.iter().zip(&scores).zip(self.mixture.components()) {
            acc += r * (-d / c.variance() + s.iter().map(|x| x * x).sum::<f64>());
            for (m, si) in mean_score.iter_mut().zip(s) {
                *m += r * si;
            }
        }
        acc - mean_score.iter().map(|x| x * x).sum::<f64>()
    }
}
