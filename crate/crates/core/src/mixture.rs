//! Uniform isotropic Gaussian mixtures and the closed-form product of several
//! of them.
//!
//! A subposterior approximation is `q(θ) = (1/K) Σ_k N_d(θ | μ_k, σ_k² I_d)`.
//! Multiplying `M` such mixtures yields a mixture whose components are indexed
//! by one component choice per factor. For an index vector `k· = (k_1, …, k_M)`
//! the product component has
//!
//! ```text
//! σ²  = (Σ_m 1/σ²_{k_m})⁻¹
//! μ   = σ² Σ_m μ_{k_m} / σ²_{k_m}
//! w   = Π_m N_d(μ_{k_m} | μ, σ²_{k_m} I) / N_d(μ | μ, σ² I)
//! ```
//!
//! and `Π_m N_d(θ | μ_{k_m}, σ²_{k_m} I) = w · N_d(θ | μ, σ² I)` holds exactly,
//! so `Π_m q_m(θ) = K^{-M} Σ_{k·} w_{k·} N_d(θ | μ_{k·}, σ²_{k·} I)`.
//!
//! Weights are always carried as natural logarithms.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_normal_isotropic, log_sum_exp, softmax, LN_2PI};

/// Default upper bound on the number of enumerated product components.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// One isotropic Gaussian `N_d(mean, variance · I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    variance: f64,
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "component variance must be positive and finite, got {variance}"
            )));
        }
        if mean.is_empty() {
            return Err(Error::InvalidParameter("component mean is empty".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("component mean has non-finite entries".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        log_normal_isotropic(theta, &self.mean, self.variance)
    }

    /// Draw `θ ~ N_d(mean, variance · I_d)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_isotropic(&self.mean, self.variance, rng)
    }
}

/// Uniformly weighted mixture of `K` isotropic Gaussians in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureApprox {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl MixtureApprox {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidParameter("mixture needs at least one component".into()))?;
        let dim = first.dim();
        if let Some(bad) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.dim() });
        }
        Ok(Self { dim, components })
    }

    /// Build from parallel arrays of means and variances.
    pub fn from_parts(means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::InvalidParameter(format!(
                "{} means but {} variances",
                means.len(),
                variances.len()
            )));
        }
        let components = means
            .into_iter()
            .zip(variances)
            .map(|(m, v)| GaussianComponent::new(m, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components `K`.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &GaussianComponent {
        &self.components[k]
    }

    /// `log[(1/K) Σ_k N_d(θ | μ_k, σ_k² I)]`, evaluated with log-sum-exp.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        let terms: Vec<f64> = self.components.iter().map(|c| c.log_density(theta)).collect();
        Ok(log_sum_exp(&terms) - (self.len() as f64).ln())
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// One component choice per factor mixture (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentIndex(pub Vec<usize>);

impl ComponentIndex {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Position of this index in the odometer order used by [`enumerate_product`].
    pub fn flat(&self, sizes: &[usize]) -> usize {
        self.0.iter().zip(sizes).fold(0, |acc, (&k, &size)| acc * size + k)
    }
}

/// One component of the product mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductComponent {
    pub index: ComponentIndex,
    /// Natural log of the unnormalized weight `w_{k·}`.
    pub log_weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl ProductComponent {
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        log_normal_isotropic(theta, &self.mean, self.variance)
    }

    /// Draw `θ ~ N_d(μ_{k·}, σ²_{k·} I_d)`.
    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_isotropic(&self.mean, self.variance, rng)
    }
}

pub(crate) fn sample_isotropic<R: Rng + ?Sized>(mean: &[f64], variance: f64, rng: &mut R) -> Vec<f64> {
    let sd = variance.sqrt();
    mean.iter()
        .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Free-function form of [`ProductComponent::sample_theta`].
pub fn sample_theta<R: Rng + ?Sized>(component: &ProductComponent, rng: &mut R) -> Vec<f64> {
    component.sample_theta(rng)
}

fn check_compatible(mixtures: &[MixtureApprox]) -> Result<usize> {
    let first = mixtures
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one mixture is required".into()))?;
    let dim = first.dim();
    for m in mixtures {
        check_dim(dim, m.dim())?;
    }
    Ok(dim)
}

/// Closed-form parameters and log-weight of the product component selected
/// by `index`.
pub fn product_component(mixtures: &[MixtureApprox], index: &ComponentIndex) -> Result<ProductComponent> {
    let dim = check_compatible(mixtures)?;
    if index.len() != mixtures.len() {
        return Err(Error::InvalidParameter(format!(
            "index has {} entries for {} mixtures",
            index.len(),
            mixtures.len()
        )));
    }
    for (m, (&k, mix)) in index.0.iter().zip(mixtures).enumerate() {
        if k >= mix.len() {
            return Err(Error::InvalidParameter(format!(
                "index entry {k} out of range for mixture {m} with {} components",
                mix.len()
            )));
        }
    }
    let mut mean = vec![0.0; dim];
    let (log_weight, variance) = product_into(mixtures, &index.0, &mut mean);
    Ok(ProductComponent { index: index.clone(), log_weight, mean, variance })
}

/// Unchecked kernel: writes the product mean into `mean` and returns
/// `(log_weight, variance)`. O(dM).
pub(crate) fn product_into(mixtures: &[MixtureApprox], index: &[usize], mean: &mut [f64]) -> (f64, f64) {
    product_into_by(mixtures, index, mean, |_, _, c| component_stats(c))
}

/// `(1/σ², ln(2πσ²))`.
fn component_stats(c: &GaussianComponent) -> (f64, f64) {
    (1.0 / c.variance, (2.0 * std::f64::consts::PI * c.variance).ln())
}

/// Per-component `1/σ²` and `ln(2πσ²)`, computed once for repeated products.
pub(crate) struct FactorCache {
    stats: Vec<Vec<(f64, f64)>>,
}

impl FactorCache {
    pub(crate) fn new(mixtures: &[MixtureApprox]) -> Self {
        Self { stats: mixtures.iter().map(|q| q.components.iter().map(component_stats).collect()).collect() }
    }

    /// Same result as [`product_into`], bit for bit.
    pub(crate) fn product_into(&self, mixtures: &[MixtureApprox], index: &[usize], mean: &mut [f64]) -> (f64, f64) {
        product_into_by(mixtures, index, mean, |m, k, _| self.stats[m][k])
    }
}

fn product_into_by(
    mixtures: &[MixtureApprox],
    index: &[usize],
    mean: &mut [f64],
    stats: impl Fn(usize, usize, &GaussianComponent) -> (f64, f64),
) -> (f64, f64) {
    let dim = mean.len();
    mean.iter_mut().for_each(|x| *x = 0.0);
    let mut precision = 0.0;
    for (m, (mix, &k)) in mixtures.iter().zip(index).enumerate() {
        let c = mix.component(k);
        let (p, _) = stats(m, k, c);
        precision += p;
        for (acc, mu) in mean.iter_mut().zip(&c.mean) {
            *acc += p * mu;
        }
    }
    let variance = 1.0 / precision;
    mean.iter_mut().for_each(|x| *x *= variance);

    let mut log_weight = 0.5 * dim as f64 * (LN_2PI + variance.ln());
    for (m, (mix, &k)) in mixtures.iter().zip(index).enumerate() {
        let c = mix.component(k);
        let (_, log_norm) = stats(m, k, c);
        let sq: f64 = c.mean.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        log_weight += -0.5 * dim as f64 * log_norm - sq / (2.0 * c.variance);
    }
    (log_weight, variance)
}

/// Every component of the product of `mixtures`, in odometer order (last
/// factor varies fastest).
#[derive(Debug, Clone)]
pub struct ProductMixture {
    dim: usize,
    sizes: Vec<usize>,
    components: Vec<ProductComponent>,
    log_normalizer: f64,
}

impl ProductMixture {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Component counts of the factor mixtures.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn components(&self) -> &[ProductComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `log Σ_{k·} w_{k·}`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let lw: Vec<f64> = self.components.iter().map(|c| c.log_weight).collect();
        softmax(&lw)
    }

    /// Log-density of the normalized product mixture at `θ`.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim, theta.len())?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_weight - self.log_normalizer + c.log_density(theta))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Mean of the normalized product mixture.
    pub fn mean(&self) -> Vec<f64> {
        let weights = self.normalized_weights();
        let mut out = vec![0.0; self.dim];
        for (w, c) in weights.iter().zip(&self.components) {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += w * m;
            }
        }
        out
    }

    /// Per-coordinate variance of the normalized product mixture.
    pub fn marginal_variance(&self) -> Vec<f64> {
        let weights = self.normalized_weights();
        let mean = self.mean();
        let mut out = vec![0.0; self.dim];
        for (w, c) in weights.iter().zip(&self.components) {
            for ((o, m), mu) in out.iter_mut().zip(&c.mean).zip(&mean) {
                *o += w * (c.variance + (m - mu) * (m - mu));
            }
        }
        out
    }
}

/// Enumerate all `Π_m K_m` product components, refusing when the count
/// exceeds `cap`.
pub fn enumerate_product(mixtures: &[MixtureApprox], cap: usize) -> Result<ProductMixture> {
    let dim = check_compatible(mixtures)?;
    let sizes: Vec<usize> = mixtures.iter().map(MixtureApprox::len).collect();
    let blowup = || Error::ExponentialBlowup {
        k: sizes.iter().copied().max().unwrap_or(0),
        m: mixtures.len(),
        cap,
    };
    let total = sizes
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k))
        .ok_or_else(blowup)?;
    if total > cap {
        return Err(blowup());
    }

    let cache = FactorCache::new(mixtures);
    let mut components = Vec::with_capacity(total);
    let mut index = vec![0usize; mixtures.len()];
    for _ in 0..total {
        let mut mean = vec![0.0; dim];
        let (log_weight, variance) = cache.product_into(mixtures, &index, &mut mean);
        components.push(ProductComponent {
            index: ComponentIndex(index.clone()),
            log_weight,
            mean,
            variance,
        });
        // odometer increment
        for pos in (0..index.len()).rev() {
            index[pos] += 1;
            if index[pos] < sizes[pos] {
                break;
            }
            index[pos] = 0;
        }
    }
    let lw: Vec<f64> = components.iter().map(|c| c.log_weight).collect();
    let log_normalizer = log_sum_exp(&lw);
    Ok(ProductMixture { dim, sizes, components, log_normalizer })
}
