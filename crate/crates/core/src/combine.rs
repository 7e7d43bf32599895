//! Drawing from the product of subposterior mixtures.
//!
//! Three routes:
//!
//! * [`enumerate_product`](crate::mixture::enumerate_product): every one of
//!   the `Π_m K_m` components with its weight, O(dMK^M).
//! * [`sample_components`]: a Metropolis-within-Gibbs chain over component
//!   index vectors. Each step picks a factor `m` uniformly, proposes a
//!   uniformly drawn component for it, and accepts with probability
//!   `min(1, w_new / w_old)`. The stationary distribution is the categorical
//!   over product components with probabilities proportional to their
//!   weights, so the retained states are draws of product components.
//!   O(dM) per step.
//! * [`pairwise_reduce`]: repeatedly multiply mixtures two at a time,
//!   replacing each pair with the uniform mixture of `R` components sampled
//!   from the pair product, until one mixture is left.

use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::mixture::{
    product_component, product_into, sample_isotropic, FactorCache, ComponentIndex, GaussianComponent, MixtureApprox,
    ProductMixture,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMethod {
    Exact,
    Sample,
    Pairwise,
}

impl CombineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CombineMethod::Exact => "exact",
            CombineMethod::Sample => "sample",
            CombineMethod::Pairwise => "pairwise",
        }
    }
}

impl std::str::FromStr for CombineMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exact" => Ok(CombineMethod::Exact),
            "sample" => Ok(CombineMethod::Sample),
            "pairwise" => Ok(CombineMethod::Pairwise),
            other => Err(format!("unknown combine method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of retained component draws `R`.
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Run the pairs of each pairwise round on concurrent threads.
    #[serde(default)]
    pub parallel_pairs: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { samples: 500, burn_in: 1000, seed: 0, parallel_pairs: false }
    }
}

/// Current state of the index chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub index: ComponentIndex,
    pub log_weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: CombineMethod,
    pub seed: u64,
    pub samples: usize,
    pub burn_in: usize,
    /// Number of factor mixtures `M`.
    pub factors: usize,
    /// Largest factor component count `K`.
    pub components: usize,
    /// Pair count of every pairwise round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rounds: Vec<usize>,
}

/// The `R` product components retained by a sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSampleSet {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    /// Index vectors of the retained states (chain sampler only).
    pub indices: Option<Vec<ComponentIndex>>,
    pub accepted: usize,
    pub provenance: Provenance,
}

impl ComponentSampleSet {
    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// The retained components as a uniform mixture.
    pub fn to_mixture(&self) -> Result<MixtureApprox> {
        MixtureApprox::from_parts(self.means.clone(), self.variances.clone())
    }

    /// Mean of the uniform mixture of the retained components.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for m in &self.means {
            for (o, x) in out.iter_mut().zip(m) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.len() as f64);
        out
    }

    /// Empirical frequency of each product component in odometer order.
    pub fn index_frequencies(&self, sizes: &[usize]) -> Option<Vec<f64>> {
        let indices = self.indices.as_ref()?;
        let total: usize = sizes.iter().product();
        let mut counts = vec![0.0; total];
        for idx in indices {
            counts[idx.flat(sizes)] += 1.0;
        }
        let n = indices.len() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        Some(counts)
    }
}

fn check_factors(mixtures: &[MixtureApprox]) -> Result<usize> {
    let first = mixtures
        .first()
        .ok_or_else(|| Error::InvalidParameter("at least one mixture is required".into()))?;
    let dim = first.dim();
    for m in mixtures {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: m.dim() });
        }
    }
    Ok(dim)
}

/// Sample `R` product components with the index chain.
pub fn sample_components(mixtures: &[MixtureApprox], config: &SamplerConfig) -> Result<ComponentSampleSet> {
    run_chain(mixtures, config, 0.0)
}

/// Chain with every log-weight shifted by `offset`; the trajectory must not
/// depend on it.
pub(crate) fn run_chain(mixtures: &[MixtureApprox], config: &SamplerConfig, offset: f64) -> Result<ComponentSampleSet> {
    let dim = check_factors(mixtures)?;
    if config.samples == 0 {
        return Err(Error::InvalidParameter("R must be at least 1".into()));
    }
    let factors = mixtures.len();
    let sizes: Vec<usize> = mixtures.iter().map(MixtureApprox::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cache = FactorCache::new(mixtures);

    let index: Vec<usize> = sizes.iter().map(|&k| rng.random_range(0..k)).collect();
    let mut mean = vec![0.0; dim];
    let (lw, variance) = product_into(mixtures, &index, &mut mean);
    let mut state = ChainState { index: ComponentIndex(index), log_weight: lw + offset, mean, variance };

    let mut candidate = state.index.0.clone();
    let mut cand_mean = vec![0.0; dim];
    let mut means = Vec::with_capacity(config.samples);
    let mut variances = Vec::with_capacity(config.samples);
    let mut indices = Vec::with_capacity(config.samples);
    let mut accepted = 0;

    for step in 1..=config.burn_in + config.samples {
        let m = rng.random_range(0..factors);
        let proposal = rng.random_range(0..sizes[m]);
        // candidate equals the current index everywhere else
        candidate[m] = proposal;
        let (cand_lw, cand_var) = cache.product_into(mixtures, &candidate, &mut cand_mean);
        let log_ratio = (cand_lw + offset) - state.log_weight;
        let accept = log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp();
        if accept {
            state.index.0[m] = proposal;
            state.log_weight = cand_lw + offset;
            std::mem::swap(&mut state.mean, &mut cand_mean);
            state.variance = cand_var;
            accepted += 1;
        } else {
            candidate[m] = state.index.0[m];
        }
        if cfg!(debug_assertions) && step % 1000 == 0 {
            let fresh = product_component(mixtures, &state.index).expect("valid chain index");
            debug_assert_eq!(fresh.log_weight + offset, state.log_weight);
        }
        if step > config.burn_in {
            means.push(state.mean.clone());
            variances.push(state.variance);
            indices.push(state.index.clone());
        }
    }

    Ok(ComponentSampleSet {
        means,
        variances,
        indices: Some(indices),
        accepted,
        provenance: Provenance {
            method: CombineMethod::Sample,
            seed: config.seed,
            samples: config.samples,
            burn_in: config.burn_in,
            factors,
            components: sizes.iter().copied().max().unwrap_or(0),
            rounds: Vec::new(),
        },
    })
}

/// Cost of one chain run: steps taken, work per step, and wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    /// `d · M`: scalar updates needed to form one candidate component.
    pub operations_per_step: usize,
    pub steps: usize,
    pub retained: usize,
    pub elapsed_secs: f64,
}

pub fn step_cost_probe(mixtures: &[MixtureApprox], config: &SamplerConfig) -> Result<StepCost> {
    let dim = check_factors(mixtures)?;
    let started = Instant::now();
    let set = sample_components(mixtures, config)?;
    let elapsed_secs = started.elapsed().as_secs_f64();
    Ok(StepCost {
        operations_per_step: dim * mixtures.len(),
        steps: config.burn_in + config.samples,
        retained: set.len(),
        elapsed_secs,
    })
}

/// Sequential pairwise products. Mixtures are paired in order
/// `(0,1), (2,3), …`; an odd leftover is carried to the next round.
pub fn pairwise_reduce(mixtures: &[MixtureApprox], config: &SamplerConfig) -> Result<ComponentSampleSet> {
    check_factors(mixtures)?;
    if mixtures.len() < 2 {
        return Err(Error::InvalidParameter("pairwise products need at least two mixtures".into()));
    }
    let k_max = mixtures.iter().map(MixtureApprox::len).max().unwrap_or(0);
    if config.samples < k_max {
        log::warn!(
            "pairwise products keep R = {} components per round, fewer than K = {k_max}; \
             the final mixture may under-represent components",
            config.samples
        );
    }

    let mut current: Vec<MixtureApprox> = mixtures.to_vec();
    let mut rounds = Vec::new();
    let mut accepted = 0;
    let mut last: Option<ComponentSampleSet> = None;
    let mut round = 0u64;
    while current.len() > 1 {
        let pairs = current.len() / 2;
        let pair_config = |p: usize| SamplerConfig {
            seed: derive_seed(config.seed, (round << 32) | p as u64),
            ..config.clone()
        };
        let results: Vec<Result<ComponentSampleSet>> = if config.parallel_pairs && pairs > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..pairs)
                    .map(|p| {
                        let pair = &current[2 * p..2 * p + 2];
                        let cfg = pair_config(p);
                        scope.spawn(move || sample_components(pair, &cfg))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("pair sampler panicked")).collect()
            })
        } else {
            (0..pairs)
                .map(|p| sample_components(&current[2 * p..2 * p + 2], &pair_config(p)))
                .collect()
        };
        let mut next = Vec::with_capacity(pairs + 1);
        for set in results {
            let set = set?;
            accepted += set.accepted;
            next.push(set.to_mixture()?);
            last = Some(set);
        }
        if current.len() % 2 == 1 {
            next.push(current.pop().expect("odd leftover"));
        }
        rounds.push(pairs);
        current = next;
        round += 1;
    }

    let last = last.expect("at least one round");
    Ok(ComponentSampleSet {
        means: last.means,
        variances: last.variances,
        indices: None,
        accepted,
        provenance: Provenance {
            method: CombineMethod::Pairwise,
            seed: config.seed,
            samples: config.samples,
            burn_in: config.burn_in,
            factors: mixtures.len(),
            components: k_max,
            rounds,
        },
    })
}

/// Where posterior draws come from.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorSource<'a> {
    /// Retained chain or pairwise components; each is picked uniformly.
    Sampled(&'a ComponentSampleSet),
    /// Fully enumerated product; components are picked by normalized weight.
    Exact(&'a ProductMixture),
    /// Arbitrary weighted components (weights need not be normalized).
    Weighted(&'a [(f64, GaussianComponent)]),
}

/// Draw `S` parameter vectors: pick a component, then `θ ~ N(μ, σ² I)`.
pub fn draw_posterior_samples<R: Rng + ?Sized>(
    source: PosteriorSource<'_>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    match source {
        PosteriorSource::Sampled(set) => {
            if set.is_empty() {
                return Err(Error::InvalidParameter("empty component sample set".into()));
            }
            Ok((0..count)
                .map(|_| {
                    let r = rng.random_range(0..set.len());
                    sample_isotropic(&set.means[r], set.variances[r], rng)
                })
                .collect())
        }
        PosteriorSource::Exact(product) => {
            let weights = product.normalized_weights();
            let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok((0..count)
                .map(|_| {
                    let c = &product.components()[pick.sample(rng)];
                    sample_isotropic(&c.mean, c.variance, rng)
                })
                .collect())
        }
        PosteriorSource::Weighted(items) => {
            if items.is_empty() {
                return Err(Error::InvalidParameter("no weighted components".into()));
            }
            let pick = WeightedIndex::new(items.iter().map(|(w, _)| *w))
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok((0..count)
                .map(|_| items[pick.sample(rng)].1.sample(rng))
                .collect())
        }
    }
}
