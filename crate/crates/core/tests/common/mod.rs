//! Independent reference computations for the integration tests.
#![allow(dead_code)]

use epvi::models::{GaussianToyConfig, LogisticModelConfig, Model, ModelConfig, TlsaModelConfig};
use epvi::{enumerate_product, MixtureApprox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian density written out directly, no log domain.
pub fn normal_pdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as i32;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).powf(d as f64 / 2.0)
}

/// `(1/K) Σ_k N(θ | μ_k, σ_k²)` by plain summation.
pub fn naive_mixture_pdf(q: &MixtureApprox, theta: &[f64]) -> f64 {
    q.components().iter().map(|c| normal_pdf(theta, c.mean(), c.variance())).sum::<f64>() / q.len() as f64
}

pub fn random_mixtures(m: usize, k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<MixtureApprox> {
    (0..m)
        .map(|_| {
            let means = (0..k).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
            let vars = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
            MixtureApprox::from_parts(means, vars).unwrap()
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor grid of `n` points per axis over a box, with the cell volume.
pub struct Grid {
    pub points: Vec<Vec<f64>>,
    pub cell: f64,
}

/// Grid over `center ± half_width` in every coordinate (d ≤ 2).
pub fn grid(center: &[f64], half_width: f64, n: usize) -> Grid {
    let d = center.len();
    assert!((1..=2).contains(&d), "grid oracle supports d ≤ 2");
    let h = 2.0 * half_width / (n - 1) as f64;
    let axis = |c: f64| (0..n).map(move |i| c - half_width + i as f64 * h);
    let points: Vec<Vec<f64>> = if d == 1 {
        axis(center[0]).map(|x| vec![x]).collect()
    } else {
        axis(center[0]).flat_map(|x| axis(center[1]).map(move |y| vec![x, y])).collect()
    };
    Grid { points, cell: h.powi(d as i32) }
}

/// Box enclosing every component of `mixtures`: the mean of all component
/// means, widened by ±8 pooled standard deviations plus the spread of the
/// means.
pub fn covering_box(mixtures: &[MixtureApprox]) -> (Vec<f64>, f64) {
    let d = mixtures[0].dim();
    let comps: Vec<_> = mixtures.iter().flat_map(|q| q.components().iter()).collect();
    let mut center = vec![0.0; d];
    for c in &comps {
        for (o, m) in center.iter_mut().zip(c.mean()) {
            *o += m / comps.len() as f64;
        }
    }
    let pooled_sd = (comps.iter().map(|c| c.variance()).sum::<f64>() / comps.len() as f64).sqrt();
    let spread = comps
        .iter()
        .flat_map(|c| c.mean().iter().zip(&center).map(|(m, o)| (m - o).abs()))
        .fold(0.0, f64::max);
    (center, spread + 8.0 * pooled_sd)
}

pub fn fd_gradient(model: &dyn Model, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            (model.log_joint(&up) - model.log_joint(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn fd_hessian_trace(model: &dyn Model, theta: &[f64], h: f64) -> f64 {
    (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            (model.gradient(&up)[i] - model.gradient(&down)[i]) / (2.0 * h)
        })
        .sum()
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Total-variation distance between two probability vectors.
pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Max abs gap between the normalized enumerated density and the
/// grid-normalized pointwise product of the factor densities.
pub fn enumeration_grid_gap(mixtures: &[MixtureApprox], n: usize) -> f64 {
    let product = enumerate_product(mixtures, 1_000_000).unwrap();
    let (center, half) = covering_box(mixtures);
    let g = grid(&center, half, n);
    let raw: Vec<f64> = g.points.iter().map(|p| mixtures.iter().map(|q| naive_mixture_pdf(q, p)).product()).collect();
    let z = raw.iter().sum::<f64>() * g.cell;
    g.points
        .iter()
        .zip(&raw)
        .map(|(p, f)| (product.log_density(p).unwrap().exp() - f / z).abs())
        .fold(0.0, f64::max)
}

pub fn random_theta(config: &ModelConfig, r: &mut impl Rng) -> Vec<f64> {
    match config {
        ModelConfig::Gaussian(c) => (0..c.dim).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect(),
        ModelConfig::Logistic(c) => {
            let mut th: Vec<f64> = (0..c.features).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            th.push(r.random_range(-1.0..1.0));
            th
        }
        ModelConfig::Tlsa(c) => {
            let mut th: Vec<f64> = (0..c.covariates * c.sources).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            // with the positive exponent g grows like exp(1/λ), so keep λ ≥ 1
            let lo = if c.positive_exponent { 0.0 } else { -1.5 };
            th.extend((0..c.sources).map(|_| r.random_range(lo..1.5)));
            th.extend((0..c.sources * c.spatial_dims).map(|_| r.sample::<f64, _>(StandardNormal)));
            th
        }
    }
}

/// Models for the derivative oracles, with row counts.
pub fn derivative_configs() -> Vec<(ModelConfig, usize)> {
    let tlsa = TlsaModelConfig { outputs: 20, ..TlsaModelConfig::default() };
    vec![
        (ModelConfig::Gaussian(GaussianToyConfig { dim: 3, ..GaussianToyConfig::default() }), 40),
        (ModelConfig::Logistic(LogisticModelConfig::new(5)), 200),
        (ModelConfig::Tlsa(tlsa.clone()), 30),
        (ModelConfig::Tlsa(TlsaModelConfig { positive_exponent: true, ..tlsa.clone() }), 30),
        (ModelConfig::Tlsa(TlsaModelConfig { spatial_dims: 2, outputs: 16, ..tlsa }), 30),
    ]
}
