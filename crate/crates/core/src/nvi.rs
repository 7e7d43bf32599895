//! Nonparametric variational inference: fit a uniform mixture of `K`
//! isotropic Gaussians to a target log-density that exposes its value,
//! gradient, and Hessian trace.
//!
//! The objective is
//!
//! ```text
//! L = (1/K) Σ_k [ log f(μ_k) + (σ_k²/2) Tr ∇² log f(μ_k) ] + Ĥ
//! Ĥ = −(1/K) Σ_k log[ (1/K) Σ_j N_d(μ_k | μ_j, (σ_k² + σ_j²) I_d) ]
//! ```
//!
//! i.e. a second-order expansion of the expected log-joint under each
//! component plus a lower bound on the mixture entropy. Variances are
//! optimized as `log σ²`. The mean gradient drops the `∇ Tr ∇² log f` term
//! so only second derivatives of the model are needed.
//!
//! Each iteration tries a limited-memory BFGS direction on the flattened
//! parameters, falling back to the diagonally preconditioned gradient, with
//! a backtracking line search. A step is kept only if it raises both `L` and
//! `L` with the traces frozen at the current means.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_normal_isotropic_sq, log_sum_exp};
use crate::mixture::MixtureApprox;
use crate::models::Model;

/// Means (row-major `K×d`) and log-variances of the `K` components.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    dim: usize,
    means: Vec<f64>,
    log_sigma2: Vec<f64>,
}

impl VariationalParams {
    pub fn new(means: Vec<Vec<f64>>, log_sigma2: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 || k != log_sigma2.len() {
            return Err(Error::InvalidParameter(format!(
                "need K ≥ 1 means and as many log-variances, got {k} and {}",
                log_sigma2.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter("zero-dimensional means".into()));
        }
        if let Some(bad) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, actual: bad.len() });
        }
        let flat: Vec<f64> = means.into_iter().flatten().collect();
        if flat.iter().chain(&log_sigma2).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("variational parameters must be finite".into()));
        }
        Ok(Self { dim, means: flat, log_sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components `K`.
    pub fn components(&self) -> usize {
        self.log_sigma2.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn log_sigma2(&self) -> &[f64] {
        &self.log_sigma2
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.log_sigma2[k].exp()
    }

    pub fn to_mixture(&self) -> Result<MixtureApprox> {
        let means = (0..self.components()).map(|k| self.mean(k).to_vec()).collect();
        let variances = (0..self.components()).map(|k| self.variance(k)).collect();
        MixtureApprox::from_parts(means, variances)
    }

    /// `self + step · direction`, with log-variances clamped to `bounds`.
    fn axpy(&self, step: f64, direction: &SurrogateGradient, bounds: (f64, f64)) -> Self {
        Self {
            dim: self.dim,
            means: self.means.iter().zip(&direction.means).map(|(a, b)| a + step * b).collect(),
            log_sigma2: self
                .log_sigma2
                .iter()
                .zip(&direction.log_sigma2)
                .map(|(a, b)| (a + step * b).clamp(bounds.0, bounds.1))
                .collect(),
        }
    }
}

/// Gradient of the surrogate with respect to the means (row-major `K×d`) and
/// the log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub means: Vec<f64>,
    pub log_sigma2: Vec<f64>,
}

impl SurrogateGradient {
    pub fn norm(&self) -> f64 {
        self.means.iter().chain(&self.log_sigma2).map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of mixture components `K`.
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the relative objective change stays below this for
    /// `patience` consecutive iterations.
    pub rel_tol: f64,
    pub patience: usize,
    pub init_seed: u64,
    /// Standard deviation of the initial mean draws.
    pub init_spread: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_halvings: usize,
    /// Box on each `σ_k²`. Where `Tr ∇² log f(μ_k) > 0` the objective grows
    /// without bound in `σ_k²`, so the upper end is what stops it.
    pub min_variance: f64,
    pub max_variance: f64,
    /// Keep the accepted objective values in the report.
    pub record_trace: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            components: 4,
            max_iters: 5000,
            rel_tol: 1e-6,
            patience: 5,
            init_seed: 0,
            init_spread: 2.0,
            initial_step: 1.0,
            max_step: 2.0,
            max_halvings: 30,
            min_variance: 1e-12,
            max_variance: 100.0,
            record_trace: false,
        }
    }
}

impl FitConfig {
    pub fn with_components(components: usize) -> Self {
        Self { components, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be positive".into()));
        }
        if !(self.min_variance > 0.0 && self.min_variance <= 1.0 && self.max_variance >= 1.0)
            || !self.max_variance.is_finite()
        {
            return Err(Error::InvalidParameter("variance bounds must satisfy 0 < min ≤ 1 ≤ max < ∞".into()));
        }
        if self.patience == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter("patience and max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_secs: f64,
    /// Components whose variance ended at `max_variance`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variance_at_bound: Vec<usize>,
    /// Objective after initialization and after every accepted step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<Vec<f64>>,
}

/// Per-component model evaluations at the means.
struct ComponentTerms {
    log_f: Vec<f64>,
    trace: Vec<f64>,
}

fn component_terms(params: &VariationalParams, model: &dyn Model) -> Result<ComponentTerms> {
    if model.dim() != params.dim {
        return Err(Error::DimensionMismatch { expected: model.dim(), actual: params.dim });
    }
    let k = params.components();
    let mut log_f = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);
    for c in 0..k {
        let (value, tr) = model.log_joint_and_trace(params.mean(c));
        if !value.is_finite() || !tr.is_finite() {
            return Err(Error::NonFinite { component: c });
        }
        log_f.push(value);
        trace.push(tr);
    }
    Ok(ComponentTerms { log_f, trace })
}

/// Pairwise convolution table `log N_d(μ_k | μ_j, (σ_k² + σ_j²) I)`.
struct PairTable {
    log_n: Vec<f64>,
    sum_var: Vec<f64>,
    sq_dist: Vec<f64>,
    /// `log Σ_j N_kj` per row.
    row_lse: Vec<f64>,
}

fn pair_table(params: &VariationalParams) -> PairTable {
    let k = params.components();
    let d = params.dim;
    let mut log_n = vec![0.0; k * k];
    let mut sum_var = vec![0.0; k * k];
    let mut sq_dist = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let s = params.variance(a) + params.variance(b);
            let q: f64 = params
                .mean(a)
                .iter()
                .zip(params.mean(b))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            let ln = log_normal_isotropic_sq(d, q, s);
            for (i, j) in [(a, b), (b, a)] {
                log_n[i * k + j] = ln;
                sum_var[i * k + j] = s;
                sq_dist[i * k + j] = q;
            }
        }
    }
    let row_lse = (0..k).map(|a| log_sum_exp(&log_n[a * k..(a + 1) * k])).collect();
    PairTable { log_n, sum_var, sq_dist, row_lse }
}

fn entropy_bound(params: &VariationalParams, table: &PairTable) -> f64 {
    let k = params.components() as f64;
    -table.row_lse.iter().map(|lse| lse - k.ln()).sum::<f64>() / k
}

fn objective(params: &VariationalParams, terms: &ComponentTerms) -> f64 {
    let k = params.components();
    let energy: f64 = (0..k)
        .map(|c| terms.log_f[c] + 0.5 * params.variance(c) * terms.trace[c])
        .sum::<f64>()
        / k as f64;
    energy + entropy_bound(params, &pair_table(params))
}

/// Value of the surrogate objective.
pub fn surrogate_elbo(params: &VariationalParams, model: &dyn Model) -> Result<f64> {
    let terms = component_terms(params, model)?;
    Ok(objective(params, &terms))
}

/// Entropy lower bound `Ĥ` on its own.
pub fn entropy_lower_bound(params: &VariationalParams) -> f64 {
    entropy_bound(params, &pair_table(params))
}

fn gradient_with_terms(
    params: &VariationalParams,
    model: &dyn Model,
    terms: &ComponentTerms,
) -> Result<SurrogateGradient> {
    let k = params.components();
    let d = params.dim;
    let kf = k as f64;
    let table = pair_table(params);
    let mut means = vec![0.0; k * d];
    let mut log_sigma2 = vec![0.0; k];

    for a in 0..k {
        let grad = model.gradient(params.mean(a));
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { component: a });
        }
        for (out, g) in means[a * d..(a + 1) * d].iter_mut().zip(&grad) {
            *out = g / kf;
        }
        log_sigma2[a] = 0.5 * params.variance(a) * terms.trace[a] / kf;
    }

    // Entropy: ∂Ĥ/∂μ_a = −(1/K) Σ_j (r_aj + r_ja)(μ_j − μ_a)/s_aj and
    // ∂Ĥ/∂σ_a² = −(1/K) Σ_j (r_aj + r_ja)(−d/(2 s_aj) + q_aj/(2 s_aj²)),
    // with responsibilities r_kj = N_kj / Σ_j' N_kj'.
    let resp = |row: usize, col: usize| (table.log_n[row * k + col] - table.row_lse[row]).exp();
    for a in 0..k {
        let mut dvar = 0.0;
        for j in 0..k {
            let weight = resp(a, j) + resp(j, a);
            let s = table.sum_var[a * k + j];
            let q = table.sq_dist[a * k + j];
            if j != a {
                let (mean_a, mean_j) = (params.mean(a), params.mean(j));
                for ((out, ma), mj) in means[a * d..(a + 1) * d].iter_mut().zip(mean_a).zip(mean_j) {
                    *out -= weight * (mj - ma) / s / kf;
                }
            }
            dvar -= weight * (-(d as f64) / (2.0 * s) + q / (2.0 * s * s)) / kf;
        }
        log_sigma2[a] += params.variance(a) * dvar;
    }
    Ok(SurrogateGradient { means, log_sigma2 })
}

/// Analytic gradient of the surrogate, omitting the third-derivative term
/// `(σ_k²/2) ∇ Tr ∇² log f(μ_k)` from the mean block.
pub fn surrogate_elbo_grad(params: &VariationalParams, model: &dyn Model) -> Result<SurrogateGradient> {
    let terms = component_terms(params, model)?;
    gradient_with_terms(params, model, &terms)
}

/// Diagonal preconditioner: `K σ_k²` on the means of component `k` and
/// `2K/d` on each log-variance, so that a unit step along the scaled
/// gradient is a Newton step on a Gaussian target.
fn preconditioner(params: &VariationalParams) -> Vec<f64> {
    let k = params.components();
    let kf = k as f64;
    let mut diag = Vec::with_capacity(k * (params.dim + 1));
    for c in 0..k {
        diag.extend(std::iter::repeat_n(kf * params.variance(c), params.dim));
    }
    diag.extend(std::iter::repeat_n(2.0 * kf / params.dim as f64, k));
    diag
}

fn flat_params(params: &VariationalParams) -> Vec<f64> {
    params.means.iter().chain(&params.log_sigma2).copied().collect()
}

fn flat_grad(grad: &SurrogateGradient) -> Vec<f64> {
    grad.means.iter().chain(&grad.log_sigma2).copied().collect()
}

fn unflatten(params: &VariationalParams, flat: Vec<f64>) -> SurrogateGradient {
    let mut means = flat;
    let log_sigma2 = means.split_off(params.components() * params.dim);
    SurrogateGradient { means, log_sigma2 }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MEMORY: usize = 8;

/// Curvature pairs for a limited-memory quasi-Newton direction, stored as
/// `s = Δx` and `y = −Δg` (the objective is maximized).
#[derive(Default)]
struct QuasiNewton {
    pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl QuasiNewton {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        // the truncated gradient is not an exact gradient, so skip pairs
        // without positive curvature
        if !(sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt()) {
            return;
        }
        if self.pairs.len() == MEMORY {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion with `diag` as the initial inverse Hessian.
    /// `None` without history or when the result is not an ascent direction.
    fn direction(&self, grad: &[f64], diag: &[f64]) -> Option<Vec<f64>> {
        let (s_last, y_last, _) = self.pairs.back()?;
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let py: f64 = y_last.iter().zip(diag).map(|(y, p)| y * y * p).sum();
        let gamma = dot(s_last, y_last) / py;
        let mut r: Vec<f64> = q.iter().zip(diag).map(|(qi, p)| gamma * p * qi).collect();
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &r);
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
        (dot(&r, grad) > 0.0 && r.iter().all(|x| x.is_finite())).then_some(r)
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }
}

fn initial_params<R: Rng + ?Sized>(dim: usize, config: &FitConfig, rng: &mut R) -> VariationalParams {
    let means = (0..config.components * dim)
        .map(|_| config.init_spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    VariationalParams { dim, means, log_sigma2: vec![0.0; config.components] }
}

const INIT_ATTEMPTS: usize = 20;

/// Fit with the generator seeded from `config.init_seed`.
pub fn fit(model: &dyn Model, config: &FitConfig) -> Result<(MixtureApprox, FitReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    fit_with_rng(model, config, &mut rng).map(|(params, report)| (params.to_mixture().expect("finite params"), report))
}

/// Gradient ascent with backtracking line search from a random start.
pub fn fit_with_rng<R: Rng + ?Sized>(
    model: &dyn Model,
    config: &FitConfig,
    rng: &mut R,
) -> Result<(VariationalParams, FitReport)> {
    config.validate()?;
    let started = Instant::now();
    let dim = model.dim();

    let mut init = None;
    for _ in 0..INIT_ATTEMPTS {
        let params = initial_params(dim, config, rng);
        if let Ok(terms) = component_terms(&params, model) {
            let value = objective(&params, &terms);
            if value.is_finite() {
                init = Some((params, terms, value));
                break;
            }
        }
    }
    let (params, terms, value) = init.ok_or(Error::InitializationFailure { attempts: INIT_ATTEMPTS })?;
    optimize(model, config, params, terms, value, started)
}

/// Run the optimizer from given starting parameters.
pub fn fit_from(
    model: &dyn Model,
    config: &FitConfig,
    params: VariationalParams,
) -> Result<(VariationalParams, FitReport)> {
    config.validate()?;
    let started = Instant::now();
    let terms = component_terms(&params, model)?;
    let value = objective(&params, &terms);
    if !value.is_finite() {
        return Err(Error::InitializationFailure { attempts: 1 });
    }
    optimize(model, config, params, terms, value, started)
}

struct Accepted {
    params: VariationalParams,
    terms: ComponentTerms,
    value: f64,
    step: f64,
    halvings: usize,
}

/// Backtracking from `step`, halving up to `max_halvings` times.
#[allow(clippy::too_many_arguments)]
fn line_search(
    model: &dyn Model,
    config: &FitConfig,
    params: &VariationalParams,
    terms: &ComponentTerms,
    value: f64,
    direction: &SurrogateGradient,
    step: f64,
    bounds: (f64, f64),
) -> Option<Accepted> {
    let mut trial = step;
    for halvings in 0..=config.max_halvings {
        let candidate = params.axpy(trial, direction, bounds);
        if let Ok(cand_terms) = component_terms(&candidate, model) {
            let cand_value = objective(&candidate, &cand_terms);
            // The direction ignores how the traces move with the means, so
            // the step must also pay off with the traces held fixed.
            // Otherwise a long step can land where the trace is large and
            // positive and be accepted for that alone.
            let frozen = ComponentTerms { log_f: cand_terms.log_f.clone(), trace: terms.trace.clone() };
            let frozen_value = objective(&candidate, &frozen);
            if cand_value.is_finite() && cand_value > value && frozen_value > value {
                return Some(Accepted { params: candidate, terms: cand_terms, value: cand_value, step: trial, halvings });
            }
        }
        trial *= 0.5;
    }
    None
}

fn optimize(
    model: &dyn Model,
    config: &FitConfig,
    mut params: VariationalParams,
    mut terms: ComponentTerms,
    mut value: f64,
    started: Instant,
) -> Result<(VariationalParams, FitReport)> {
    let bounds = (config.min_variance.ln(), config.max_variance.ln());
    let mut trace = config.record_trace.then(|| vec![value]);
    let mut step = config.initial_step;
    let mut streak = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut memory = QuasiNewton::default();
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;

    while iterations < config.max_iters {
        iterations += 1;
        let grad = flat_grad(&gradient_with_terms(&params, model, &terms)?);
        let x = flat_params(&params);
        if let Some((x_old, g_old)) = previous.take() {
            let s: Vec<f64> = x.iter().zip(&x_old).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_old.iter().zip(&grad).map(|(a, b)| a - b).collect();
            memory.push(s, y);
        }
        let diag = preconditioner(&params);
        let plain: Vec<f64> = grad.iter().zip(&diag).map(|(g, p)| g * p).collect();

        // quasi-Newton step from 1 first, then the scaled gradient with the
        // adaptive step
        let mut accepted = None;
        if let Some(dir) = memory.direction(&grad, &diag) {
            let dir = unflatten(&params, dir);
            accepted = line_search(model, config, &params, &terms, value, &dir, 1.0, bounds);
            if accepted.is_none() {
                memory.clear();
            }
        }
        let accepted = match accepted {
            Some(a) => Some(a),
            None => {
                let dir = unflatten(&params, plain);
                let found = line_search(model, config, &params, &terms, value, &dir, step, bounds);
                if let Some(ls) = &found {
                    step = if ls.halvings == 0 { (ls.step * 2.0).min(config.max_step) } else { ls.step };
                }
                found
            }
        };
        let Some(ls) = accepted else {
            // no improving step along the ascent direction
            converged = true;
            break;
        };

        let change = (ls.value - value).abs() / value.abs().max(1.0);
        previous = Some((x, grad));
        params = ls.params;
        terms = ls.terms;
        value = ls.value;
        if let Some(t) = trace.as_mut() {
            t.push(value);
        }

        if change < config.rel_tol {
            streak += 1;
            if streak >= config.patience {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }

    let variance_at_bound: Vec<usize> =
        (0..params.components()).filter(|&k| params.log_sigma2[k] >= bounds.1 - 1e-12).collect();
    if !variance_at_bound.is_empty() {
        log::warn!(
            "components {variance_at_bound:?} ended at the variance bound {}; the Hessian trace is positive there",
            config.max_variance
        );
    }
    let report = FitReport {
        objective: value,
        iterations,
        converged,
        wall_time_secs: started.elapsed().as_secs_f64(),
        variance_at_bound,
        objective_trace: trace,
    };
    Ok((params, report))
}
