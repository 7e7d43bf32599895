//! Topographic latent source analysis (TLSA), a nonlinear matrix
//! factorization:
//!
//! ```text
//! λ_l   ~ Exponential(ρ)                     l = 1..L
//! r̄_ld  ~ Beta(1, 1)                         d = 1..D
//! w_cl  ~ N(0, σ_w²)                         c = 1..C
//! u_nv  ~ N(Σ_c x_nc Σ_l w_cl g_lv, 1/τ)
//! g_lv  = exp(−‖r_v − r̄_l‖² / λ_l)
//! ```
//!
//! `r_v` are fixed locations of the `V` outputs on a uniform grid in
//! `[0, 1]^D`. The unconstrained parameter vector packs, in order,
//! `W` (row-major `C×L`), `t_l = log λ_l`, and `s_ld = logit(r̄_ld)`
//! (row-major `L×D`).
//!
//! `positive_exponent = true` evaluates `g_lv = exp(+‖r_v − r̄_l‖² / λ_l)` instead.

use serde::{Deserialize, Serialize};

use super::{Dataset, Model};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid, LN_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsaModelConfig {
    pub sources: usize,
    pub covariates: usize,
    pub outputs: usize,
    pub spatial_dims: usize,
    /// Exponential rate `ρ` on the basis widths.
    pub rho: f64,
    /// Prior variance `σ_w²` of the weights.
    pub weight_var: f64,
    /// Observation precision `τ`.
    pub tau: f64,
    #[serde(default)]
    pub positive_exponent: bool,
}

impl Default for TlsaModelConfig {
    fn default() -> Self {
        Self {
            sources: 4,
            covariates: 3,
            outputs: 50,
            spatial_dims: 1,
            rho: 1.0,
            weight_var: 5.0,
            tau: 1.0,
            positive_exponent: false,
        }
    }
}

impl TlsaModelConfig {
    pub fn param_dim(&self) -> usize {
        self.covariates * self.sources + self.sources + self.sources * self.spatial_dims
    }

    fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.covariates == 0 || self.outputs == 0 || self.spatial_dims == 0 {
            return Err(Error::InvalidParameter("TLSA sizes L, C, V, D must all be positive".into()));
        }
        if !(self.rho > 0.0 && self.weight_var > 0.0 && self.tau > 0.0) {
            return Err(Error::InvalidParameter("TLSA hyperparameters ρ, σ_w², τ must be positive".into()));
        }
        Ok(())
    }

    fn sign(&self) -> f64 {
        if self.positive_exponent {
            1.0
        } else {
            -1.0
        }
    }

    /// Output locations `r_v` (row-major `V×D`) on a uniform grid in the unit
    /// cube: `side = ⌈V^{1/D}⌉` points per axis, first `V` points in
    /// odometer order.
    pub fn locations(&self) -> Vec<f64> {
        let dims = self.spatial_dims;
        let mut side = (self.outputs as f64).powf(1.0 / dims as f64).round() as usize;
        while side.pow(dims as u32) < self.outputs {
            side += 1;
        }
        let coord = |i: usize| if side > 1 { i as f64 / (side - 1) as f64 } else { 0.5 };
        let mut out = Vec::with_capacity(self.outputs * dims);
        for v in 0..self.outputs {
            let mut rem = v;
            let mut point = vec![0.0; dims];
            for p in point.iter_mut().rev() {
                *p = coord(rem % side);
                rem /= side;
            }
            out.extend(point);
        }
        out
    }

    /// Split an unconstrained vector into `(W, t, s)` views.
    pub fn unpack<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let cl = self.covariates * self.sources;
        let (w, rest) = theta.split_at(cl);
        let (t, s) = rest.split_at(self.sources);
        (w, t, s)
    }

    /// Pack natural parameters `(W, λ, r̄)` into the unconstrained vector.
    pub fn pack(&self, weights: &[f64], widths: &[f64], centers: &[f64]) -> Vec<f64> {
        let mut out = weights.to_vec();
        out.extend(widths.iter().map(|l| l.ln()));
        out.extend(centers.iter().map(|r| (r / (1.0 - r)).ln()));
        out
    }
}

/// Basis values `g_lv` and their first/second derivatives in `t_l` and `s_ld`.
struct Basis {
    g: Vec<f64>,
    dg_dt: Vec<f64>,
    d2g_dt2: Vec<f64>,
    /// `[l][d][v]`
    dg_ds: Vec<f64>,
    d2g_ds2: Vec<f64>,
}

fn basis(cfg: &TlsaModelConfig, locations: &[f64], t: &[f64], s: &[f64], derivatives: bool) -> Basis {
    let (nl, nv, nd) = (cfg.sources, cfg.outputs, cfg.spatial_dims);
    let kappa = cfg.sign();
    let mut g = vec![0.0; nl * nv];
    let mut dg_dt = Vec::new();
    let mut d2g_dt2 = Vec::new();
    let mut dg_ds = Vec::new();
    let mut d2g_ds2 = Vec::new();
    if derivatives {
        dg_dt = vec![0.0; nl * nv];
        d2g_dt2 = vec![0.0; nl * nv];
        dg_ds = vec![0.0; nl * nd * nv];
        d2g_ds2 = vec![0.0; nl * nd * nv];
    }
    for l in 0..nl {
        let inv_width = (-t[l]).exp();
        let centers: Vec<f64> = s[l * nd..(l + 1) * nd].iter().map(|&x| sigmoid(x)).collect();
        for v in 0..nv {
            let r = &locations[v * nd..(v + 1) * nd];
            let dist: f64 = r.iter().zip(&centers).map(|(a, b)| (a - b) * (a - b)).sum();
            let a = inv_width * dist;
            let gv = (kappa * a).exp();
            g[l * nv + v] = gv;
            if !derivatives {
                continue;
            }
            dg_dt[l * nv + v] = -kappa * a * gv;
            d2g_dt2[l * nv + v] = gv * (a * a + kappa * a);
            for d in 0..nd {
                let c = centers[d];
                let b = -2.0 * kappa * inv_width * (r[d] - c);
                let ds = c * (1.0 - c);
                let dds = ds * (1.0 - 2.0 * c);
                let idx = (l * nd + d) * nv + v;
                dg_ds[idx] = gv * b * ds;
                d2g_ds2[idx] = gv * (b * b + 2.0 * kappa * inv_width) * ds * ds + gv * b * dds;
            }
        }
    }
    Basis { g, dg_dt, d2g_dt2, dg_ds, d2g_ds2 }
}

#[derive(Debug, Clone)]
pub struct TlsaModel {
    config: TlsaModelConfig,
    beta: f64,
    locations: Vec<f64>,
    n: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    col_sq_x: Vec<f64>,
}

struct Evaluation {
    log_joint: f64,
    trace: f64,
    grad: Option<Vec<f64>>,
}

impl TlsaModel {
    pub fn new(config: TlsaModelConfig, shard: &Dataset, prior_temper: f64) -> Result<Self> {
        config.validate()?;
        if shard.features().cols() != config.covariates || shard.outputs().cols() != config.outputs {
            return Err(Error::DataValidation(format!(
                "TLSA shard is {}x({} covariates, {} outputs), model expects C={} V={}",
                shard.len(),
                shard.features().cols(),
                shard.outputs().cols(),
                config.covariates,
                config.outputs
            )));
        }
        let c = config.covariates;
        let x = shard.features().as_slice().to_vec();
        let mut col_sq_x = vec![0.0; c];
        for row in x.chunks(c) {
            for (acc, xi) in col_sq_x.iter_mut().zip(row) {
                *acc += xi * xi;
            }
        }
        Ok(Self {
            locations: config.locations(),
            config,
            beta: prior_temper,
            n: shard.len(),
            x,
            u: shard.outputs().as_slice().to_vec(),
            col_sq_x,
        })
    }

    fn log_prior(&self, w: &[f64], t: &[f64], s: &[f64]) -> (f64, f64) {
        let cfg = &self.config;
        let wv = cfg.weight_var;
        let mut value = -0.5 * w.len() as f64 * (LN_2PI + wv.ln()) - w.iter().map(|x| x * x).sum::<f64>() / (2.0 * wv);
        let mut trace = -(w.len() as f64) / wv;
        for &tl in t {
            value += cfg.rho.ln() - cfg.rho * tl.exp() + tl;
            trace -= cfg.rho * tl.exp();
        }
        for &sl in s {
            value += log_sigmoid(sl) + log_sigmoid(-sl);
            let p = sigmoid(sl);
            trace -= 2.0 * p * (1.0 - p);
        }
        (value, trace)
    }

    fn evaluate(&self, theta: &[f64], want_trace: bool, want_grad: bool) -> Evaluation {
        let cfg = &self.config;
        let (nl, nc, nv, nd) = (cfg.sources, cfg.covariates, cfg.outputs, cfg.spatial_dims);
        let (w, t, s) = cfg.unpack(theta);
        let need_derivs = want_trace || want_grad;
        let b = basis(cfg, &self.locations, t, s, need_derivs);
        let tau = cfg.tau;

        let mut sse = 0.0;
        let mut z = vec![0.0; nl];
        let mut resid = vec![0.0; nv];
        let mut zte = if need_derivs { vec![0.0; nl * nv] } else { Vec::new() };
        let mut zsq = vec![0.0; nl];
        let mut xte = if want_grad { vec![0.0; nc * nv] } else { Vec::new() };
        for n in 0..self.n {
            let xr = &self.x[n * nc..(n + 1) * nc];
            let ur = &self.u[n * nv..(n + 1) * nv];
            for (l, zl) in z.iter_mut().enumerate() {
                *zl = (0..nc).map(|c| xr[c] * w[c * nl + l]).sum();
            }
            resid.copy_from_slice(ur);
            for (l, &zl) in z.iter().enumerate() {
                let gl = &b.g[l * nv..(l + 1) * nv];
                for (r, g) in resid.iter_mut().zip(gl) {
                    *r -= zl * g;
                }
            }
            sse += resid.iter().map(|r| r * r).sum::<f64>();
            if need_derivs {
                for (l, &zl) in z.iter().enumerate() {
                    zsq[l] += zl * zl;
                    for (acc, r) in zte[l * nv..(l + 1) * nv].iter_mut().zip(&resid) {
                        *acc += zl * r;
                    }
                }
            }
            if want_grad {
                for (c, &xc) in xr.iter().enumerate() {
                    for (acc, r) in xte[c * nv..(c + 1) * nv].iter_mut().zip(&resid) {
                        *acc += xc * r;
                    }
                }
            }
        }
        let loglik = 0.5 * (self.n * nv) as f64 * (tau.ln() - LN_2PI) - 0.5 * tau * sse;
        let (lp, lp_trace) = self.log_prior(w, t, s);
        let log_joint = self.beta * lp + loglik;

        let mut trace = 0.0;
        if want_trace {
            let g_sq_total: f64 = b.g.iter().map(|g| g * g).sum();
            trace -= tau * self.col_sq_x.iter().sum::<f64>() * g_sq_total;
            for l in 0..nl {
                let row = l * nv..(l + 1) * nv;
                let h = &zte[row.clone()];
                let d1: f64 = b.dg_dt[row.clone()].iter().map(|x| x * x).sum();
                let d2: f64 = b.d2g_dt2[row].iter().zip(h).map(|(x, hv)| x * hv).sum();
                trace += -tau * zsq[l] * d1 + tau * d2;
                for d in 0..nd {
                    let idx = (l * nd + d) * nv..(l * nd + d + 1) * nv;
                    let d1: f64 = b.dg_ds[idx.clone()].iter().map(|x| x * x).sum();
                    let d2: f64 = b.d2g_ds2[idx].iter().zip(h).map(|(x, hv)| x * hv).sum();
                    trace += -tau * zsq[l] * d1 + tau * d2;
                }
            }
            trace += self.beta * lp_trace;
        }

        let grad = want_grad.then(|| {
            let mut grad = vec![0.0; theta.len()];
            let wv = cfg.weight_var;
            for c in 0..nc {
                for l in 0..nl {
                    let lik: f64 = (0..nv).map(|v| xte[c * nv + v] * b.g[l * nv + v]).sum();
                    grad[c * nl + l] = tau * lik - self.beta * w[c * nl + l] / wv;
                }
            }
            let t_off = nc * nl;
            let s_off = t_off + nl;
            for l in 0..nl {
                let h = &zte[l * nv..(l + 1) * nv];
                let lik: f64 = b.dg_dt[l * nv..(l + 1) * nv].iter().zip(h).map(|(a, hv)| a * hv).sum();
                grad[t_off + l] = tau * lik + self.beta * (1.0 - cfg.rho * t[l].exp());
                for d in 0..nd {
                    let idx = (l * nd + d) * nv..(l * nd + d + 1) * nv;
                    let lik: f64 = b.dg_ds[idx].iter().zip(h).map(|(a, hv)| a * hv).sum();
                    let sv = s[l * nd + d];
                    grad[s_off + l * nd + d] = tau * lik + self.beta * (1.0 - 2.0 * sigmoid(sv));
                }
            }
            grad
        });

        Evaluation { log_joint, trace, grad }
    }
}

impl Model for TlsaModel {
    fn dim(&self) -> usize {
        self.config.param_dim()
    }

    fn prior_temper(&self) -> f64 {
        self.beta
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, false, false).log_joint
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.evaluate(theta, false, true).grad.unwrap_or_default()
    }

    fn hessian_trace(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, true, false).trace
    }

    fn log_joint_and_trace(&self, theta: &[f64]) -> (f64, f64) {
        let e = self.evaluate(theta, true, false);
        (e.log_joint, e.trace)
    }
}

/// Predicted output means `Σ_l z_l g_lv` for one covariate row.
pub(super) fn predict_mean(cfg: &TlsaModelConfig, locations: &[f64], theta: &[f64], features: &[f64]) -> Vec<f64> {
    let (w, t, s) = cfg.unpack(theta);
    let b = basis(cfg, locations, t, s, false);
    let (nl, nv) = (cfg.sources, cfg.outputs);
    let mut mean = vec![0.0; nv];
    for l in 0..nl {
        let zl: f64 = features.iter().enumerate().map(|(c, x)| x * w[c * nl + l]).sum();
        for (m, g) in mean.iter_mut().zip(&b.g[l * nv..(l + 1) * nv]) {
            *m += zl * g;
        }
    }
    mean
}

pub(super) fn log_predictive(cfg: &TlsaModelConfig, theta: &[f64], features: &[f64], outputs: &[f64]) -> f64 {
    let locations = cfg.locations();
    let mean = predict_mean(cfg, &locations, theta, features);
    let sse: f64 = outputs.iter().zip(&mean).map(|(u, m)| (u - m) * (u - m)).sum();
    0.5 * outputs.len() as f64 * (cfg.tau.ln() - LN_2PI) - 0.5 * cfg.tau * sse
}
