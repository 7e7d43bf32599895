mod common;

use common::{normal_pdf, rel_err, rng};
use epvi::models::{
    generate_synthetic, Dataset, GaussianToy, GaussianToyConfig, LogisticModelConfig, Matrix, MixtureTarget, Model,
    ModelConfig,
};
use epvi::nvi::{entropy_lower_bound, fit, fit_from, surrogate_elbo, surrogate_elbo_grad, FitConfig, VariationalParams};
use epvi::MixtureApprox;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_params(k: usize, d: usize, spread: f64, r: &mut impl Rng) -> VariationalParams {
    let means = (0..k).map(|_| (0..d).map(|_| spread * r.sample::<f64, _>(StandardNormal)).collect()).collect();
    let logs = (0..k).map(|_| r.random_range(-2.0..0.5)).collect();
    VariationalParams::new(means, logs).unwrap()
}

fn unpack(p: &VariationalParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    ((0..p.components()).map(|k| p.mean(k).to_vec()).collect(), p.log_sigma2().to_vec())
}

/// Surrogate with the Hessian traces pinned at `traces`.
fn truncated(p: &VariationalParams, model: &dyn Model, traces: &[f64]) -> f64 {
    let k = p.components();
    let energy: f64 =
        (0..k).map(|c| model.log_joint(p.mean(c)) + 0.5 * p.variance(c) * traces[c]).sum::<f64>() / k as f64;
    energy + entropy_lower_bound(p)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn logistic_model(features: usize, rows: usize, seed: u64) -> Box<dyn Model> {
    let config = ModelConfig::Logistic(LogisticModelConfig::new(features));
    let data = generate_synthetic(&config, rows, seed).unwrap().data;
    config.build(&data, 1.0).unwrap()
}

fn test_models() -> Vec<Box<dyn Model>> {
    let bimodal = MixtureApprox::from_parts(vec![vec![-1.0, 0.5], vec![2.0, 1.0]], vec![0.5, 0.8]).unwrap();
    let gauss = ModelConfig::Gaussian(GaussianToyConfig { dim: 2, ..GaussianToyConfig::default() });
    let gdata = generate_synthetic(&gauss, 30, 2).unwrap().data;
    vec![logistic_model(3, 150, 1), gauss.build(&gdata, 0.5).unwrap(), Box::new(MixtureTarget::new(bimodal))]
}

#[test]
fn gradient_matches_finite_differences_at_twenty_points() {
    let mut r = rng(31);
    let h = 1e-5;
    for model in test_models() {
        let d = model.dim();
        for _ in 0..20 {
            let p = random_params(3, d, 1.0, &mut r);
            let g = surrogate_elbo_grad(&p, model.as_ref()).unwrap();
            let (means, logs) = unpack(&p);
            let traces: Vec<f64> = (0..3).map(|k| model.hessian_trace(p.mean(k))).collect();

            let mut fd_means = Vec::new();
            for k in 0..3 {
                for i in 0..d {
                    let shifted = |delta: f64| {
                        let mut m = means.clone();
                        m[k][i] += delta;
                        truncated(&VariationalParams::new(m, logs.clone()).unwrap(), model.as_ref(), &traces)
                    };
                    fd_means.push((shifted(h) - shifted(-h)) / (2.0 * h));
                }
            }
            let fd_logs: Vec<f64> = (0..3)
                .map(|k| {
                    let shifted = |delta: f64| {
                        let mut l = logs.clone();
                        l[k] += delta;
                        surrogate_elbo(&VariationalParams::new(means.clone(), l).unwrap(), model.as_ref()).unwrap()
                    };
                    (shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();

            let diff: Vec<f64> = g.means.iter().zip(&fd_means).map(|(a, b)| a - b).collect();
            assert!(max_abs(&diff) < 1e-6 * max_abs(&fd_means).max(1.0), "means {:?} vs {fd_means:?}", g.means);
            for (a, b) in g.log_sigma2.iter().zip(&fd_logs) {
                assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "log σ² {a} vs {b}");
            }
        }
    }
}

/// Surrogate written out directly from the densities.
fn reference_surrogate(p: &VariationalParams, model: &dyn Model) -> f64 {
    let k = p.components();
    let kf = k as f64;
    let mut energy = 0.0;
    let mut entropy = 0.0;
    for a in 0..k {
        energy += model.log_joint(p.mean(a)) + p.variance(a) / 2.0 * model.hessian_trace(p.mean(a));
        let inner: f64 =
            (0..k).map(|b| normal_pdf(p.mean(a), p.mean(b), p.variance(a) + p.variance(b))).sum::<f64>() / kf;
        entropy -= inner.ln();
    }
    (energy + entropy) / kf
}

#[test]
fn surrogate_matches_a_second_implementation() {
    let model = logistic_model(5, 300, 3);
    let mut r = rng(32);
    for k in [1, 2, 4] {
        for _ in 0..10 {
            let p = random_params(k, 6, 0.7, &mut r);
            let ours = surrogate_elbo(&p, model.as_ref()).unwrap();
            let reference = reference_surrogate(&p, model.as_ref());
            assert!(rel_err(ours, reference) < 1e-12, "K={k}: {ours} vs {reference}");
        }
    }
}

#[test]
fn two_components_find_both_modes() {
    let target = MixtureApprox::from_parts(vec![vec![-3.0], vec![3.0]], vec![0.5, 0.5]).unwrap();
    let model = MixtureTarget::new(target);
    let start = VariationalParams::new(vec![vec![-0.5], vec![0.7]], vec![0.0, 0.0]).unwrap();
    let (params, report) = fit_from(&model, &FitConfig::with_components(2), start).unwrap();
    assert!(report.converged);
    let mut means = [params.mean(0)[0], params.mean(1)[0]];
    means.sort_by(f64::total_cmp);
    assert!((means[0] + 3.0).abs() < 0.1 && (means[1] - 3.0).abs() < 0.1, "{means:?}");
}

#[test]
fn tempered_fit_matches_the_tempered_posterior() {
    let cfg = GaussianToyConfig { dim: 2, prior_mean: 0.5, prior_var: 3.0, likelihood_var: 1.5 };
    let mut r = rng(33);
    let x: Vec<f64> = (0..16).map(|_| 1.0 + r.sample::<f64, _>(StandardNormal)).collect();
    let data = Dataset::new(Matrix::zeros(8, 0), Matrix::new(8, 2, x).unwrap()).unwrap();
    for shards in [1usize, 4, 10] {
        let beta = 1.0 / shards as f64;
        let model = GaussianToy::new(cfg.clone(), &data, beta).unwrap();
        let (mean, var) = cfg.posterior(&data, beta);
        let (q, report) = fit(&model, &FitConfig::with_components(1)).unwrap();
        assert!(report.converged);
        let c = q.component(0);
        for i in 0..2 {
            assert!((c.mean()[i] - mean[i]).abs() < 1e-3, "M={shards}: {:?} vs {mean:?}", c.mean());
        }
        assert!(rel_err(c.variance(), var) < 1e-2, "M={shards}: {} vs {var}", c.variance());
    }
}

// The Hessian trace of the Gaussian model is constant, so the truncated
// gradient is the full one and the fitter's stopping point is a true optimum.
#[test]
fn converged_fit_is_near_stationary() {
    let config = ModelConfig::Gaussian(GaussianToyConfig { dim: 2, ..GaussianToyConfig::default() });
    let data = generate_synthetic(&config, 40, 4).unwrap().data;
    let model = config.build(&data, 0.25).unwrap();
    for k in [1, 3] {
        let fit_config = FitConfig { components: k, ..FitConfig::default() };
        let (q, report) = fit(model.as_ref(), &fit_config).unwrap();
        assert!(report.converged);
        let means = q.components().iter().map(|c| c.mean().to_vec()).collect();
        let logs = q.components().iter().map(|c| c.variance().ln()).collect();
        let p = VariationalParams::new(means, logs).unwrap();
        let norm = surrogate_elbo_grad(&p, model.as_ref()).unwrap().norm();
        // a unit step along a gradient this size changes the objective by about rel_tol
        let threshold = (fit_config.rel_tol * report.objective.abs().max(1.0)).sqrt();
        assert!(norm < threshold, "K={k}: {norm} vs {threshold}");
    }
}

#[test]
fn objective_trace_is_monotone_within_budget() {
    let model = logistic_model(5, 300, 5);
    for max_iters in [10, 5000] {
        let config = FitConfig { components: 4, max_iters, record_trace: true, ..FitConfig::default() };
        let (_, report) = fit(model.as_ref(), &config).unwrap();
        assert!(report.iterations <= max_iters);
        let trace = report.objective_trace.unwrap();
        // initial value plus one entry per accepted step
        assert!(trace.len() <= report.iterations + 1);
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*trace.last().unwrap(), report.objective);
    }
}

#[test]
fn same_seed_same_fit() {
    let model = logistic_model(3, 100, 6);
    let config = FitConfig { components: 3, init_seed: 9, ..FitConfig::default() };
    let (a, ra) = fit(model.as_ref(), &config).unwrap();
    let (b, rb) = fit(model.as_ref(), &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.iterations, rb.iterations);
    let (c, _) = fit(model.as_ref(), &FitConfig { init_seed: 10, ..config }).unwrap();
    assert_ne!(a, c);
}

