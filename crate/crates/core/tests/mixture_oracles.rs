mod common;

use common::{covering_box, enumeration_grid_gap, grid, naive_mixture_pdf, normal_pdf, random_mixtures, rng};
use epvi::{enumerate_product, product_component, ComponentIndex, MixtureApprox};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn log_density_matches_naive_sum() {
    let mut r = rng(11);
    for _ in 0..50 {
        let q = &random_mixtures(1, 3, 2, &mut r)[0];
        let theta: Vec<f64> = (0..2).map(|_| r.random_range(-3.0..3.0)).collect();
        let naive = naive_mixture_pdf(q, &theta);
        let ours = q.log_density(&theta).unwrap().exp();
        assert!((ours - naive).abs() / naive < 1e-12, "{ours} vs {naive}");
    }
}

#[test]
fn mixture_integrates_to_one() {
    let mut r = rng(12);
    for d in 1..=2 {
        let q = random_mixtures(1, 3, d, &mut r);
        let (center, half) = covering_box(&q);
        let g = grid(&center, half, 400);
        let total: f64 = g.points.iter().map(|p| naive_mixture_pdf(&q[0], p)).sum::<f64>() * g.cell;
        assert!((total - 1.0).abs() < 1e-9, "d={d}: {total}");
    }
}

#[test]
fn product_component_matches_quadrature() {
    let mut r = rng(13);
    for _ in 0..5 {
        let mixtures = random_mixtures(3, 1, 2, &mut r);
        let pc = product_component(&mixtures, &ComponentIndex(vec![0, 0, 0])).unwrap();
        let (center, half) = covering_box(&mixtures);
        let g = grid(&center, half, 600);
        let mut z = 0.0;
        let mut m1 = [0.0; 2];
        let mut m2 = 0.0;
        for p in &g.points {
            let f: f64 = mixtures.iter().map(|q| normal_pdf(p, q.component(0).mean(), q.component(0).variance())).product();
            z += f;
            m1[0] += f * p[0];
            m1[1] += f * p[1];
            m2 += f * (p[0] * p[0] + p[1] * p[1]);
        }
        let mean = [m1[0] / z, m1[1] / z];
        // per-coordinate variance of an isotropic Gaussian
        let var = (m2 / z - mean[0] * mean[0] - mean[1] * mean[1]) / 2.0;
        let weight = z * g.cell;
        for i in 0..2 {
            assert!((pc.mean[i] - mean[i]).abs() / mean[i].abs() < 1e-6, "mean {:?} vs {mean:?}", pc.mean);
        }
        assert!((pc.variance - var).abs() / var < 1e-6, "variance {} vs {var}", pc.variance);
        assert!((pc.log_weight.exp() - weight).abs() / weight < 1e-6, "weight {} vs {weight}", pc.log_weight.exp());
    }
}

#[test]
fn enumerated_density_matches_grid_product() {
    let mut r = rng(14);
    for _ in 0..3 {
        let mixtures = random_mixtures(3, 3, 2, &mut r);
        let gap = enumeration_grid_gap(&mixtures, 400);
        assert!(gap < 1e-8, "max abs gap {gap}");
    }
}

#[test]
fn product_density_identity_ratio_is_constant() {
    let mut r = rng(15);
    for d in 1..=3 {
        let mixtures = random_mixtures(3, 2, d, &mut r);
        let product = enumerate_product(&mixtures, 1000).unwrap();
        let log_ratios: Vec<f64> = (0..100)
            .map(|_| {
                let theta: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
                let log_prod: f64 = mixtures.iter().map(|q| q.log_density(&theta).unwrap()).sum();
                log_prod - product.log_density(&theta).unwrap()
            })
            .collect();
        let lo = log_ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // relative spread of the ratio itself
        assert!((hi - lo).exp_m1() < 1e-8, "d={d}: spread {}", (hi - lo).exp_m1());
    }
}

fn mixture_strategy(d: usize) -> impl Strategy<Value = MixtureApprox> {
    proptest::collection::vec((proptest::collection::vec(-5.0..5.0f64, d), 1e-3..1e3f64), 1..4)
        .prop_map(|parts| {
            let (means, vars) = parts.into_iter().unzip();
            MixtureApprox::from_parts(means, vars).unwrap()
        })
}

proptest! {
    #[test]
    fn product_variance_below_every_member(mixtures in proptest::collection::vec(mixture_strategy(2), 1..5)) {
        let product = enumerate_product(&mixtures, 1_000_000).unwrap();
        for c in product.components() {
            let min_member = c.index.0.iter().zip(&mixtures).map(|(&k, q)| q.component(k).variance()).fold(f64::INFINITY, f64::min);
            prop_assert!(c.variance <= min_member * (1.0 + 1e-12));
            prop_assert!(c.log_weight.is_finite());
        }
    }

    #[test]
    fn product_mean_is_a_convex_combination(mixtures in proptest::collection::vec(mixture_strategy(2), 1..5)) {
        let product = enumerate_product(&mixtures, 1_000_000).unwrap();
        for c in product.components() {
            // precision-weighted average of the member means, hence inside their hull
            let members: Vec<_> = c.index.0.iter().zip(&mixtures).map(|(&k, q)| q.component(k)).collect();
            let total: f64 = members.iter().map(|m| 1.0 / m.variance()).sum();
            for i in 0..2 {
                let lo = members.iter().map(|m| m.mean()[i]).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|m| m.mean()[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(c.mean[i] >= lo - 1e-9 && c.mean[i] <= hi + 1e-9);
                let weighted: f64 = members.iter().map(|m| m.mean()[i] / m.variance()).sum::<f64>() / total;
                prop_assert!((weighted - c.mean[i]).abs() < 1e-9 * (1.0 + weighted.abs()));
            }
        }
    }

    #[test]
    fn extreme_variances_keep_log_weights_finite(
        exps in proptest::collection::vec(-8i32..=8, 2..5),
        shift in -3.0..3.0f64,
    ) {
        let mixtures: Vec<MixtureApprox> = exps
            .iter()
            .map(|&e| MixtureApprox::from_parts(vec![vec![shift], vec![-shift]], vec![10f64.powi(e), 10f64.powi(-e)]).unwrap())
            .collect();
        let product = enumerate_product(&mixtures, 1000).unwrap();
        prop_assert!(product.components().iter().all(|c| c.log_weight.is_finite()));
        let w = product.normalized_weights();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
