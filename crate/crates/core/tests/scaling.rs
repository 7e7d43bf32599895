//! Wall-clock scaling of the component chain. One test function so that no
//! two timings overlap.

use std::time::Instant;

use epvi::combine::{sample_components, SamplerConfig};
use epvi::eval::{bench_sampler, loglog_slope, random_mixtures};
use epvi::MixtureApprox;

const REPEATS: usize = 15;

fn chain_secs(mixtures: &[MixtureApprox], samples: usize) -> f64 {
    let config = SamplerConfig { samples, burn_in: 0, seed: 1, parallel_pairs: false };
    let started = Instant::now();
    sample_components(mixtures, &config).unwrap();
    started.elapsed().as_secs_f64()
}

/// Fastest time per case, repeats interleaved across cases.
fn interleaved(cases: &[(Vec<MixtureApprox>, usize)]) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; cases.len()];
    for _ in 0..REPEATS {
        for ((mixtures, samples), b) in cases.iter().zip(best.iter_mut()) {
            *b = b.min(chain_secs(mixtures, *samples));
        }
    }
    best
}

#[test]
fn chain_time_is_linear_in_m_r_and_d() {
    let mut failures = Vec::new();

    // doubling M and doubling R from the same base case
    let (m, k, d, r) = (64, 3, 10, 20_000);
    let base = random_mixtures(m, k, d, 1);
    let times = interleaved(&[(base.clone(), r), (random_mixtures(2 * m, k, d, 1), r), (base, 2 * r)]);
    let m_ratio = times[1] / times[0];
    let r_ratio = times[2] / times[0];
    eprintln!("doubling M: {m_ratio:.3}, doubling R: {r_ratio:.3}");
    if !(1.6..=2.6).contains(&m_ratio) {
        failures.push(format!("doubling M ratio {m_ratio:.3} outside [1.6, 2.6]"));
    }
    if !(1.8..=2.2).contains(&r_ratio) {
        failures.push(format!("doubling R ratio {r_ratio:.3} outside [1.8, 2.2]"));
    }

    // log-log fits on each axis
    let points = bench_sampler(&[32, 64, 128, 256], &[10_000], k, d, REPEATS, 2).unwrap();
    let xs: Vec<f64> = points.iter().map(|p| p.factors as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.secs).collect();
    let (slope_m, r2_m) = loglog_slope(&xs, &ys);

    let points = bench_sampler(&[64], &[5_000, 10_000, 20_000, 40_000], k, d, REPEATS, 3).unwrap();
    let xs: Vec<f64> = points.iter().map(|p| p.samples as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.secs).collect();
    let (slope_r, r2_r) = loglog_slope(&xs, &ys);

    // each factor also has a fixed cost worth a few dozen coordinates, so the
    // d axis starts where the O(dM) term dominates
    let dims = [32, 64, 128, 256];
    let cases: Vec<_> = dims.iter().map(|&dd| (random_mixtures(m, k, dd, 4), 10_000)).collect();
    let ys = interleaved(&cases);
    let xs: Vec<f64> = dims.iter().map(|&dd| dd as f64).collect();
    let (slope_d, r2_d) = loglog_slope(&xs, &ys);

    for (axis, slope, r2) in [("M", slope_m, r2_m), ("R", slope_r, r2_r), ("d", slope_d, r2_d)] {
        eprintln!("{axis}: slope {slope:.3}, R² {r2:.4}");
        if !(r2 > 0.95) {
            failures.push(format!("{axis}: log-log R² {r2:.4} ≤ 0.95"));
        }
        if (slope - 1.0).abs() > 0.3 {
            failures.push(format!("{axis}: slope {slope:.3} outside 1 ± 0.3"));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
