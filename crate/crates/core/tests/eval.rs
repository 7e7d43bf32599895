use epvi::combine::{draw_posterior_samples, CombineMethod, SamplerConfig};
use epvi::eval::{
    combined_se, heldout_metrics, run_experiment, sweep, CellStatus, Experiment, SweepAxis, BASELINE_TAG,
    PLOT_FILE, RESULTS_FILE,
};
use epvi::math::mean_and_std_error;
use epvi::models::{LogisticModelConfig, ModelConfig};
use epvi::enumerate_product;
use epvi::pipeline::{collect, prepare_run, run_parallel_fits, PipelineConfig};
use epvi::nvi::FitConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logistic() -> ModelConfig {
    ModelConfig::Logistic(LogisticModelConfig::new(5))
}

fn small_experiment(shards: usize, k: usize) -> Experiment {
    let mut e = Experiment::new(logistic(), 1500, shards, k);
    e.sampler = SamplerConfig { samples: 2000, burn_in: 500, seed: 3, parallel_pairs: false };
    e.data_seed = 7;
    e.seed = 1;
    e
}

#[test]
fn doubling_draws_moves_nll_within_monte_carlo_error() {
    let e = small_experiment(3, 3);
    let (train, test) = e.split().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig::new(e.model.clone(), 3, e.fit.clone());
    let manifest = prepare_run(dir.path(), &train, &config).unwrap();
    run_parallel_fits(dir.path(), &manifest, &config).unwrap();
    let (mixtures, _) = collect(dir.path(), &manifest).unwrap();
    let product = enumerate_product(&mixtures, 1000).unwrap();

    let nll = |count: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = draw_posterior_samples(epvi::combine::PosteriorSource::Exact(&product), count, &mut rng).unwrap();
        heldout_metrics(&draws, &test, &e.model).unwrap().nll
    };
    let s = 1000;
    // Monte Carlo spread of the S-draw estimator over independent replicates
    let replicates: Vec<f64> = (100..120).map(|seed| nll(s, seed)).collect();
    let (_, se_of_mean) = mean_and_std_error(&replicates);
    let mc_se = se_of_mean * (replicates.len() as f64).sqrt();
    let gap = (nll(s, 1) - nll(2 * s, 2)).abs();
    assert!(gap < 3.0 * mc_se, "gap {gap} vs MC se {mc_se}");
}

#[test]
fn exact_and_sampled_products_give_the_same_nll() {
    let mut e = small_experiment(3, 3);
    e.methods = vec![CombineMethod::Exact, CombineMethod::Sample, CombineMethod::Pairwise];
    let dir = tempfile::tempdir().unwrap();
    let cells = run_experiment(dir.path(), &e).unwrap();
    assert_eq!(cells.len(), 3);
    let results: Vec<_> = cells.iter().map(|c| c.result.as_ref().expect("all methods run")).collect();
    for r in &results[1..] {
        let se = combined_se(&results[0].metrics, &r.metrics);
        let gap = (results[0].metrics.nll - r.metrics.nll).abs();
        assert!(gap < 2.0 * se, "{}: gap {gap} vs 2·se {}", r.method, 2.0 * se);
    }
    for method in ["exact", "sample", "pairwise"] {
        assert!(dir.path().join(format!("ledger-{method}.json")).exists());
    }
}

#[test]
fn metrics_are_deterministic_per_seed() {
    let e = small_experiment(2, 2);
    let a = run_experiment(tempfile::tempdir().unwrap().path(), &e).unwrap();
    let b = run_experiment(tempfile::tempdir().unwrap().path(), &e).unwrap();
    let (ra, rb) = (a[0].result.as_ref().unwrap(), b[0].result.as_ref().unwrap());
    assert_eq!(ra.metrics.nll.to_bits(), rb.metrics.nll.to_bits());
    assert_eq!(ra.metrics.accuracy, rb.metrics.accuracy);
    assert_eq!(ra.config, rb.config);
}

#[test]
fn sweep_writes_tables_and_skips_oversized_enumerations() {
    let mut e = small_experiment(2, 3);
    e.methods = vec![CombineMethod::Exact, CombineMethod::Sample];
    e.cap = 10;
    let dir = tempfile::tempdir().unwrap();
    let rows = sweep(dir.path(), SweepAxis::M, &[1, 3], &e).unwrap();
    assert_eq!(rows.len(), 4);
    // 3^1 ≤ 10 runs, 3^3 > 10 is skipped
    assert_eq!(rows[0].cell.status, CellStatus::Ok);
    assert_eq!(rows[2].cell.status, CellStatus::Skipped);
    assert!(rows[2].cell.message.as_ref().unwrap().contains("exponential blowup"));
    assert_eq!(rows[3].cell.status, CellStatus::Ok);
    assert!(dir.path().join("M-1").is_dir() && dir.path().join("M-3").is_dir());

    let results = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines.len(), 5);
    let header: Vec<&str> = lines[0].split('\t').collect();
    for line in &lines[1..] {
        assert_eq!(line.split('\t').count(), header.len());
    }
    assert!(lines[3].contains("\tskipped\t"));
    let plot = std::fs::read_to_string(dir.path().join(PLOT_FILE)).unwrap();
    assert_eq!(plot.lines().count(), 1 + 3);

    // append-only: a second sweep adds rows under the same header
    sweep(dir.path(), SweepAxis::K, &[2], &e).unwrap();
    let again = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert!(again.starts_with(&results));
    assert_eq!(again.lines().count(), 5 + 2);
    assert_eq!(again.lines().filter(|l| l.starts_with("axis\t")).count(), 1);
}

#[test]
fn sweep_records_failures_and_rejects_bad_axes() {
    let dir = tempfile::tempdir().unwrap();
    let e = small_experiment(2, 2);
    assert!(sweep(dir.path(), SweepAxis::L, &[2], &e).is_err());
    assert!(sweep(dir.path(), SweepAxis::M, &[], &e).is_err());
    // more shards than training rows cannot be partitioned
    let rows = sweep(dir.path(), SweepAxis::M, &[2, 5000], &e).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].cell.status, CellStatus::Ok);
    assert_eq!(rows[1].cell.status, CellStatus::Failed);
}

#[test]
fn parallel_phase_beats_the_full_fit_across_k() {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for k in [2, 4, 8] {
        let mut e = Experiment::new(ModelConfig::Logistic(LogisticModelConfig::new(10)), 20_000, 10, k);
        e.fit = FitConfig::with_components(k);
        e.baseline = true;
        e.draws = 200;
        let cells = run_experiment(&dir.path().join(format!("K-{k}")), &e).unwrap();
        let epvi = cells[0].result.as_ref().unwrap();
        let full = cells.iter().find(|c| c.method == BASELINE_TAG).unwrap().result.as_ref().unwrap();
        let ratio = full.times.fit_secs / epvi.times.total_secs;
        if !(ratio > 2.0) {
            failures.push(format!("K={k}: full {:?} vs EPVI {:?}", full.times, epvi.times));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
