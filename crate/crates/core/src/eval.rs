//! Held-out evaluation and experiment sweeps.
//!
//! An [`Experiment`] generates a synthetic dataset, holds out a test split,
//! runs the shard fits once and then combines them with each requested
//! method. Every method is scored by the held-out predictive log-likelihood
//! `log (1/S) Σ_s p(y* | x*, θ_s)` over `S` posterior draws. A full-data NVI
//! fit can be added as a baseline.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combine::{draw_posterior_samples, CombineMethod, PosteriorSource, SamplerConfig};
use crate::error::{Error, Result};
use crate::math::{derive_seed, log_sum_exp, mean_and_std_error};
use crate::mixture::{GaussianComponent, MixtureApprox, DEFAULT_ENUMERATION_CAP};
use crate::models::{generate_synthetic, Dataset, ModelConfig};
use crate::nvi::{fit, FitConfig, FitReport};
use crate::pipeline::{collect_and_combine, prepare_run, run_parallel_fits, PipelineConfig, RunLedger};

pub const DEFAULT_PREDICTIVE_DRAWS: usize = 1000;
pub const BASELINE_TAG: &str = "NVI_full";

pub fn method_tag(method: CombineMethod) -> &'static str {
    match method {
        CombineMethod::Exact => "EPVI_exact",
        CombineMethod::Sample => "EPVI_sample",
        CombineMethod::Pairwise => "EPVI_subset",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMetrics {
    /// Mean negative predictive log-likelihood per test row.
    pub nll: f64,
    pub nll_se: f64,
    /// Logistic models only.
    pub accuracy: Option<f64>,
    #[serde(skip)]
    pub per_point_nll: Vec<f64>,
}

/// Score posterior draws on a test split.
pub fn heldout_metrics(draws: &[Vec<f64>], test: &Dataset, model: &ModelConfig) -> Result<HeldoutMetrics> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("held-out evaluation needs at least one draw".into()));
    }
    if test.is_empty() {
        return Err(Error::DataValidation("empty test split".into()));
    }
    let log_s = (draws.len() as f64).ln();
    let mut per_point = Vec::with_capacity(test.len());
    let mut logs = vec![0.0; draws.len()];
    let mut correct = 0usize;
    let mut classified = false;
    for i in 0..test.len() {
        let x = test.features().row(i);
        let y = test.outputs().row(i);
        for (l, theta) in logs.iter_mut().zip(draws) {
            *l = model.log_predictive(theta, x, y);
        }
        per_point.push(log_s - log_sum_exp(&logs));
        let prob: Option<f64> = draws.iter().map(|theta| model.positive_probability(theta, x)).sum();
        if let Some(total) = prob {
            classified = true;
            let predicted = if total / draws.len() as f64 >= 0.5 { 1.0 } else { 0.0 };
            if predicted == y[0] {
                correct += 1;
            }
        }
    }
    let (nll, nll_se) = mean_and_std_error(&per_point);
    Ok(HeldoutMetrics {
        nll,
        nll_se,
        accuracy: classified.then(|| correct as f64 / test.len() as f64),
        per_point_nll: per_point,
    })
}

/// `sqrt(se_a² + se_b²)`.
pub fn combined_se(a: &HeldoutMetrics, b: &HeldoutMetrics) -> f64 {
    a.nll_se.hypot(b.nll_se)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    /// Slowest shard fit, or the single fit for the baseline.
    pub fit_secs: f64,
    pub transfer_secs: f64,
    pub combine_secs: f64,
    pub total_secs: f64,
}

impl PhaseTimes {
    pub fn from_ledger(ledger: &RunLedger) -> Self {
        Self {
            fit_secs: ledger.max_fit_secs,
            transfer_secs: ledger.transfer.as_ref().map_or(0.0, |t| t.secs),
            combine_secs: ledger.combine.as_ref().map_or(0.0, |c| c.secs),
            total_secs: ledger.parallel_secs(),
        }
    }
}

/// Enough of the configuration to rerun a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: String,
    #[serde(rename = "M")]
    pub shards: usize,
    #[serde(rename = "K")]
    pub components: usize,
    #[serde(rename = "R")]
    pub samples: usize,
    pub burn_in: usize,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub sources: Option<usize>,
    pub rows: usize,
    pub holdout: f64,
    pub data_seed: u64,
    pub seed: u64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: String,
    #[serde(flatten)]
    pub metrics: HeldoutMetrics,
    pub times: PhaseTimes,
    pub config: ConfigEcho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Skipped,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Skipped => "skipped",
            CellStatus::Failed => "failed",
        }
    }
}

/// Outcome of one method within one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub status: CellStatus,
    pub result: Option<EvalResult>,
    pub message: Option<String>,
}

impl Cell {
    fn ok(result: EvalResult) -> Self {
        Self { method: result.method.clone(), status: CellStatus::Ok, result: Some(result), message: None }
    }

    fn not_run(method: &str, status: CellStatus, message: String) -> Self {
        Self { method: method.into(), status, result: None, message: Some(message) }
    }
}

/// One synthetic-data experiment: generate, split, fit shards, combine with
/// each method, score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    /// Total rows generated before the holdout split.
    pub rows: usize,
    pub holdout: f64,
    pub data_seed: u64,
    #[serde(rename = "M")]
    pub shards: usize,
    pub fit: FitConfig,
    pub sampler: SamplerConfig,
    pub cap: usize,
    pub draws: usize,
    /// Seeds the partition and the predictive draws.
    pub seed: u64,
    pub methods: Vec<CombineMethod>,
    /// Also fit NVI on the full training split.
    pub baseline: bool,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Experiment {
    pub fn new(model: ModelConfig, rows: usize, shards: usize, components: usize) -> Self {
        Self {
            model,
            rows,
            holdout: 0.1,
            data_seed: 0,
            shards,
            fit: FitConfig::with_components(components),
            sampler: SamplerConfig::default(),
            cap: DEFAULT_ENUMERATION_CAP,
            draws: DEFAULT_PREDICTIVE_DRAWS,
            seed: 0,
            methods: vec![CombineMethod::Sample],
            baseline: false,
            workers: None,
        }
    }

    fn echo(&self, n_rows: usize) -> ConfigEcho {
        ConfigEcho {
            model: self.model.name().into(),
            shards: self.shards,
            components: self.fit.components,
            samples: self.sampler.samples,
            burn_in: self.sampler.burn_in,
            sources: match &self.model {
                ModelConfig::Tlsa(c) => Some(c.sources),
                _ => None,
            },
            rows: n_rows,
            holdout: self.holdout,
            data_seed: self.data_seed,
            seed: self.seed,
            draws: self.draws,
        }
    }

    pub fn split(&self) -> Result<(Dataset, Dataset)> {
        let data = generate_synthetic(&self.model, self.rows, self.data_seed)?.data;
        data.split_holdout(self.holdout, derive_seed(self.data_seed, 1))
    }

    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            model: self.model.clone(),
            shards: self.shards,
            fit: self.fit.clone(),
            partition_seed: self.seed,
            per_shard_init: false,
            workers: self.workers,
        }
    }
}

/// Draw from a single NVI mixture.
pub fn mixture_draws(mixture: &MixtureApprox, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let weighted: Vec<(f64, GaussianComponent)> = mixture.components().iter().map(|c| (1.0, c.clone())).collect();
    draw_posterior_samples(PosteriorSource::Weighted(&weighted), count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Fit NVI to the whole training split with the untempered prior.
pub fn full_data_fit(model: &ModelConfig, train: &Dataset, fit_config: &FitConfig) -> Result<(MixtureApprox, FitReport)> {
    let built = model.build(train, 1.0)?;
    fit(built.as_ref(), fit_config)
}

/// Run every method of `experiment` on one dataset. `dir` receives the run
/// files. Methods that cannot run are reported as skipped or failed cells.
pub fn run_experiment(dir: &Path, experiment: &Experiment) -> Result<Vec<Cell>> {
    let (train, test) = experiment.split()?;
    let echo = experiment.echo(experiment.rows);
    let draw_seed = derive_seed(experiment.seed, 2);
    let config = experiment.pipeline_config();
    let manifest = prepare_run(dir, &train, &config)?;
    let base_ledger = run_parallel_fits(dir, &manifest, &config)?;

    let mut cells = Vec::new();
    for &method in &experiment.methods {
        let tag = method_tag(method);
        let mut ledger = base_ledger.clone();
        let combined = collect_and_combine(dir, &manifest, &mut ledger, method, &experiment.sampler, experiment.cap);
        let combined = match combined {
            Ok(c) => c,
            Err(e @ Error::ExponentialBlowup { .. }) => {
                cells.push(Cell::not_run(tag, CellStatus::Skipped, e.to_string()));
                continue;
            }
            Err(e) => {
                cells.push(Cell::not_run(tag, CellStatus::Failed, e.to_string()));
                continue;
            }
        };
        crate::pipeline::write_json(&dir.join(format!("ledger-{}.json", method.as_str())), &ledger)?;
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let draws = draw_posterior_samples(combined.source(), experiment.draws, &mut rng)?;
        let metrics = heldout_metrics(&draws, &test, &experiment.model)?;
        cells.push(Cell::ok(EvalResult {
            method: tag.into(),
            metrics,
            times: PhaseTimes::from_ledger(&ledger),
            config: echo.clone(),
        }));
    }

    if experiment.baseline {
        match full_data_fit(&experiment.model, &train, &experiment.fit) {
            Ok((mixture, report)) => {
                let draws = mixture_draws(&mixture, experiment.draws, draw_seed)?;
                let metrics = heldout_metrics(&draws, &test, &experiment.model)?;
                let fit_secs = report.wall_time_secs;
                let times = PhaseTimes { fit_secs, total_secs: fit_secs, ..PhaseTimes::default() };
                cells.push(Cell::ok(EvalResult {
                    method: BASELINE_TAG.into(),
                    metrics,
                    times,
                    config: ConfigEcho { shards: 1, ..echo.clone() },
                }));
            }
            Err(e) => cells.push(Cell::not_run(BASELINE_TAG, CellStatus::Failed, e.to_string())),
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    M,
    K,
    L,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "M" | "m" => Ok(SweepAxis::M),
            "K" | "k" => Ok(SweepAxis::K),
            "L" | "l" => Ok(SweepAxis::L),
            other => Err(format!("unknown sweep axis '{other}' (expected M, K or L)")),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::M => "M",
            SweepAxis::K => "K",
            SweepAxis::L => "L",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub cell: Cell,
}

pub const RESULTS_FILE: &str = "results.tsv";
pub const PLOT_FILE: &str = "plot.tsv";

const RESULTS_HEADER: &str =
    "axis\tvalue\tmethod\tstatus\tnll\tnll_se\taccuracy\tfit_secs\ttransfer_secs\tcombine_secs\ttotal_secs\tM\tK\tR\tburn_in\tL\tseed\tdata_seed\tmessage";

fn apply_axis(base: &Experiment, axis: SweepAxis, value: usize) -> Result<Experiment> {
    let mut e = base.clone();
    match axis {
        SweepAxis::M => e.shards = value,
        SweepAxis::K => e.fit.components = value,
        SweepAxis::L => match &mut e.model {
            ModelConfig::Tlsa(c) => c.sources = value,
            _ => return Err(Error::Configuration("the L axis applies to the tlsa model only".into())),
        },
    }
    Ok(e)
}

/// Run `base` once per value of `axis`. Rows are appended to
/// `dir/results.tsv` and `dir/plot.tsv`; a failing cell is recorded and the
/// sweep moves on.
pub fn sweep(dir: &Path, axis: SweepAxis, values: &[usize], base: &Experiment) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Configuration("sweep needs at least one value".into()));
    }
    apply_axis(base, axis, values[0])?;
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::new();
    for &value in values {
        let experiment = apply_axis(base, axis, value)?;
        let cell_dir = dir.join(format!("{axis}-{value}"));
        let cells = std::fs::create_dir_all(&cell_dir)
            .map_err(Error::from)
            .and_then(|_| run_experiment(&cell_dir, &experiment));
        let cells = match cells {
            Ok(cells) => cells,
            Err(e) => {
                log::warn!("sweep cell {axis}={value} failed: {e}");
                vec![Cell::not_run("*", CellStatus::Failed, e.to_string())]
            }
        };
        for cell in cells {
            let row = SweepRow { axis, value, cell };
            append_row(dir, &row, &experiment)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn append_row(dir: &Path, row: &SweepRow, experiment: &Experiment) -> Result<()> {
    let results = dir.join(RESULTS_FILE);
    let fresh = !results.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(&results)?;
    if fresh {
        writeln!(file, "{RESULTS_HEADER}")?;
    }
    let r = row.cell.result.as_ref();
    let echo = experiment.echo(experiment.rows);
    let mut line = String::new();
    let _ = write!(
        line,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        row.axis,
        row.value,
        row.cell.method,
        row.cell.status.as_str(),
        fmt_opt(r.map(|r| r.metrics.nll)),
        fmt_opt(r.map(|r| r.metrics.nll_se)),
        fmt_opt(r.and_then(|r| r.metrics.accuracy)),
        fmt_opt(r.map(|r| r.times.fit_secs)),
        fmt_opt(r.map(|r| r.times.transfer_secs)),
        fmt_opt(r.map(|r| r.times.combine_secs)),
        fmt_opt(r.map(|r| r.times.total_secs)),
    );
    let _ = write!(
        line,
        "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        echo.shards,
        echo.components,
        echo.samples,
        echo.burn_in,
        echo.sources.map_or_else(|| "NA".into(), |l| l.to_string()),
        echo.seed,
        echo.data_seed,
        row.cell.message.as_deref().unwrap_or("").replace(['\t', '\n'], " "),
    );
    writeln!(file, "{line}")?;

    let plot = dir.join(PLOT_FILE);
    let fresh = !plot.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(&plot)?;
    if fresh {
        writeln!(file, "# method\t{}\ttotal_secs\tnll\tnll_se", row.axis)?;
    }
    if let Some(r) = r {
        writeln!(file, "{}\t{}\t{}\t{}\t{}", r.method, row.value, r.times.total_secs, r.metrics.nll, r.metrics.nll_se)?;
    }
    Ok(())
}

/// `M` random mixtures with `K` components in `d` dimensions: means
/// `~ N(0, 1)`, variances uniform on `[0.3, 1.3]`.
pub fn random_mixtures(factors: usize, components: usize, dim: usize, seed: u64) -> Vec<MixtureApprox> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..factors)
        .map(|_| {
            let means = (0..components)
                .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let variances = (0..components).map(|_| rng.random_range(0.3..1.3)).collect();
            MixtureApprox::from_parts(means, variances).expect("valid random mixture")
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln x`, with its `R²`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 })
}

/// One timing point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub kind: String,
    #[serde(rename = "M")]
    pub factors: usize,
    #[serde(rename = "K")]
    pub components: usize,
    pub dim: usize,
    #[serde(rename = "R")]
    pub samples: usize,
    /// Product components touched: chain steps or `K^M`.
    pub work: usize,
    /// Fastest of the repeats.
    pub secs: f64,
    pub refused: bool,
}

/// Fastest of `repeats` timings per job. Repeats go round-robin over the
/// jobs so slow phases of a noisy host hit every job alike.
fn min_times(jobs: &mut [Box<dyn FnMut() -> Result<()> + '_>], repeats: usize) -> Result<Vec<f64>> {
    let mut best = vec![f64::INFINITY; jobs.len()];
    for _ in 0..repeats.max(1) {
        for (job, b) in jobs.iter_mut().zip(best.iter_mut()) {
            let started = std::time::Instant::now();
            job()?;
            *b = b.min(started.elapsed().as_secs_f64());
        }
    }
    Ok(best)
}

/// Chain wall time for every `(M, R)` pair, burn-in zero.
pub fn bench_sampler(
    factor_grid: &[usize],
    sample_grid: &[usize],
    components: usize,
    dim: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchPoint>> {
    let factors: Vec<Vec<MixtureApprox>> = factor_grid
        .iter()
        .map(|&m| random_mixtures(m, components, dim, derive_seed(seed, m as u64)))
        .collect();
    let mut out = Vec::new();
    let mut jobs: Vec<Box<dyn FnMut() -> Result<()> + '_>> = Vec::new();
    for (mixtures, &m) in factors.iter().zip(factor_grid) {
        for &r in sample_grid {
            let config = SamplerConfig { samples: r, burn_in: 0, seed, parallel_pairs: false };
            jobs.push(Box::new(move || crate::combine::sample_components(mixtures, &config).map(drop)));
            out.push(BenchPoint {
                kind: "sample".into(),
                factors: m,
                components,
                dim,
                samples: r,
                work: r,
                secs: 0.0,
                refused: false,
            });
        }
    }
    for (point, secs) in out.iter_mut().zip(min_times(&mut jobs, repeats)?) {
        point.secs = secs;
    }
    Ok(out)
}

/// Enumeration wall time for growing `M`; sizes above `cap` are refused
/// and reported with zero time.
pub fn bench_enumeration(
    factor_grid: &[usize],
    components: usize,
    dim: usize,
    cap: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchPoint>> {
    let factors: Vec<Vec<MixtureApprox>> = factor_grid
        .iter()
        .map(|&m| random_mixtures(m, components, dim, derive_seed(seed, m as u64)))
        .collect();
    let mut out = Vec::new();
    let mut jobs: Vec<Box<dyn FnMut() -> Result<()> + '_>> = Vec::new();
    for (mixtures, &m) in factors.iter().zip(factor_grid) {
        let work = components.checked_pow(m as u32).unwrap_or(usize::MAX);
        let refused = match crate::mixture::enumerate_product(mixtures, cap) {
            Err(Error::ExponentialBlowup { .. }) => true,
            Err(e) => return Err(e),
            Ok(_) => false,
        };
        if !refused {
            jobs.push(Box::new(move || crate::mixture::enumerate_product(mixtures, cap).map(drop)));
        }
        out.push(BenchPoint { kind: "exact".into(), factors: m, components, dim, samples: 0, work, secs: 0.0, refused });
    }
    let times = min_times(&mut jobs, repeats)?;
    for (point, secs) in out.iter_mut().filter(|p| !p.refused).zip(times) {
        point.secs = secs;
    }
    Ok(out)
}

pub fn bench_table(points: &[BenchPoint]) -> String {
    let mut out = String::from("kind\tM\tK\td\tR\twork\tsecs\trefused\n");
    for p in points {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.kind, p.factors, p.components, p.dim, p.samples, p.work, p.secs, p.refused
        );
    }
    out
}
