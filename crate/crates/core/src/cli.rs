//! The `epvi` command line.
//!
//! ```text
//! epvi gen-data --model logistic --rows 2000 --seed 1 --out data
//! epvi fit-all  --data data --M 4 --K 3 --out run
//! epvi combine  --run run --method sample --R 500 --burn-in 1000
//! epvi evaluate --run run --data data --method sample
//! ```
//!
//! Exit codes: 0 on success, 1 on a runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::combine::{draw_posterior_samples, CombineMethod, SamplerConfig};
use crate::error::{Error, Result};
use crate::eval::{
    bench_enumeration, bench_sampler, bench_table, heldout_metrics, loglog_slope, method_tag, run_experiment, sweep,
    Cell, ConfigEcho, EvalResult, Experiment, PhaseTimes, SweepAxis, DEFAULT_PREDICTIVE_DRAWS,
};
use crate::io::{read_draws, write_draws, ComponentFile, MixtureDocument, MixtureMeta};
use crate::math::derive_seed;
use crate::mixture::DEFAULT_ENUMERATION_CAP;
use crate::models::{
    generate_synthetic, Dataset, GaussianToyConfig, LogisticModelConfig, ModelConfig, TlsaModelConfig,
};
use crate::nvi::{fit, FitConfig};
use crate::pipeline::{
    collect_and_combine, prepare_run, read_json, run_parallel_fits, write_json, PipelineConfig, RunLedger,
    ShardManifest,
};

pub const TRAIN_FILE: &str = "train.txt";
pub const TEST_FILE: &str = "test.txt";
pub const MODEL_FILE: &str = "model.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const CONFIG_FILE: &str = "config.json";
pub const DATA_INFO_FILE: &str = "data.json";

/// How a dataset directory was generated.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DataInfo {
    pub rows: usize,
    pub holdout: f64,
    pub seed: u64,
}

#[derive(Debug, Parser)]
#[command(name = "epvi", version, about = "Embarrassingly parallel variational inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a held-out split.
    GenData(GenDataArgs),
    /// Fit one NVI mixture to a dataset.
    Fit(FitArgs),
    /// Partition a dataset and fit every shard in parallel.
    FitAll(FitAllArgs),
    /// Collect the shard fits of a run and combine them.
    Combine(CombineArgs),
    /// Score a combined posterior on the held-out split.
    Evaluate(EvaluateArgs),
    /// Time the sampler and exact enumeration.
    Bench(BenchArgs),
    /// Compare combine methods and a full-data fit, optionally over a sweep.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Gaussian,
    Logistic,
    Tlsa,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Sample,
    Pairwise,
}

impl From<MethodArg> for CombineMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => CombineMethod::Exact,
            MethodArg::Sample => CombineMethod::Sample,
            MethodArg::Pairwise => CombineMethod::Pairwise,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "logistic")]
    model: Family,
    /// Parameter dimension of the Gaussian model.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Logistic coefficient count V.
    #[arg(long, default_value_t = 10)]
    features: usize,
    /// TLSA latent sources L.
    #[arg(long = "L", default_value_t = 4)]
    sources: usize,
    /// TLSA output dimensions V.
    #[arg(long, default_value_t = 50)]
    outputs: usize,
    /// TLSA covariates C.
    #[arg(long, default_value_t = 3)]
    covariates: usize,
    /// Use the positive basis exponent exp{+‖r − r̄‖²/λ} for TLSA.
    #[arg(long)]
    positive_exponent: bool,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        match self.model {
            Family::Gaussian => ModelConfig::Gaussian(GaussianToyConfig { dim: self.dim, ..GaussianToyConfig::default() }),
            Family::Logistic => ModelConfig::Logistic(LogisticModelConfig::new(self.features)),
            Family::Tlsa => ModelConfig::Tlsa(TlsaModelConfig {
                sources: self.sources,
                outputs: self.outputs,
                covariates: self.covariates,
                positive_exponent: self.positive_exponent,
                ..TlsaModelConfig::default()
            }),
        }
    }
}

#[derive(Debug, Args)]
struct FitSettings {
    /// Mixture components per fit.
    #[arg(long = "K", default_value_t = 4)]
    components: usize,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    /// Keep the objective trace in fit reports.
    #[arg(long)]
    trace: bool,
}

impl FitSettings {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            components: self.components,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            init_seed: seed,
            record_trace: self.trace,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// Retained product components.
    #[arg(long = "R", default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 1000)]
    burn_in: usize,
    /// Largest product enumerated exactly.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    /// Run the pairs of each pairwise round concurrently.
    #[arg(long)]
    parallel_pairs: bool,
}

impl SamplerArgs {
    fn config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig { samples: self.samples, burn_in: self.burn_in, seed, parallel_pairs: self.parallel_pairs }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Rows generated before the holdout split.
    #[arg(long, default_value_t = 20_000)]
    rows: usize,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Fit this dataset file instead of the training split.
    #[arg(long)]
    shard: Option<PathBuf>,
    /// Prior exponent β.
    #[arg(long, default_value_t = 1.0)]
    prior_temper: f64,
    #[command(flatten)]
    fit: FitSettings,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output mixture document.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitAllArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of shards.
    #[arg(long = "M", default_value_t = 4)]
    shards: usize,
    #[command(flatten)]
    fit: FitSettings,
    /// Worker threads (default: min(M, cores)).
    #[arg(long)]
    workers: Option<usize>,
    /// Seed every shard's initialization separately.
    #[arg(long)]
    per_shard_init: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CombineArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "sample")]
    method: MethodArg,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Posterior draws to write.
    #[arg(long, default_value_t = DEFAULT_PREDICTIVE_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory holding the test split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "sample")]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 4, 8, 16])]
    m_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2000, 4000, 8000, 16000])]
    r_grid: Vec<usize>,
    #[arg(long = "K", default_value_t = 3)]
    components: usize,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 20_000)]
    rows: usize,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long = "M", default_value_t = 4)]
    shards: usize,
    #[command(flatten)]
    fit: FitSettings,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Methods to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![MethodArg::Exact, MethodArg::Sample, MethodArg::Pairwise])]
    method: Vec<MethodArg>,
    /// Skip the full-data NVI baseline.
    #[arg(long)]
    no_baseline: bool,
    /// Sweep axis (M, K or L).
    #[arg(long)]
    sweep: Option<SweepAxis>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_PREDICTIVE_DRAWS)]
    draws: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Fit(a) => fit_one(a),
        Command::FitAll(a) => fit_all(a),
        Command::Combine(a) => combine_run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
        Command::Compare(a) => compare(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let model = a.model.config();
    let synthetic = generate_synthetic(&model, a.rows, a.seed)?;
    let (train, test) = synthetic.data.split_holdout(a.holdout, derive_seed(a.seed, 1))?;
    std::fs::create_dir_all(&a.out)?;
    train.write(&a.out.join(TRAIN_FILE))?;
    test.write(&a.out.join(TEST_FILE))?;
    write_json(&a.out.join(MODEL_FILE), &model)?;
    write_json(&a.out.join(TRUTH_FILE), &synthetic.truth)?;
    write_json(&a.out.join(DATA_INFO_FILE), &DataInfo { rows: a.rows, holdout: a.holdout, seed: a.seed })?;
    println!("wrote {} training and {} test rows to {}", train.len(), test.len(), a.out.display());
    Ok(())
}

fn load_model(dir: &Path) -> Result<ModelConfig> {
    read_json(&dir.join(MODEL_FILE))
}

fn fit_one(a: FitArgs) -> Result<()> {
    let model = load_model(&a.data)?;
    let data = Dataset::read(&a.shard.unwrap_or_else(|| a.data.join(TRAIN_FILE)))?;
    let built = model.build(&data, a.prior_temper)?;
    let (mixture, report) = fit(built.as_ref(), &a.fit.config(a.seed))?;
    let meta = MixtureMeta { shard_id: 0, shards: 1, prior_temper: a.prior_temper };
    MixtureDocument::from_mixture(&mixture, meta).write(&a.out)?;
    write_json(&a.out.with_extension("report.json"), &report)?;
    println!(
        "objective {:.6} after {} iterations (converged: {}) in {:.3}s",
        report.objective, report.iterations, report.converged, report.wall_time_secs
    );
    Ok(())
}

fn fit_all(a: FitAllArgs) -> Result<()> {
    let model = load_model(&a.data)?;
    let train = Dataset::read(&a.data.join(TRAIN_FILE))?;
    let config = PipelineConfig {
        model,
        shards: a.shards,
        fit: a.fit.config(a.seed),
        partition_seed: a.seed,
        per_shard_init: a.per_shard_init,
        workers: a.workers,
    };
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(CONFIG_FILE), &config)?;
    let manifest = prepare_run(&a.out, &train, &config)?;
    let ledger = run_parallel_fits(&a.out, &manifest, &config)?;
    println!(
        "fitted {} shards on {} workers; slowest fit {:.3}s",
        ledger.shards, ledger.workers, ledger.max_fit_secs
    );
    Ok(())
}

fn components_path(run: &Path, method: CombineMethod) -> PathBuf {
    run.join(format!("components-{}.txt", method.as_str()))
}

fn draws_path(run: &Path, method: CombineMethod) -> PathBuf {
    run.join(format!("draws-{}.txt", method.as_str()))
}

fn combine_run(a: CombineArgs) -> Result<()> {
    let method = CombineMethod::from(a.method);
    let manifest = ShardManifest::read(&a.run)?;
    let mut ledger = RunLedger::read(&a.run)?;
    let sampler = a.sampler.config(a.seed);
    let combined = collect_and_combine(&a.run, &manifest, &mut ledger, method, &sampler, a.sampler.cap)?;
    write_json(&a.run.join(format!("ledger-{}.json", method.as_str())), &ledger)?;
    let file = match &combined {
        crate::pipeline::Combined::Exact(p) => ComponentFile::from_product(p, ledger.shards, ledger.components)?,
        crate::pipeline::Combined::Sampled(s) => ComponentFile::from_samples(s)?,
    };
    file.write(&components_path(&a.run, method))?;
    let draw_seed = derive_seed(a.seed, 2);
    let draws = draw_posterior_samples(combined.source(), a.draws, &mut ChaCha8Rng::seed_from_u64(draw_seed))?;
    write_draws(&draws_path(&a.run, method), &draws, draw_seed)?;
    let transfer = ledger.transfer.as_ref().expect("recorded by collection");
    println!(
        "{}: {} components from {} scalars ({} bytes); combine {:.3}s",
        method.as_str(),
        combined.len(),
        transfer.scalars,
        transfer.bytes,
        ledger.combine.as_ref().map_or(0.0, |c| c.secs)
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let method = CombineMethod::from(a.method);
    let path = draws_path(&a.run, method);
    if !path.exists() {
        return Err(Error::MissingInput(format!(
            "no combined draws at {}; run `epvi combine --method {}` first",
            path.display(),
            method.as_str()
        )));
    }
    let draws = read_draws(&path)?;
    let config: PipelineConfig = read_json(&a.run.join(CONFIG_FILE))?;
    let ledger: RunLedger = read_json(&a.run.join(format!("ledger-{}.json", method.as_str())))?;
    let test = Dataset::read(&a.data.join(TEST_FILE))?;
    let info: DataInfo = read_json(&a.data.join(DATA_INFO_FILE))?;
    let metrics = heldout_metrics(&draws, &test, &config.model)?;
    let combine = ledger.combine.as_ref();
    let result = EvalResult {
        method: method_tag(method).into(),
        metrics,
        times: PhaseTimes::from_ledger(&ledger),
        config: ConfigEcho {
            model: config.model.name().into(),
            shards: config.shards,
            components: config.fit.components,
            samples: combine.map_or(0, |c| c.sampler.samples),
            burn_in: combine.map_or(0, |c| c.sampler.burn_in),
            sources: match &config.model {
                ModelConfig::Tlsa(c) => Some(c.sources),
                _ => None,
            },
            rows: info.rows,
            holdout: info.holdout,
            data_seed: info.seed,
            seed: a.seed,
            draws: draws.len(),
        },
    };
    write_json(&a.run.join(format!("eval-{}.json", method.as_str())), &result)?;
    print_result(&result);
    Ok(())
}

fn print_result(r: &EvalResult) {
    let acc = r.metrics.accuracy.map_or_else(String::new, |a| format!(" accuracy {a:.4}"));
    println!(
        "{:<12} nll {:.5} ± {:.5}{acc} time {:.3}s (fit {:.3}s, combine {:.3}s)",
        r.method, r.metrics.nll, r.metrics.nll_se, r.times.total_secs, r.times.fit_secs, r.times.combine_secs
    );
}

fn bench(a: BenchArgs) -> Result<()> {
    let r_fixed = a.r_grid[a.r_grid.len() / 2];
    let m_fixed = a.m_grid[0];
    let mut points = bench_sampler(&[m_fixed], &a.r_grid, a.components, a.dim, a.repeats, a.seed)?;
    points.extend(bench_sampler(&a.m_grid, &[r_fixed], a.components, a.dim, a.repeats, a.seed)?);
    let m_enum: Vec<usize> = (1..=16).collect();
    points.extend(bench_enumeration(&m_enum, a.components, a.dim, a.cap, 1, a.seed)?);
    let table = bench_table(&points);
    print!("{table}");

    let by_r: Vec<_> = points.iter().filter(|p| p.kind == "sample" && p.factors == m_fixed).take(a.r_grid.len()).collect();
    let (slope_r, _) = loglog_slope(
        &by_r.iter().map(|p| p.samples as f64).collect::<Vec<_>>(),
        &by_r.iter().map(|p| p.secs).collect::<Vec<_>>(),
    );
    let by_m: Vec<_> = points.iter().filter(|p| p.kind == "sample").skip(a.r_grid.len()).collect();
    let (slope_m, _) = loglog_slope(
        &by_m.iter().map(|p| p.factors as f64).collect::<Vec<_>>(),
        &by_m.iter().map(|p| p.secs).collect::<Vec<_>>(),
    );
    println!("log-log slope in R: {slope_r:.3}; in M: {slope_m:.3}");
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("bench.tsv"), table)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let mut experiment = Experiment::new(a.model.config(), a.rows, a.shards, a.fit.components);
    experiment.holdout = a.holdout;
    experiment.data_seed = a.seed;
    experiment.seed = a.seed;
    experiment.fit = a.fit.config(a.seed);
    experiment.sampler = a.sampler.config(a.seed);
    experiment.cap = a.sampler.cap;
    experiment.draws = a.draws;
    experiment.methods = a.method.iter().map(|&m| m.into()).collect();
    experiment.baseline = !a.no_baseline;
    experiment.workers = a.workers;
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("experiment.json"), &experiment)?;

    let cells: Vec<Cell> = match a.sweep {
        Some(axis) => {
            if a.values.is_empty() {
                return Err(Error::Configuration("--sweep needs --values".into()));
            }
            let rows = sweep(&a.out, axis, &a.values, &experiment)?;
            for row in &rows {
                print!("{axis}={:<4} ", row.value);
                print_cell(&row.cell);
            }
            rows.into_iter().map(|r| r.cell).collect()
        }
        None => {
            let cells = run_experiment(&a.out.join("run"), &experiment)?;
            cells.iter().for_each(print_cell);
            cells
        }
    };
    write_json(&a.out.join("compare.json"), &cells)?;
    Ok(())
}

fn print_cell(cell: &Cell) {
    match &cell.result {
        Some(r) => print_result(r),
        None => println!("{:<12} {} ({})", cell.method, cell.status.as_str(), cell.message.as_deref().unwrap_or("")),
    }
}
