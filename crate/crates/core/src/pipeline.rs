//! The one-shot parallel pipeline: partition the data, fit every shard
//! independently, collect the fitted parameters once, combine.
//!
//! Shards and fitted parameters are exchanged through files in a run
//! directory:
//!
//! ```text
//! run/
//!   manifest.json
//!   shards/shard-000.txt     read by worker 0 only
//!   params/params-000.json   written by worker 0 only
//!   ledger.json
//! ```
//!
//! Workers share nothing but the model configuration and their own two
//! paths. Every file access they make goes through an [`AccessLog`], so a
//! test can check that no worker touched another shard.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combine::{
    pairwise_reduce, sample_components, CombineMethod, ComponentSampleSet, PosteriorSource, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::io::{MixtureDocument, MixtureMeta};
use crate::math::derive_seed;
use crate::mixture::{enumerate_product, MixtureApprox, ProductMixture};
use crate::models::{Dataset, ModelConfig};
use crate::nvi::{fit, FitConfig, FitReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEDGER_FILE: &str = "ledger.json";

/// How the data was split and where each shard's files live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    #[serde(rename = "M")]
    pub shards: usize,
    pub rows: usize,
    pub partition_seed: u64,
    /// Row order after shuffling; shard `m` owns `permutation[ranges[m].0..ranges[m].1]`.
    pub permutation: Vec<usize>,
    pub ranges: Vec<(usize, usize)>,
    pub prior_temper: f64,
    /// Paths relative to the run directory.
    pub shard_files: Vec<PathBuf>,
    pub param_files: Vec<PathBuf>,
    /// Initialization seed of each shard's fit.
    pub fit_seeds: Vec<u64>,
}

impl ShardManifest {
    pub fn shard_rows(&self, m: usize) -> &[usize] {
        let (a, b) = self.ranges[m];
        &self.permutation[a..b]
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|(a, b)| b - a).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}

/// Shuffle `0..rows` and cut it into `shards` contiguous blocks. The first
/// `rows % shards` blocks get one extra row.
pub fn partition(rows: usize, shards: usize, seed: u64) -> Result<ShardManifest> {
    if shards == 0 {
        return Err(Error::Configuration("M must be at least 1".into()));
    }
    if shards > rows {
        return Err(Error::Configuration(format!("M = {shards} exceeds the number of rows N = {rows}")));
    }
    let mut permutation: Vec<usize> = (0..rows).collect();
    permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = rows / shards;
    let extra = rows % shards;
    let mut ranges = Vec::with_capacity(shards);
    let mut start = 0;
    for m in 0..shards {
        let len = base + usize::from(m < extra);
        ranges.push((start, start + len));
        start += len;
    }
    Ok(ShardManifest {
        shards,
        rows,
        partition_seed: seed,
        permutation,
        ranges,
        prior_temper: 1.0 / shards as f64,
        shard_files: (0..shards).map(|m| PathBuf::from(format!("shards/shard-{m:03}.txt"))).collect(),
        param_files: (0..shards).map(|m| PathBuf::from(format!("params/params-{m:03}.json"))).collect(),
        fit_seeds: vec![0; shards],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileAccess {
    pub worker: usize,
    pub path: PathBuf,
    pub mode: AccessMode,
}

/// Record of every file a fit worker opened.
#[derive(Debug, Default)]
pub struct AccessLog {
    entries: Mutex<Vec<FileAccess>>,
}

impl AccessLog {
    fn record(&self, worker: usize, path: &Path, mode: AccessMode) {
        self.entries.lock().expect("access log poisoned").push(FileAccess { worker, path: path.to_path_buf(), mode });
    }

    pub fn into_entries(self) -> Vec<FileAccess> {
        let mut entries = self.entries.into_inner().expect("access log poisoned");
        entries.sort_by(|a, b| (a.worker, &a.path).cmp(&(b.worker, &b.path)));
        entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub scalars: usize,
    pub bytes: u64,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineRecord {
    pub method: CombineMethod,
    pub sampler: SamplerConfig,
    pub cap: usize,
    pub secs: f64,
    /// Components in the combined representation.
    pub components: usize,
}

/// Costs and outcomes of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub model: String,
    #[serde(rename = "M")]
    pub shards: usize,
    #[serde(rename = "K")]
    pub components: usize,
    pub dim: usize,
    pub workers: usize,
    pub fit_reports: Vec<FitReport>,
    /// Slowest shard fit, the parallel-phase cost.
    pub max_fit_secs: f64,
    /// Wall time of the whole fitting phase on this host.
    pub fit_phase_secs: f64,
    pub accesses: Vec<FileAccess>,
    pub transfer: Option<TransferRecord>,
    pub combine: Option<CombineRecord>,
}

impl RunLedger {
    /// Scalars a full run must move: `M·K·(d+2)`.
    pub fn expected_scalars(&self) -> usize {
        self.shards * self.components * (self.dim + 2)
    }

    /// Max fit time plus transfer plus combine.
    pub fn parallel_secs(&self) -> f64 {
        self.max_fit_secs
            + self.transfer.as_ref().map_or(0.0, |t| t.secs)
            + self.combine.as_ref().map_or(0.0, |c| c.secs)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(LEDGER_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(LEDGER_FILE))
    }
}

/// Settings for the fitting phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    #[serde(rename = "M")]
    pub shards: usize,
    pub fit: FitConfig,
    pub partition_seed: u64,
    /// Give every shard its own initialization seed instead of sharing
    /// `fit.init_seed`.
    #[serde(default)]
    pub per_shard_init: bool,
    /// Worker threads; defaults to `min(M, available cores)`.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn new(model: ModelConfig, shards: usize, fit: FitConfig) -> Self {
        Self { model, shards, fit, partition_seed: 0, per_shard_init: false, workers: None }
    }

    fn worker_count(&self) -> usize {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        self.workers.unwrap_or(cores).clamp(1, self.shards.max(1))
    }
}

/// Partition `data`, write the shard files and the manifest into `dir`.
pub fn prepare_run(dir: &Path, data: &Dataset, config: &PipelineConfig) -> Result<ShardManifest> {
    let mut manifest = partition(data.len(), config.shards, config.partition_seed)?;
    manifest.fit_seeds = (0..config.shards)
        .map(|m| if config.per_shard_init { derive_seed(config.fit.init_seed, m as u64) } else { config.fit.init_seed })
        .collect();
    std::fs::create_dir_all(dir.join("shards"))?;
    std::fs::create_dir_all(dir.join("params"))?;
    for m in 0..manifest.shards {
        data.select(manifest.shard_rows(m)).write(&dir.join(&manifest.shard_files[m]))?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

/// Fit shard `m`: read its shard file, fit, write its parameter file.
fn fit_worker(
    m: usize,
    dir: &Path,
    manifest: &ShardManifest,
    config: &PipelineConfig,
    log: &AccessLog,
) -> Result<(FitReport, usize)> {
    let shard_path = dir.join(&manifest.shard_files[m]);
    log.record(m, &manifest.shard_files[m], AccessMode::Read);
    let shard = Dataset::read(&shard_path)?;
    let model = config.model.build(&shard, manifest.prior_temper)?;
    let fit_config = FitConfig { init_seed: manifest.fit_seeds[m], ..config.fit.clone() };
    let (mixture, report) = fit(model.as_ref(), &fit_config)?;
    let meta = MixtureMeta { shard_id: m, shards: manifest.shards, prior_temper: manifest.prior_temper };
    log.record(m, &manifest.param_files[m], AccessMode::Write);
    MixtureDocument::from_mixture(&mixture, meta).write(&dir.join(&manifest.param_files[m]))?;
    Ok((report, mixture.dim()))
}

/// Run every shard fit on a pool of worker threads. Any failure aborts the
/// run with the list of failed shards.
pub fn run_parallel_fits(dir: &Path, manifest: &ShardManifest, config: &PipelineConfig) -> Result<RunLedger> {
    if manifest.shards != config.shards {
        return Err(Error::Configuration(format!(
            "manifest has M = {} but the run asks for M = {}",
            manifest.shards, config.shards
        )));
    }
    let workers = config.worker_count();
    let log = AccessLog::default();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<(FitReport, usize)>>>> =
        Mutex::new((0..manifest.shards).map(|_| None).collect());
    let started = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let m = next.fetch_add(1, Ordering::Relaxed);
                if m >= manifest.shards {
                    break;
                }
                let outcome = fit_worker(m, dir, manifest, config, &log);
                results.lock().expect("results poisoned")[m] = Some(outcome);
            });
        }
    });
    let fit_phase_secs = started.elapsed().as_secs_f64();

    let mut reports = Vec::with_capacity(manifest.shards);
    let mut failed = Vec::new();
    let mut reasons = Vec::new();
    let mut dim = config.model.param_dim();
    for (m, outcome) in results.into_inner().expect("results poisoned").into_iter().enumerate() {
        match outcome.expect("every shard is claimed") {
            Ok((report, d)) => {
                dim = d;
                reports.push(report);
            }
            Err(e) => {
                failed.push(m);
                reasons.push(format!("shard {m}: {e}"));
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::FitFailures { shards: failed, reason: reasons.join("; ") });
    }
    let max_fit_secs = reports.iter().map(|r| r.wall_time_secs).fold(0.0, f64::max);
    let ledger = RunLedger {
        model: config.model.name().into(),
        shards: manifest.shards,
        components: config.fit.components,
        dim,
        workers,
        fit_reports: reports,
        max_fit_secs,
        fit_phase_secs,
        accesses: log.into_entries(),
        transfer: None,
        combine: None,
    };
    ledger.write(dir)?;
    Ok(ledger)
}

/// Result of the combine step.
#[derive(Debug, Clone)]
pub enum Combined {
    Exact(ProductMixture),
    Sampled(ComponentSampleSet),
}

impl Combined {
    pub fn source(&self) -> PosteriorSource<'_> {
        match self {
            Combined::Exact(p) => PosteriorSource::Exact(p),
            Combined::Sampled(s) => PosteriorSource::Sampled(s),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Combined::Exact(p) => p.len(),
            Combined::Sampled(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean of the combined posterior approximation.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            Combined::Exact(p) => p.mean(),
            Combined::Sampled(s) => s.mean(),
        }
    }
}

/// Read all `M` parameter files in one collection step.
pub fn collect(dir: &Path, manifest: &ShardManifest) -> Result<(Vec<MixtureApprox>, TransferRecord)> {
    let started = Instant::now();
    let mut mixtures = Vec::with_capacity(manifest.shards);
    let mut scalars = 0;
    let mut bytes = 0;
    for (m, rel) in manifest.param_files.iter().enumerate() {
        let path = dir.join(rel);
        let fail = |reason: String| Error::Collection { shard: m, path: path.clone(), reason };
        let text = std::fs::read_to_string(&path).map_err(|e| fail(e.to_string()))?;
        let doc: MixtureDocument = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        if doc.meta.shard_id != m || doc.meta.shards != manifest.shards {
            return Err(fail(format!(
                "document belongs to shard {} of {}",
                doc.meta.shard_id, doc.meta.shards
            )));
        }
        mixtures.push(doc.to_mixture().map_err(fail)?);
        scalars += doc.payload_scalars();
        bytes += text.len() as u64;
    }
    Ok((mixtures, TransferRecord { scalars, bytes, secs: started.elapsed().as_secs_f64() }))
}

/// Combine already collected mixtures.
pub fn combine(mixtures: &[MixtureApprox], method: CombineMethod, sampler: &SamplerConfig, cap: usize) -> Result<Combined> {
    Ok(match method {
        CombineMethod::Exact => Combined::Exact(enumerate_product(mixtures, cap)?),
        CombineMethod::Sample => Combined::Sampled(sample_components(mixtures, sampler)?),
        CombineMethod::Pairwise if mixtures.len() == 1 => Combined::Sampled(sample_components(mixtures, sampler)?),
        CombineMethod::Pairwise => Combined::Sampled(pairwise_reduce(mixtures, sampler)?),
    })
}

/// Collect every parameter file, combine, and record transfer and combine
/// costs in the ledger.
pub fn collect_and_combine(
    dir: &Path,
    manifest: &ShardManifest,
    ledger: &mut RunLedger,
    method: CombineMethod,
    sampler: &SamplerConfig,
    cap: usize,
) -> Result<Combined> {
    let (mixtures, transfer) = collect(dir, manifest)?;
    if transfer.scalars != ledger.expected_scalars() {
        return Err(Error::Configuration(format!(
            "collected {} scalars, expected M·K·(d+2) = {}",
            transfer.scalars,
            ledger.expected_scalars()
        )));
    }
    ledger.transfer = Some(transfer);
    let started = Instant::now();
    let combined = combine(&mixtures, method, sampler, cap)?;
    ledger.combine = Some(CombineRecord {
        method,
        sampler: sampler.clone(),
        cap,
        secs: started.elapsed().as_secs_f64(),
        components: combined.len(),
    });
    ledger.write(dir)?;
    Ok(combined)
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub manifest: ShardManifest,
    pub ledger: RunLedger,
    pub combined: Combined,
}

/// Partition, fit and combine in one call.
pub fn run_pipeline(
    dir: &Path,
    data: &Dataset,
    config: &PipelineConfig,
    method: CombineMethod,
    sampler: &SamplerConfig,
    cap: usize,
) -> Result<PipelineRun> {
    let manifest = prepare_run(dir, data, config)?;
    let mut ledger = run_parallel_fits(dir, &manifest, config)?;
    let combined = collect_and_combine(dir, &manifest, &mut ledger, method, sampler, cap)?;
    Ok(PipelineRun { manifest, ledger, combined })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::MissingInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), reason: e.to_string() })
}
