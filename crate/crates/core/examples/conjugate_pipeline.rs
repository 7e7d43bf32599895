// Gaussian toy model end to end: shard, fit, write parameter files,
// collect and combine, then compare with the analytic posterior.

use epvi::combine::{CombineMethod, SamplerConfig};
use epvi::models::{generate_synthetic, GaussianToyConfig, ModelConfig};
use epvi::nvi::FitConfig;
use epvi::pipeline::{run_pipeline, PipelineConfig};
use epvi::DEFAULT_ENUMERATION_CAP;

pub fn run_example() -> epvi::Result<()> {
    let toy = GaussianToyConfig { dim: 2, ..GaussianToyConfig::default() };
    let model = ModelConfig::Gaussian(toy.clone());
    let data = generate_synthetic(&model, 400, 1)?.data;
    let (mean, var) = toy.posterior(&data, 1.0);
    println!("analytic posterior mean {mean:?}, var {var:.5}");

    let dir = tempfile::tempdir()?;
    let config = PipelineConfig::new(model, 4, FitConfig::with_components(1));
    let run = run_pipeline(dir.path(), &data, &config, CombineMethod::Exact, &SamplerConfig::default(), DEFAULT_ENUMERATION_CAP)?;
    println!("combined mean {:?}", run.combined.mean());
    let transfer = run.ledger.transfer.as_ref().expect("collected");
    println!("{} parameter files, {} scalars transferred", run.manifest.param_files.len(), transfer.scalars);
    println!("slowest shard fit {:.4}s", run.ledger.max_fit_secs);
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
