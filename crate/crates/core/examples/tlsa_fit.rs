// Topographic latent source analysis: EPVI over five shards against a
// single fit on all the data.

use epvi::eval::{run_experiment, Experiment};
use epvi::models::{ModelConfig, TlsaModelConfig};

pub fn run_example() -> epvi::Result<()> {
    let tlsa = TlsaModelConfig { sources: 4, outputs: 50, ..TlsaModelConfig::default() };
    let mut e = Experiment::new(ModelConfig::Tlsa(tlsa), 1000, 5, 4);
    e.baseline = true;
    let dir = tempfile::tempdir()?;
    for cell in run_experiment(dir.path(), &e)? {
        if let Some(r) = &cell.result {
            println!("{:<12} nll {:.4}  fit {:.3}s", r.method, r.metrics.nll, r.times.fit_secs);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
