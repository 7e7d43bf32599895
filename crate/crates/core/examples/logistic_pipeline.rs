// Hierarchical logistic regression on synthetic data: every combine method
// plus the full-data fit, scored on a held-out split.

use epvi::combine::CombineMethod;
use epvi::eval::{run_experiment, Experiment};
use epvi::models::{LogisticModelConfig, ModelConfig};

pub fn run_example() -> epvi::Result<()> {
    let mut e = Experiment::new(ModelConfig::Logistic(LogisticModelConfig::new(10)), 5000, 3, 3);
    e.methods = vec![CombineMethod::Exact, CombineMethod::Sample, CombineMethod::Pairwise];
    e.baseline = true;
    let dir = tempfile::tempdir()?;
    for cell in run_experiment(dir.path(), &e)? {
        match &cell.result {
            Some(r) => println!(
                "{:<12} nll {:.4} ± {:.4}  acc {:.4}  fit {:.3}s  combine {:.4}s",
                r.method,
                r.metrics.nll,
                r.metrics.nll_se,
                r.metrics.accuracy.unwrap_or(f64::NAN),
                r.times.fit_secs,
                r.times.combine_secs
            ),
            None => println!("{:<12} {}", cell.method, cell.message.unwrap_or_default()),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
