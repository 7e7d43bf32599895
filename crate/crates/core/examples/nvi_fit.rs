// Fit a three-component NVI mixture to a Bayesian logistic regression
// posterior and print the objective trace.

use epvi::models::{generate_synthetic, LogisticModelConfig, ModelConfig};
use epvi::nvi::{fit, FitConfig};

pub fn run_example() -> epvi::Result<()> {
    let model = ModelConfig::Logistic(LogisticModelConfig::new(4));
    let synthetic = generate_synthetic(&model, 500, 1)?;
    let target = model.build(&synthetic.data, 1.0)?;

    let config = FitConfig { record_trace: true, ..FitConfig::with_components(3) };
    let (mixture, report) = fit(target.as_ref(), &config)?;
    println!("objective {:.4} after {} iterations (converged: {})", report.objective, report.iterations, report.converged);
    if let Some(trace) = &report.objective_trace {
        let shown: Vec<String> = trace.iter().take(8).map(|v| format!("{v:.2}")).collect();
        println!("trace: {} ...", shown.join(" "));
    }
    for c in mixture.components() {
        println!("  mean {:?}  var {:.3e}", c.mean().iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(), c.variance());
    }
    println!("truth {:?}", synthetic.truth.theta);
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
