// Multiply three two-component mixtures and enumerate the `2^3` product
// components with their normalized weights.

use epvi::{enumerate_product, MixtureApprox};

pub fn run_example() -> epvi::Result<()> {
    let mixtures = vec![
        MixtureApprox::from_parts(vec![vec![-1.0, 0.0], vec![1.0, 0.5]], vec![0.8, 1.2])?,
        MixtureApprox::from_parts(vec![vec![-0.5, 0.2], vec![1.5, 0.0]], vec![1.0, 0.6])?,
        MixtureApprox::from_parts(vec![vec![0.0, -0.3], vec![0.8, 0.4]], vec![0.9, 0.9])?,
    ];
    let product = enumerate_product(&mixtures, 1000)?;
    println!("{} components, log Z = {:.4}", product.len(), product.log_normalizer());
    for (c, w) in product.components().iter().zip(product.normalized_weights()) {
        println!("  {:?}  weight {w:.4}  mean {:?}  var {:.4}", c.index.as_slice(), c.mean, c.variance);
    }
    println!("posterior mean {:?}", product.mean());
    println!("density at origin {:.5}", product.log_density(&[0.0, 0.0])?.exp());
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
