// Run the index chain on a product too large to enumerate (`3^20`
// components) and summarize the retained components.

use epvi::combine::{sample_components, SamplerConfig};
use epvi::eval::random_mixtures;
use epvi::{enumerate_product, Error};

pub fn run_example() -> epvi::Result<()> {
    let mixtures = random_mixtures(20, 3, 2, 7);
    match enumerate_product(&mixtures, 1_000_000) {
        Err(Error::ExponentialBlowup { .. }) => println!("enumeration refused: 3^20 components"),
        other => println!("unexpected: {:?}", other.map(|p| p.len())),
    }

    let config = SamplerConfig { samples: 2000, burn_in: 1000, seed: 1, parallel_pairs: false };
    let set = sample_components(&mixtures, &config)?;
    println!("retained {} components, {} accepted moves", set.len(), set.accepted);
    println!("posterior mean {:?}", set.mean());
    if let Some(indices) = &set.indices {
        println!("last state {:?}", indices.last().map(|i| i.as_slice()));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
