// Combine eight mixtures by sequential pairwise products and compare the
// result with the single chain over all eight.

use epvi::combine::{pairwise_reduce, sample_components, SamplerConfig};
use epvi::eval::random_mixtures;

pub fn run_example() -> epvi::Result<()> {
    let mixtures = random_mixtures(8, 3, 2, 3);
    let config = SamplerConfig { samples: 5000, burn_in: 1000, seed: 2, parallel_pairs: false };
    let pairs = pairwise_reduce(&mixtures, &config)?;
    println!("rounds {:?}", pairs.provenance.rounds);
    println!("pairwise mean {:?}", pairs.mean());

    let chain = sample_components(&mixtures, &config)?;
    println!("chain mean    {:?}", chain.mean());

    let parallel = pairwise_reduce(&mixtures, &SamplerConfig { parallel_pairs: true, ..config })?;
    println!("parallel pairs give the same components: {}", parallel.means == pairs.means);
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
