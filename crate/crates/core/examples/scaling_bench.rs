// Chain time against M and R, and enumeration time against `K^M`.

use epvi::eval::{bench_enumeration, bench_sampler, bench_table, loglog_slope};

pub fn run_example() -> epvi::Result<()> {
    let chain = bench_sampler(&[16, 32, 64], &[2000, 4000, 8000], 3, 10, 5, 1)?;
    print!("{}", bench_table(&chain));
    let by_r: Vec<_> = chain.iter().filter(|p| p.factors == 64).collect();
    let (slope, r2) = loglog_slope(
        &by_r.iter().map(|p| p.samples as f64).collect::<Vec<_>>(),
        &by_r.iter().map(|p| p.secs).collect::<Vec<_>>(),
    );
    println!("slope in R {slope:.2} (R² {r2:.3})");

    let exact = bench_enumeration(&[6, 8, 10, 14], 3, 2, 1_000_000, 2, 1)?;
    print!("{}", bench_table(&exact));
    Ok(())
}

#[allow(dead_code)]
fn main() -> epvi::Result<()> {
    run_example()
}
