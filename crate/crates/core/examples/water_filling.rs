//! Reverse water-filling on a random diagonal Gaussian: the water level,
//! per-component distortions and R(D) in nats and bits.
//!
//! Usage: `cargo run --release --example water_filling [n]`

use rd_sandwich::oracles::{gaussian_intercept, reverse_waterfill, water_level};
use rd_sandwich::sources::random_gaussian_source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let source = random_gaussian_source(n, 1)?;
    let vars = source.gaussian_variances().ok_or("not Gaussian")?;
    let total: f64 = vars.iter().sum();
    println!("variances {:?}", vars.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    println!("{:>8} {:>10} {:>10} {:>10}", "D/n", "theta", "R nats", "R bits");
    for frac in [0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let d = frac * total;
        let theta = water_level(&vars, d)?;
        let r = reverse_waterfill(&vars, d)?;
        println!("{:>8.4} {theta:>10.4} {r:>10.4} {:>10.4}", d / n as f64, r / std::f64::consts::LN_2);
    }
    println!("\n{:>8} {:>10}", "lambda", "F(lambda)");
    for lambda in [0.25, 0.5, 1.0, 2.0, 8.0] {
        println!("{lambda:>8.2} {:>10.4}", gaussian_intercept(&vars, lambda)?);
    }
    Ok(())
}
