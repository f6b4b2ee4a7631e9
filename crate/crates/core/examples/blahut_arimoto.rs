//! Blahut-Arimoto on a Bernoulli source with Hamming distortion, against
//! `H(p) - H(D)`, and on a discretized Gaussian against `ln(1 / D) / 2`.
//!
//! Usage: `cargo run --release --example blahut_arimoto`

use rd_sandwich::oracles::{ba_solve, binary_rd, discretize, BaConfig, GridSpec};
use rd_sandwich::sources::{DistortionMetric, Source, SourceKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = 0.2;
    let support = vec![vec![0.0], vec![1.0]];
    println!("Bernoulli({p}), Hamming");
    println!("{:>8} {:>10} {:>12} {:>12}", "lambda", "D", "R_BA", "H(p)-H(D)");
    for lambda in [1.5, 2.0, 3.0, 4.0, 6.0] {
        let sol = ba_solve(&[1.0 - p, p], &support, &support, DistortionMetric::Hamming, lambda, &BaConfig::default())?;
        let pt = &sol.point;
        println!(
            "{lambda:>8.2} {:>10.5} {:>12.6} {:>12.6}",
            pt.distortion,
            pt.rate,
            binary_rd(p, pt.distortion)
        );
    }

    let gauss = discretize(&Source::standard_gaussian(1, 0)?, &GridSpec::new(-5.0, 5.0, 121).with_samples(2_000_000))?;
    let SourceKind::DiscreteTabular { support: atoms, pmf } = gauss.kind() else {
        return Err("discretize returns a tabular source".into());
    };
    println!("\nN(0, 1) on a 121-bin grid, squared error");
    println!("{:>8} {:>8} {:>10} {:>10}", "lambda", "D", "R_BA", "R(D)");
    for lambda in [1.0, 2.0, 5.0] {
        let sol = ba_solve(pmf, atoms, atoms, DistortionMetric::SquaredError, lambda, &BaConfig::default())?;
        let pt = &sol.point;
        println!(
            "{lambda:>8.2} {:>8.4} {:>10.5} {:>10.5}",
            pt.distortion,
            pt.rate,
            0.5 * (1.0 / pt.distortion).ln()
        );
    }
    Ok(())
}
