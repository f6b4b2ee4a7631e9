//! Monte Carlo means of the `C_k` estimator on a three-atom source with a fixed
//! `u`. The means fall with `k` toward the sup-partition value `c`.
//!
//! Usage: `cargo run --release --example ck_diagnostics [trials]`

use rd_sandwich::lower::{ck_monotonicity_check, FnLogU, HillClimb};
use rd_sandwich::sources::Source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trials = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let atoms = [-1.0, 0.3, 1.2];
    let pmf = [0.5, 0.3, 0.2];
    let lambda = 1.5;
    let log_u = |x: f64| 0.2 * x - 0.1 * x * x;
    let psi = |xh: f64| -> f64 {
        atoms
            .iter()
            .zip(&pmf)
            .map(|(x, p)| p * (-lambda * (x - xh) * (x - xh) - log_u(*x)).exp())
            .sum()
    };
    let c = (0..=100_000)
        .map(|i| psi(-3.0 + 6e-5 * i as f64))
        .fold(0.0, f64::max);

    let source = Source::discrete(atoms.iter().map(|x| vec![*x]).collect(), pmf.to_vec(), 0)?;
    let u = FnLogU(|x: &[f64]| log_u(x[0]));
    let rows = ck_monotonicity_check(&u, &source, lambda, &[1, 2, 4, 8, 64, 1024], trials, 1, &HillClimb::default())?;
    println!("c (grid search) = {c:.5}");
    println!("{:>6} {:>10} {:>10}", "k", "mean C_k", "std err");
    for r in rows {
        println!("{:>6} {:>10.5} {:>10.5}", r.k, r.mean, r.std_error);
    }
    Ok(())
}
