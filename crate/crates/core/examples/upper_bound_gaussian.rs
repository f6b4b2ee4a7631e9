//! Upper bound on a 4-D diagonal Gaussian with an identity decoder, compared
//! with reverse water-filling at the achieved distortion.
//!
//! Usage: `cargo run --release --example upper_bound_gaussian [steps]`

use rd_sandwich::oracles::reverse_waterfill;
use rd_sandwich::sources::Source;
use rd_sandwich::upper::{sweep_upper, UpperConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5000);
    let vars = vec![1.2, 1.0, 0.9, 0.8];
    let source = Source::diagonal_gaussian(vec![0.0; 4], vars.clone(), 0)?;
    let cfg = UpperConfig {
        steps,
        lr: 1e-3,
        convergence_window: steps / 5,
        ..UpperConfig::new(1.0, 4)
    };
    let sweep = sweep_upper(&source, &[1.0, 2.0, 4.0, 8.0], &cfg, 1)?;
    println!("{:>8} {:>9} {:>9} {:>9} {:>10}", "lambda", "D", "R", "R(D)", "converged");
    for p in &sweep.points {
        let pt = &p.evaluation.point;
        println!(
            "{:>8.2} {:>9.4} {:>9.4} {:>9.4} {:>10}",
            pt.lambda.unwrap_or(f64::NAN),
            pt.distortion,
            pt.rate,
            reverse_waterfill(&vars, pt.distortion)?,
            p.converged
        );
    }
    Ok(())
}
