//! Lower bound for a 1-D standard Gaussian at slope lambda = 0.5, where the
//! true intercept is 0.5 nats.
//!
//! Usage: `cargo run --release --example lower_bound_gaussian [steps]`

use std::time::Instant;

use rd_sandwich::lower::{train_lower_bound, LowerConfig};
use rd_sandwich::oracles::gaussian_intercept;
use rd_sandwich::sources::Source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let source = Source::standard_gaussian(1, 0)?;
    let cfg = LowerConfig {
        steps,
        lr: 1e-3,
        ..LowerConfig::gaussian(1, 0.5)
    };
    let start = Instant::now();
    let run = train_lower_bound(&source, &cfg)?;
    let e = &run.estimate;
    println!("steps        {steps} (converged: {})", run.converged);
    println!("intercept    {:.4} +- {:.4}", e.xi.mean, e.xi.std_error());
    println!("90% LCB      {:.4}", e.lcb);
    println!("true F       {:.4}", gaussian_intercept(&[1.0], 0.5)?);
    println!("elapsed      {:.1?}", start.elapsed());
    Ok(())
}
