//! Sandwich bounds on the 2-D banana source: an upper-bound sweep with a flow
//! prior, a lower-bound sweep, and the gap on a shared distortion grid.
//!
//! Small settings so it finishes in minutes; raise the steps for tighter bounds.
//!
//! Usage: `cargo run --release --example banana_sandwich [ub_steps] [lb_steps]`

use rd_sandwich::lower::LowerConfig;
use rd_sandwich::sandwich::run_sandwich;
use rd_sandwich::sources::Source;
use rd_sandwich::upper::{PriorSpec, UpperConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>());
    let ub_steps = args.next().transpose()?.unwrap_or(3000);
    let lb_steps = args.next().transpose()?.unwrap_or(200);
    let source = Source::default_banana(0);
    let upper = UpperConfig {
        prior: PriorSpec::flow(),
        steps: ub_steps,
        lr: 1e-3,
        convergence_window: ub_steps / 5,
        ..UpperConfig::new(1.0, 2)
    };
    let lower = LowerConfig {
        k: 512,
        m: 2,
        hidden: vec![32, 32, 32],
        steps: lb_steps,
        lr: 1e-3,
        m_eval: 10,
        ..LowerConfig::banana(2, 1.0)
    };
    let run = run_sandwich(&source, &[1.0, 2.0, 5.0], &upper, &lower, 1)?;
    let report = &run.report;
    println!("{:>8} {:>10} {:>10} {:>10}", "D", "R_upper", "R_lower", "gap bits");
    for row in report.gap.iter().step_by(10) {
        println!("{:>8.4} {:>10.4} {:>10.4} {:>10.4}", row.distortion, row.upper, row.lower, row.gap_bits);
    }
    if let Some(g) = report.mean_gap_bits() {
        println!("mean gap {g:.3} bits");
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
