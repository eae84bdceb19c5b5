//! Jitter the outcome-bridge coefficients and compare how far the doubly robust
//! curve and the bridge-only curve move.
//!
//! cargo run --release --example misspecification -- [t] [sigma]

use proxal::doubly_robust::{JitterTarget, MethodTag};
use proxal::eval::{run_misspecification, BenchmarkConfig, MisspecSpec};

fn main() -> proxal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let t = args.get(1).map_or(500, |s| s.parse().expect("t"));
    let sigma = args.get(2).map_or(0.2, |s| s.parse().expect("sigma"));
    let config = BenchmarkConfig {
        seeds: (0..5).collect(),
        ..BenchmarkConfig::default()
    };
    let spec = MisspecSpec {
        method: MethodTag::Drkpv,
        target: JitterTarget::Outcome,
        sigma,
        jitter_seed: 7,
    };
    let runs = run_misspecification(&config, t, &spec, None)?;
    println!("{:>5} {:>12} {:>12} {:>12}", "seed", "dr shift", "kpv shift", "residual");
    for r in &runs {
        println!(
            "{:5} {:12.4} {:12.4} {:12.1e}",
            r.seed,
            r.dr_deviation(),
            r.bridge_deviation(),
            r.linear_response_residual()
        );
    }
    Ok(())
}
