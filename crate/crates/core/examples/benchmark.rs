//! A small benchmark grid over methods and seeds, printed as the summary CSV.
//!
//! cargo run --release --example benchmark -- [t] [runs]

use proxal::doubly_robust::MethodTag;
use proxal::eval::{run_benchmark, summary_csv, BenchmarkConfig};

fn main() -> proxal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let t = args.get(1).map_or(500, |s| s.parse().expect("t"));
    let runs: u64 = args.get(2).map_or(3, |s| s.parse().expect("runs"));
    let config = BenchmarkConfig {
        methods: vec![MethodTag::Drkpv, MethodTag::Drpmmr, MethodTag::Kpv, MethodTag::Pmmr, MethodTag::Kap],
        sample_sizes: vec![t],
        seeds: (0..runs).collect(),
        ..BenchmarkConfig::default()
    };
    let reports = run_benchmark(&config)?;
    print!("{}", summary_csv(&reports));
    for method in &config.methods {
        let m: Vec<f64> = reports.iter().filter(|r| r.method == *method).map(|r| r.mse).collect();
        println!("# {method}: mean MSE {:.4}", m.iter().sum::<f64>() / m.len() as f64);
    }
    Ok(())
}
