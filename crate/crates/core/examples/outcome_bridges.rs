//! Fit the two outcome-bridge estimators, KPV and PMMR, and compare their
//! dose-response curves with the truth.
//!
//! cargo run --release --example outcome_bridges -- [t]

use proxal::data::{gen_synthetic_lowdim, true_dose_response};
use proxal::doubly_robust::MethodTag;
use proxal::eval::default_dose_grid;
use proxal::pipeline::{fit_pipeline, PipelineConfig};

fn main() -> proxal::Result<()> {
    let t = std::env::args().nth(1).map_or(1000, |s| s.parse().expect("t"));
    let data = gen_synthetic_lowdim(t, 0)?;
    let config = PipelineConfig {
        methods: vec![MethodTag::Kpv, MethodTag::Pmmr],
        ..Default::default()
    };
    let fitted = fit_pipeline(&data, &config)?;
    println!("tuned lambdas: {:?}", fitted.lambdas);
    let grid = default_dose_grid(&data, 9)?;
    let a: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
    let truth = true_dose_response(&a, 1_000_000, 1)?;
    let kpv = fitted.curve(MethodTag::Kpv, grid.as_ref())?;
    let pmmr = fitted.curve(MethodTag::Pmmr, grid.as_ref())?;
    println!("{:>7} {:>8} {:>8} {:>8}", "a", "truth", "kpv", "pmmr");
    for k in 0..a.len() {
        println!("{:7.3} {:8.4} {:8.4} {:8.4}", a[k], truth.theta[k], kpv.estimate()[k], pmmr.estimate()[k]);
    }
    Ok(())
}
