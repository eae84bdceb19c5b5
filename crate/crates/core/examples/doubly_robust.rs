//! The doubly robust curve and its three parts: outcome bridge, treatment
//! bridge and the slack term they share.
//!
//! cargo run --release --example doubly_robust -- [t] [drkpv|drpmmr]

use proxal::data::{gen_synthetic_lowdim, true_dose_response};
use proxal::doubly_robust::MethodTag;
use proxal::eval::{default_dose_grid, mse};
use proxal::pipeline::{fit_pipeline, PipelineConfig};

fn main() -> proxal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let t = args.get(1).map_or(1000, |s| s.parse().expect("t"));
    let method: MethodTag = args.get(2).map_or("drkpv", String::as_str).parse().expect("method");
    let data = gen_synthetic_lowdim(t, 0)?;
    let config = PipelineConfig {
        methods: vec![method],
        ..Default::default()
    };
    let fitted = fit_pipeline(&data, &config)?;
    let grid = default_dose_grid(&data, 100)?;
    let curve = fitted.curve(method, grid.as_ref())?;
    let a: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
    let truth = true_dose_response(&a, 1_000_000, 1)?;
    let parts = |v: &Option<Vec<f64>>| v.clone().expect("doubly robust curve has every part");
    let (t1, t2, t3, dr) = (parts(&curve.theta1), parts(&curve.theta2), parts(&curve.theta3), parts(&curve.theta_dr));
    println!("{:>7} {:>8} {:>8} {:>8} {:>8} {:>8}", "a", "truth", "theta1", "theta2", "theta3", "dr");
    for k in (0..a.len()).step_by(10) {
        println!("{:7.3} {:8.4} {:8.4} {:8.4} {:8.4} {:8.4}", a[k], truth.theta[k], t1[k], t2[k], t3[k], dr[k]);
    }
    println!("\n{method} MSE {:.4}; identity residual {:e}", mse(&curve, &truth)?, curve.identity_residual());
    Ok(())
}
