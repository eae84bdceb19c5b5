//! Fit the KAP treatment bridge and evaluate it on a few proxy values.
//!
//! cargo run --release --example treatment_bridge -- [t]

use proxal::data::{gen_synthetic_lowdim, true_dose_response};
use proxal::doubly_robust::MethodTag;
use proxal::eval::default_dose_grid;
use proxal::pipeline::{fit_pipeline, PipelineConfig};

fn main() -> proxal::Result<()> {
    let t = std::env::args().nth(1).map_or(1000, |s| s.parse().expect("t"));
    let data = gen_synthetic_lowdim(t, 0)?;
    let config = PipelineConfig {
        methods: vec![MethodTag::Kap],
        ..Default::default()
    };
    let fitted = fit_pipeline(&data, &config)?;
    let kap = fitted.kap.as_ref().expect("kap requested");
    println!("lambda_phi1 {:.1e}, lambda_phi2 {:.1e}", kap.lambda_phi1, kap.lambda_phi2);
    println!("\nphi(z_i, a_i) on the first samples:");
    for i in 0..5 {
        let z = [data.z[(i, 0)], data.z[(i, 1)]];
        println!("  a = {:7.3}  phi = {:8.4}", data.a[(i, 0)], kap.eval(&z, &[data.a[(i, 0)]])?);
    }
    let grid = default_dose_grid(&data, 9)?;
    let a: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
    let truth = true_dose_response(&a, 1_000_000, 1)?;
    let curve = fitted.curve(MethodTag::Kap, grid.as_ref())?;
    println!("\n{:>7} {:>8} {:>8}", "a", "truth", "kap");
    for k in 0..a.len() {
        println!("{:7.3} {:8.4} {:8.4}", a[k], truth.theta[k], curve.estimate()[k]);
    }
    Ok(())
}
