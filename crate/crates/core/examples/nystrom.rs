//! Full kernels against Nyström landmarks on one large synthetic draw.
//!
//! cargo run --release --example nystrom -- [t] [landmarks]

use std::time::Instant;

use proxal::data::{gen_synthetic_lowdim, true_dose_response};
use proxal::doubly_robust::MethodTag;
use proxal::eval::{default_dose_grid, mse};
use proxal::pipeline::{fit_pipeline, Lambdas, PipelineConfig};

fn main() -> proxal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let t = args.get(1).map_or(3000, |s| s.parse().expect("t"));
    let p = args.get(2).map_or(300, |s| s.parse().expect("landmarks"));
    let data = gen_synthetic_lowdim(t, 0)?;
    let grid = default_dose_grid(&data, 100)?;
    let a: Vec<f64> = (0..grid.nrows()).map(|i| grid[(i, 0)]).collect();
    let truth = true_dose_response(&a, 1_000_000, 1)?;
    for nystrom in [None, Some(p)] {
        let config = PipelineConfig {
            methods: vec![MethodTag::Drkpv],
            lambdas: Lambdas::all(1e-3),
            nystrom,
            ..Default::default()
        };
        let clock = Instant::now();
        let fitted = fit_pipeline(&data, &config)?;
        let curve = fitted.curve(MethodTag::Drkpv, grid.as_ref())?;
        let label = nystrom.map_or("full".to_string(), |p| format!("p = {p}"));
        println!("{label:>8}: MSE {:.4} in {:.2}s", mse(&curve, &truth)?, clock.elapsed().as_secs_f64());
    }
    Ok(())
}
