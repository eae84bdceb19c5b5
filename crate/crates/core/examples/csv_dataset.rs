//! Write a dataset to CSV, read it back with an explicit column schema and fit
//! DRPMMR on it.
//!
//! cargo run --release --example csv_dataset -- [path]

use proxal::data::{gen_synthetic_lowdim, load_csv, write_csv, CsvSchema};
use proxal::doubly_robust::MethodTag;
use proxal::faer::Mat;
use proxal::pipeline::{fit_pipeline, PipelineConfig};

fn main() -> proxal::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("proxal_example.csv"), Into::into);
    write_csv(&gen_synthetic_lowdim(400, 5)?, &path)?;
    let header = std::fs::read_to_string(&path).map_err(|e| proxal::Error::Io { path: path.clone(), source: e })?;
    println!("wrote {}; header {}", path.display(), header.lines().next().unwrap_or_default());
    let schema = CsvSchema {
        y: "y".into(),
        a: vec!["a".into()],
        z: vec!["z1".into(), "z2".into()],
        w: vec!["w1".into(), "w2".into()],
    };
    let data = load_csv(&path, Some(&schema))?;
    let config = PipelineConfig {
        methods: vec![MethodTag::Drpmmr],
        ..Default::default()
    };
    let fitted = fit_pipeline(&data, &config)?;
    let grid = Mat::from_fn(5, 1, |i, _| -0.5 + 0.5 * i as f64);
    let curve = fitted.curve(MethodTag::Drpmmr, grid.as_ref())?;
    for (a, v) in curve.a_grid.iter().zip(curve.estimate()) {
        println!("a = {:5.2}: {v:.4}", a[0]);
    }
    Ok(())
}
