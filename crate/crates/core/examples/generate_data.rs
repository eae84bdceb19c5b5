//! Draw the synthetic benchmark and print a few rows with the true dose response.
//!
//! cargo run --release --example generate_data -- [t] [seed]

use proxal::data::{gen_synthetic_lowdim, true_dose_response};

fn main() -> proxal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let t = args.get(1).map_or(500, |s| s.parse().expect("t"));
    let seed = args.get(2).map_or(0, |s| s.parse().expect("seed"));
    let data = gen_synthetic_lowdim(t, seed)?;
    println!("{} samples; z has {} columns, w has {}", data.len(), data.z.ncols(), data.w.ncols());
    println!("{:>9} {:>9} {:>9} {:>9} {:>9} {:>9}", "y", "a", "z1", "z2", "w1", "w2");
    for i in 0..5.min(t) {
        println!(
            "{:9.4} {:9.4} {:9.4} {:9.4} {:9.4} {:9.4}",
            data.y[i], data.a[(i, 0)], data.z[(i, 0)], data.z[(i, 1)], data.w[(i, 0)], data.w[(i, 1)]
        );
    }
    let grid: Vec<f64> = (0..7).map(|k| -1.0 + k as f64 / 3.0).collect();
    let truth = true_dose_response(&grid, 1_000_000, 1)?;
    println!("\n{:>6} {:>9} {:>9}", "a", "theta", "std_err");
    for k in 0..grid.len() {
        println!("{:6.2} {:9.4} {:9.1e}", grid[k], truth.theta[k], truth.std_error[k]);
    }
    Ok(())
}
