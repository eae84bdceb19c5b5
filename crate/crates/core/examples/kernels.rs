//! Median-heuristic lengthscales and small Gram matrices for each kernel family.
//!
//! cargo run --release --example kernels

use proxal::data::gen_synthetic_lowdim;
use proxal::kernels::{columnwise_median_heuristic, median_heuristic, Kernel};

fn main() -> proxal::Result<()> {
    let data = gen_synthetic_lowdim(300, 2)?;
    let l_a = median_heuristic(data.a.as_ref(), 0.5)?;
    let l_w = columnwise_median_heuristic(data.w.as_ref(), 0.5)?;
    println!("lengthscale for a: {l_a:.4}");
    println!("columnwise lengthscales for w: {l_w:.4?}");
    for q in [0.1, 0.5, 0.9] {
        println!("quantile {q}: {:.4}", median_heuristic(data.a.as_ref(), q)?);
    }
    let x = data.w.subrows(0, 4);
    let kernels = [
        ("gaussian", Kernel::gaussian(l_a)?),
        ("columnwise", Kernel::columnwise_gaussian(l_w)?),
        ("matern p=0", Kernel::matern(l_a, 0)?),
        ("matern p=2", Kernel::matern(l_a, 2)?),
    ];
    for (name, k) in kernels {
        let g = k.gram_sym(x)?;
        println!("\n{name}");
        for i in 0..4 {
            println!("  {:.4} {:.4} {:.4} {:.4}", g[(i, 0)], g[(i, 1)], g[(i, 2)], g[(i, 3)]);
        }
    }
    Ok(())
}
