//! Exact identification checks on small discrete worlds, then a sampled fit
//! compared against the enumerated answer.
//!
//! cargo run --release --example discrete_oracle

use proxal::data::{split_stages, DiscreteToyWorld};
use proxal::eval::oracle_suite;
use proxal::kernels::{Kernel, KernelSet};
use proxal::outcome_bridge::kpv_fit;
use proxal::faer::Mat;

fn main() -> proxal::Result<()> {
    let report = oracle_suite(20, 1)?;
    let worst = report.worlds.iter().map(|w| w.max_deviation).fold(0.0, f64::max);
    println!("{} worlds, passed: {}, max deviation {worst:.1e}", report.worlds.len(), report.passed);

    // proxies that track the confounder closely keep the bridge systems well conditioned
    let proxy = |u: usize| if u == 0 { [0.97, 0.03] } else { [0.03, 0.97] };
    let world = DiscreteToyWorld {
        p_u: [0.5, 0.5],
        p_a_u: [[0.6, 0.4], [0.4, 0.6]],
        p_z_ua: [[proxy(0); 2], [proxy(1); 2]],
        p_w_u: [proxy(0), proxy(1)],
        y: [[0.2, -0.5], [0.9, 0.4]],
    };
    let h = world.outcome_bridge()?;
    let phi = world.treatment_bridge()?;
    println!("\nexact outcome bridge h(w, a): {h:.4?}");
    println!("exact treatment bridge phi(z, a): {phi:.4?}");
    let data = world.sample(2000, 1)?;
    let k = Kernel::gaussian(1.0)?;
    let kernels = KernelSet { a: k.clone(), z: k.clone(), w: k };
    let model = kpv_fit(&data, &split_stages(2000, 2)?, &kernels, 1e-4, 1e-4)?;
    let curve = model.dose_response(data.w.as_ref(), Mat::from_fn(2, 1, |i, _| i as f64).as_ref())?;
    for a in 0..2 {
        println!("a = {a}: theta {:.4}, KPV from 2000 draws {:.4}", world.theta(a), curve[a]);
    }
    Ok(())
}
