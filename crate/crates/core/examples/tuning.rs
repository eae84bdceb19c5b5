//! Closed-form leave-one-out and validation curves for every regularizer of a
//! DRKPV fit.
//!
//! cargo run --release --example tuning -- [t]

use proxal::data::gen_synthetic_lowdim;
use proxal::doubly_robust::MethodTag;
use proxal::pipeline::{fit_pipeline, PipelineConfig};
use proxal::ridge::LoocvReport;

fn show(name: &str, report: Option<&LoocvReport>) {
    let Some(r) = report else { return };
    println!("{name}: selected {:.1e}", r.selected);
    for (l, loss) in r.grid.iter().zip(&r.losses).step_by(3) {
        println!("  {l:9.1e} {loss:12.6}");
    }
}

fn main() -> proxal::Result<()> {
    let t = std::env::args().nth(1).map_or(500, |s| s.parse().expect("t"));
    let data = gen_synthetic_lowdim(t, 0)?;
    let config = PipelineConfig {
        methods: vec![MethodTag::Drkpv],
        ..Default::default()
    };
    let fitted = fit_pipeline(&data, &config)?;
    let r = &fitted.tuning;
    show("h1 (leave-one-out)", r.kpv.as_ref().and_then(|k| k.h1.as_ref()));
    show("h2 (validation)", r.kpv.as_ref().and_then(|k| k.h2.as_ref()));
    show("phi1 (leave-one-out)", r.kap.as_ref().and_then(|k| k.phi1.as_ref()));
    show("phi2 (penalized validation)", r.kap.as_ref().and_then(|k| k.phi2.as_ref()));
    show("phi3 (leave-one-out)", r.phi3.as_ref());
    show("dr (leave-one-out)", r.dr.as_ref());
    Ok(())
}
