//! Build single antipodal commodities end to end: escape, middle, reversed escape, stitch.
//!
//! Run with `cargo run --example antipodal_flow -- 8 0.75`.

use cubeflow::assemble::{Pipeline, PipelineParams};
use cubeflow::layercross::MiddleMethod;
use cubeflow::{CapacityDistribution, CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let p: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.75);
    let net = CapacityNetwork::sample(&CapacityDistribution::bernoulli(p)?, Cube::new(d)?, 1)?;

    for method in [MiddleMethod::Crossing, MiddleMethod::Maxflow] {
        let mut params = PipelineParams::default();
        params.middle.method = method;
        let pipeline = Pipeline::new(&net, params)?;
        println!("{method:?} middle, ell = {}:", pipeline.ell());
        for u in [0, 1, 5] {
            match pipeline.build_antipodal(u) {
                Ok(c) => println!(
                    "  {u} -> {}: volume {:.4} (middle {:.4}, stitch theta {:.2e}, scaled-capacity ratio {:.3})",
                    c.spec.v,
                    c.volume,
                    c.stages.middle_volume,
                    c.stages.stitch_theta,
                    c.max_scaled_ratio.unwrap_or(f64::NAN)
                ),
                Err(e) => println!("  {u}: {e}"),
            }
        }
    }
    Ok(())
}
