//! Build the middle flow of one antipodal commodity layer by layer, with both the
//! thinning crossings and the exact max-flow alternative, and print per-layer diagnostics.
//!
//! Run with `cargo run --example layer_crossing -- 9 1.0`.

use cubeflow::assemble::{Pipeline, PipelineParams};
use cubeflow::layercross::{build_middle, write_layer_diagnostics, MiddleMethod};
use cubeflow::netscale::ScaledNetwork;
use cubeflow::{CapacityDistribution, CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(9);
    let p: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let net = CapacityNetwork::sample(&CapacityDistribution::bernoulli(p)?, Cube::new(d)?, 1)?;
    let params = PipelineParams::default();
    let pipeline = Pipeline::new(&net, params)?;
    let scaled = ScaledNetwork::antipodal(&net, 0, params.scaling)?;

    for method in [MiddleMethod::Crossing, MiddleMethod::Maxflow] {
        let middle_params = cubeflow::layercross::MiddleParams { method, ..params.middle };
        match build_middle(&scaled, pipeline.model(), &middle_params, params.seed) {
            Ok(out) => {
                println!(
                    "{method:?}: volume {:.4} of target {:.4}, mu {:.2e}, theta {:.3}, max utilization {:.3}",
                    out.volume, out.target_volume, out.mu, out.theta, out.max_utilization
                );
                write_layer_diagnostics(std::io::stdout().lock(), &out.layers)?;
            }
            Err(e) => println!("{method:?}: {e}"),
        }
    }
    Ok(())
}
