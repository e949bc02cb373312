//! Superpose every commodity of a uniform problem, audit the joint capacity use and
//! rescale to a certified uniform volume.
//!
//! Run with `cargo run --example uniform_solve -- 7 0.75`.

use cubeflow::assemble::{solve_uniform, PipelineParams, SolveOptions, UniformMode};
use cubeflow::layercross::MiddleMethod;
use cubeflow::oracle::bounds::{upper_bounds, PairSet};
use cubeflow::{CapacityDistribution, CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let p: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.75);
    let net = CapacityNetwork::sample(&CapacityDistribution::bernoulli(p)?, Cube::new(d)?, 1)?;
    let mut params = PipelineParams::default();
    params.middle.method = MiddleMethod::Maxflow;

    for (mode, pairs) in [(UniformMode::Opp, PairSet::Opp), (UniformMode::All, PairSet::All)] {
        let sol = solve_uniform(&net, mode, &params, &SolveOptions::default())?;
        let bound = upper_bounds(&net, &pairs)?.bound;
        println!(
            "{mode:?}: {} commodities, {} failed, phi = {:.4} (raw {:.4}, audit ratio {:.3}) <= bound {:.4}",
            sol.commodity_count,
            sol.failures.len(),
            sol.phi,
            sol.phi_raw,
            sol.audit_ratio,
            bound
        );
        if mode == UniformMode::All {
            println!("  2^(d-1)·phi = {:.4}", sol.phi * 2f64.powi(d as i32 - 1));
        }
        for f in sol.failures.iter().take(3) {
            println!("  failed ({}, {}): {}", f.u, f.v, f.message);
        }
    }
    Ok(())
}
