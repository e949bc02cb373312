//! Classify α-local connectivity of a percolated cube and build a unit escape flow
//! from a well-connected vertex onto its shell.
//!
//! Run with `cargo run --example local_escape -- 10 0.75`.

use cubeflow::escape::{classify_local_connectivity, EscapeContext, OpenEdges};
use cubeflow::flowcore::balance_report;
use cubeflow::netscale::ScalingParams;
use cubeflow::{CapacityDistribution, CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let p: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.75);
    let alpha = 0.2;
    let net = CapacityNetwork::sample(&CapacityDistribution::bernoulli(p)?, Cube::new(d)?, 1)?;
    let open = OpenEdges::at_threshold(&net, 1.0);

    let report = classify_local_connectivity(&open, alpha)?;
    println!(
        "d = {d}, p = {p}: {} of {} vertices are poorly connected at alpha = {alpha} (T1 {}, T2 {}, T3 {})",
        report.poorly_connected().len(),
        net.cube().vertex_count(),
        report.t1.len(),
        report.t2.len(),
        report.t3.len()
    );

    let ell = ScalingParams::default().ell(d);
    let ctx = EscapeContext::new(open, alpha)?;
    let u = (0..net.cube().vertex_count() as u32)
        .find(|&u| ctx.propagate_to_shell(u, ell).is_ok())
        .expect("some vertex escapes");
    let plan = ctx.propagate_to_shell(u, ell)?;
    let b = balance_report(&plan.flow, &[u], &plan.shell)?;
    println!(
        "escape from {u} to radius {ell}: |S1| = {}, |S3| = {}, |S*| = {}, shell size {}",
        plan.s1.len(),
        plan.s3.len(),
        plan.s_star.len(),
        plan.shell.len()
    );
    println!("  volume {:.6}, mu {:.2e}, measured M1 = {:.3}, M = {:.3}", b.volume, b.mu, plan.m1_used, plan.m_used);
    Ok(())
}
