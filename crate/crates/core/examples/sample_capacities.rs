//! Sample a random-capacity network, save it in both formats, and inspect the
//! truncation and discretization couplings of its capacity law.
//!
//! Run with `cargo run --example sample_capacities -- discrete:0.5@0.3,1@0.6 8`.

use cubeflow::capacities::coupled_reductions;
use cubeflow::harness::io::{parse_network, write_network, Format};
use cubeflow::{CapacityDistribution, CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dist: CapacityDistribution = args.next().unwrap_or_else(|| "bernoulli:0.75".into()).parse()?;
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let cube = Cube::new(d)?;
    let net = CapacityNetwork::sample(&dist, cube, 1)?;

    println!("law {dist}: E[C] = {:.4}, Pr[C > 0] = {:.4}", dist.mean(), dist.prob_positive());
    println!("sample d = {d}: c_av = {:.4}, open fraction = {:.4}", net.average(), net.open_fraction());

    let t = dist.truncate_to_bernoulli()?;
    println!("truncation: C* = {:.4}·1{{C >= {:.4}}}, Pr = {:.4}", t.c_star, t.c_star, t.p_star);
    let fine = dist.discretize(0.1)?;
    println!("discretized at eps = 0.1: {fine} (mean {:.4})", fine.mean());

    let coupling = coupled_reductions(&dist, cube, 1, 0.1)?;
    println!(
        "coupled on the same draws: {} truncation and {} discretization violations, mean gap {:.4}",
        coupling.truncation_violations,
        coupling.discretization_violations,
        coupling.mean - coupling.discrete_mean
    );

    for format in [Format::Json, Format::Csv] {
        let mut buf = Vec::new();
        write_network(&net, format, &mut buf)?;
        let back = parse_network(std::str::from_utf8(&buf).expect("utf-8"))?;
        assert_eq!(back, net);
        println!("{format:?}: {} bytes, round trip exact", buf.len());
    }
    Ok(())
}
