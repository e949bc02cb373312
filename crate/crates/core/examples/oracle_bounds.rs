//! Upper bounds, the approximate concurrent-flow oracle, and the exact small-cube LP.
//!
//! Run with `cargo run --example oracle_bounds -- 8`.

use cubeflow::oracle::bounds::{upper_bounds, PairSet};
use cubeflow::oracle::concurrent::{max_concurrent_value, ConcurrentParams};
use cubeflow::oracle::lp::exact_concurrent;
use cubeflow::{CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let d: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let dist = "bernoulli:0.75".parse()?;
    let net = CapacityNetwork::sample(&dist, Cube::new(d)?, 1)?;
    let b = upper_bounds(&net, &PairSet::Opp)?;
    let r = max_concurrent_value(&net, &PairSet::Opp, &ConcurrentParams::default())?;
    println!(
        "d = {d} opp: phi_hat = {:.4}, dual bound = {:.4}, cut bound c_av = {:.4} ({} passes, certified {})",
        r.phi_hat, r.dual_bound, b.c_av, r.passes, r.certified
    );

    println!("\nexact LP against the oracle on Q^3:");
    for seed in 1..=5 {
        let small = CapacityNetwork::sample(&"uniform01".parse()?, Cube::new(3)?, seed)?;
        for pairs in [PairSet::Opp, PairSet::All] {
            let exact = exact_concurrent(&small, &pairs)?;
            let approx = max_concurrent_value(&small, &pairs, &ConcurrentParams::default())?;
            println!(
                "  seed {seed} {:<4} exact {:.5}  oracle {:.5}  gap {:.2}%",
                format!("{pairs:?}").to_lowercase(),
                exact.phi,
                approx.phi_hat,
                100.0 * (1.0 - approx.phi_hat / exact.phi)
            );
        }
    }
    Ok(())
}
