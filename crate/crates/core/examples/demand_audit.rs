//! Superpose the scaled networks of every antipodal commodity and every subcube pair,
//! and compare the per-edge demand with the closed forms.
//!
//! Run with `cargo run --example demand_audit -- 9 7`.

use cubeflow::netscale::{
    audit_antipodal_superposition, audit_subcube_superposition, subcube_identity, ScalingParams,
    SubcubeAuditOptions,
};
use cubeflow::{CapacityNetwork, Cube};

fn main() -> cubeflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(9);
    let m: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7.0);
    let net = CapacityNetwork::sample(&"uniform01".parse()?, Cube::new(d)?, 3)?;
    let params = ScalingParams { m, ..ScalingParams::default() };

    let audit = audit_antipodal_superposition(&net, &params)?;
    let expected = 1.0 + audit.epsilon_d;
    let worst = audit
        .demand
        .iter()
        .zip(net.capacities())
        .filter(|(_, &c)| c > 0.0)
        .map(|(&dem, &c)| ((dem / c) - expected).abs() / expected)
        .fold(0.0, f64::max);
    println!("antipodal: ell = {}, eps_d = {:.6}", audit.ell, audit.epsilon_d);
    println!("  every edge carries demand (1 + eps_d)·c_e; worst relative deviation {worst:.2e}");

    let sub = audit_subcube_superposition(&net, &params, SubcubeAuditOptions { far_only: false, middle_only: false })?;
    println!(
        "subcube pairs: multiplier {:.6}, closed form {:.6} ({} enumeration)",
        sub.multiplier,
        subcube_identity(d),
        if sub.exhaustive { "exhaustive" } else { "per-coordinate" }
    );
    let far = audit_subcube_superposition(&net, &params, SubcubeAuditOptions { far_only: true, middle_only: true })?;
    println!("far pairs, middle layers only: multiplier {:.6}", far.multiplier);
    Ok(())
}
