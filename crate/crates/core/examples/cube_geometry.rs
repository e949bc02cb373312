//! Layers, edge indexing, neighbourhood matchings and subcube boundary sets of Q^d.
//!
//! Run with `cargo run --example cube_geometry -- 6`.

use cubeflow::hypercube::{binomial, distance};
use cubeflow::Cube;

fn main() -> cubeflow::Result<()> {
    let d: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let cube = Cube::new(d)?;
    println!("Q^{d}: {} vertices, {} edges", cube.vertex_count(), cube.edge_count());

    println!("\nlayer  |V_m|  |E_m|");
    for m in 0..=d {
        let sizes = cube.layer_sizes(m)?;
        let edges = sizes.edges.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
        println!("{m:>5}  {:>5}  {edges:>5}", sizes.vertices);
        assert_eq!(sizes.vertices, binomial(d, m));
    }

    let u = 0b000101;
    println!("\nantipode of {u:0w$b} is {:0w$b}", cube.antipode(u), w = d as usize);

    let e = cube.edge_at(7);
    println!("edge 7 joins {} and {} along dimension {}", e.lower, e.upper(), e.dim);
    assert_eq!(cube.edge_index(e), 7);

    let (a, b) = (0, 1);
    println!("\nthree-paths around the edge {a}-{b}:");
    for (w1, w2) in cube.neighborhood_matching(a, b)? {
        println!("  {a} - {w1} - {w2} - {b}");
    }

    let v = 0b111100 & cube.full_mask();
    let sub = cube.subcube(u, v)?;
    println!("\nsubcube Q({u}, {v}) has dimension {} = d({u}, {v}) = {}", sub.k, distance(u, v));
    for ell in 0..=sub.k {
        println!("  S_u at distance {ell}: {:?}", cube.boundary_set(u, v, ell)?);
    }
    Ok(())
}
