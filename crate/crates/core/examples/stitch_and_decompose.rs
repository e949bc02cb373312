//! Repair a slightly improper flow by stitching, then decompose the result into
//! paths and cycles and recombine it.
//!
//! Run with `cargo run --example stitch_and_decompose`.

use cubeflow::flowcore::{balance_report, decompose, stitch, DirectedFlow};
use cubeflow::Cube;

fn main() -> cubeflow::Result<()> {
    let cube = Cube::new(4)?;
    let (s, t) = (0, cube.antipode(0));

    // Four disjoint geodesics of 0.25 each, then a leak: 0.02 stops at vertex 3
    // and 0.01 more enters the sink from nowhere.
    let mut f = DirectedFlow::zero(cube);
    for order in [[0, 1, 2, 3], [1, 2, 3, 0], [2, 3, 0, 1], [3, 0, 1, 2]] {
        let mut path = vec![s];
        let mut x = s;
        for j in order {
            x ^= 1 << j;
            path.push(x);
        }
        f.add_path(&path, 0.25);
    }
    f.add_path(&[0, 1, 3], 0.02);
    f.add_path(&[14, 15], 0.01);
    f.add_path(&[0, 2, 6, 4, 0], 0.05);

    let before = balance_report(&f, &[s], &[t])?;
    println!(
        "before: size {:.3}, volume {:.3}, interior imbalance {:.3}, deviation {:.3}",
        before.size, before.volume, before.interior_imbalance, before.boundary_deviation
    );
    let theta = before.required_theta().max(1e-3);
    let out = stitch(&f, &[s], &[t], theta)?;
    println!(
        "stitched at theta = {theta:.4}: volume {:.4}, deleted {:.4}, guarantees hold: {}",
        out.after.volume,
        out.deleted,
        out.checks.all()
    );

    let dec = decompose(&out.flow, &[s], &[t])?;
    println!("decomposition: {} paths (volume {:.4}), {} cycles", dec.paths.len(), dec.path_volume(), dec.cycles.len());
    for p in dec.paths.iter().take(4) {
        println!("  {:.4} along {:?}", p.value, p.vertices);
    }
    let back = dec.recombine(cube);
    println!("recombination error {:.1e}", back.max_difference(&out.flow));
    Ok(())
}
