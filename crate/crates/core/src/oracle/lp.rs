//! Exact uniform concurrent flow on very small cubes by path enumeration and simplex.

use serde::{Deserialize, Serialize};

use crate::capacities::CapacityNetwork;
use crate::error::{Error, Result};
use crate::flowcore::DirectedFlow;
use crate::hypercube::{Cube, Vertex};
use crate::oracle::bounds::PairSet;

/// Largest dimension handled by the path formulation.
pub const LP_MAX_D: u32 = 3;

const EPS: f64 = 1e-11;

/// All simple paths from `s` to `t`.
pub fn simple_paths(cube: Cube, s: Vertex, t: Vertex) -> Vec<Vec<Vertex>> {
    fn walk(cube: Cube, t: Vertex, path: &mut Vec<Vertex>, seen: &mut [bool], out: &mut Vec<Vec<Vertex>>) {
        let x = *path.last().unwrap();
        if x == t {
            out.push(path.clone());
            return;
        }
        for j in 0..cube.dim() {
            let y = x ^ (1 << j);
            if !seen[y as usize] {
                seen[y as usize] = true;
                path.push(y);
                walk(cube, t, path, seen, out);
                path.pop();
                seen[y as usize] = false;
            }
        }
    }
    let mut seen = vec![false; cube.vertex_count()];
    seen[s as usize] = true;
    let mut out = Vec::new();
    walk(cube, t, &mut vec![s], &mut seen, &mut out);
    out
}

/// Outcome of `maximize c·x subject to A x ≤ b, x ≥ 0` with b ≥ 0.
#[derive(Clone, Debug)]
pub struct SimplexSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

/// Dense tableau simplex with Bland's rule; `b` must be nonnegative.
pub fn simplex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<SimplexSolution> {
    let rows = a.len();
    let n = c.len();
    if b.len() != rows || a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter("inconsistent LP dimensions".into()));
    }
    if b.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::InvalidParameter("right-hand side must be nonnegative".into()));
    }
    let width = n + rows + 1;
    let mut t = vec![vec![0.0; width]; rows + 1];
    for i in 0..rows {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][n + i] = 1.0;
        t[i][width - 1] = b[i];
    }
    for j in 0..n {
        t[rows][j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + rows).collect();
    let mut pivots = 0;
    loop {
        let Some(enter) = (0..n + rows).find(|&j| t[rows][j] < -EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            if t[i][enter] > EPS {
                let ratio = t[i][width - 1] / t[i][enter];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, r)) if ratio < r - EPS || (ratio <= r + EPS && basis[i] < basis[k]) => Some((i, ratio)),
                    keep => keep,
                };
            }
        }
        let Some((p, _)) = leave else {
            return Err(Error::InvalidParameter("LP is unbounded".into()));
        };
        let pv = t[p][enter];
        for v in t[p].iter_mut() {
            *v /= pv;
        }
        let pivot_row = t[p].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != p {
                let f = row[enter];
                if f != 0.0 {
                    for (v, w) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * w;
                    }
                }
            }
        }
        basis[p] = enter;
        pivots += 1;
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[i][width - 1];
        }
    }
    Ok(SimplexSolution { value: t[rows][width - 1], x, pivots })
}

#[derive(Clone, Debug)]
pub struct ExactConcurrent {
    pub phi: f64,
    pub path_count: usize,
    pub pivots: usize,
    pub flows: Vec<((Vertex, Vertex), DirectedFlow)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExactSummary {
    pub phi: f64,
    pub path_count: usize,
    pub pivots: usize,
}

impl ExactConcurrent {
    pub fn summary(&self) -> ExactSummary {
        ExactSummary { phi: self.phi, path_count: self.path_count, pivots: self.pivots }
    }
}

/// Exact Φ for `pairs` on a cube of dimension at most [`LP_MAX_D`].
pub fn exact_concurrent(base: &CapacityNetwork, pairs: &PairSet) -> Result<ExactConcurrent> {
    let cube = base.cube();
    if cube.dim() > LP_MAX_D {
        return Err(Error::BudgetExceeded(format!(
            "exact LP oracle supports d <= {LP_MAX_D}, got d = {}",
            cube.dim()
        )));
    }
    let list = pairs.pairs(cube)?;
    if list.is_empty() {
        return Err(Error::InvalidParameter("pair set is empty".into()));
    }
    let m = cube.edge_count();
    let paths: Vec<Vec<Vec<Vertex>>> = list.iter().map(|&(s, t)| simple_paths(cube, s, t)).collect();
    let path_count: usize = paths.iter().map(Vec::len).sum();
    // Column 0 is φ, then one column per path.
    let cols = 1 + path_count;
    let mut a = vec![vec![0.0; cols]; m + list.len()];
    let mut b = vec![0.0; m + list.len()];
    b[..m].copy_from_slice(base.capacities());
    let mut col = 1;
    for (j, group) in paths.iter().enumerate() {
        a[m + j][0] = 1.0;
        for path in group {
            for w in path.windows(2) {
                let e = cube.edge_index(cube.edge_between(w[0], w[1])?);
                a[e][col] = 1.0;
            }
            a[m + j][col] = -1.0;
            col += 1;
        }
    }
    let mut c = vec![0.0; cols];
    c[0] = 1.0;
    let sol = simplex_max(&a, &b, &c)?;
    let mut flows = Vec::with_capacity(list.len());
    let mut col = 1;
    for (j, group) in paths.iter().enumerate() {
        let mut f = DirectedFlow::zero(cube);
        let mut routed = 0.0;
        for path in group {
            let x = sol.x[col];
            if x > 0.0 {
                f.add_path(path, x);
                routed += x;
            }
            col += 1;
        }
        // Trim any surplus over φ so each commodity carries exactly φ.
        if routed > sol.value && routed > 0.0 {
            f.scale(sol.value / routed);
        }
        flows.push((list[j], f));
    }
    Ok(ExactConcurrent { phi: sol.value, path_count, pivots: sol.pivots, flows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::balance_report;

    #[test]
    fn path_counts() {
        let q2 = Cube::new(2).unwrap();
        assert_eq!(simple_paths(q2, 0, 3).len(), 2);
        assert_eq!(simple_paths(q2, 0, 1).len(), 2);
        // Q3 antipodal simple paths: 6 geodesics, 6 of length 5, 6 of length 7.
        assert_eq!(simple_paths(Cube::new(3).unwrap(), 0, 7).len(), 18);
    }

    #[test]
    fn simplex_small() {
        // max x + y s.t. x + 2y ≤ 4, 3x + y ≤ 6  ->  (8/5, 6/5), value 14/5
        let s = simplex_max(&[vec![1.0, 2.0], vec![3.0, 1.0]], &[4.0, 6.0], &[1.0, 1.0]).unwrap();
        assert!((s.value - 2.8).abs() < 1e-12);
        assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_values() {
        let net = CapacityNetwork::constant(Cube::new(2).unwrap(), 1.0);
        assert!((exact_concurrent(&net, &PairSet::Opp).unwrap().phi - 1.0).abs() < 1e-12);
        let net = CapacityNetwork::constant(Cube::new(3).unwrap(), 1.0);
        let r = exact_concurrent(&net, &PairSet::Opp).unwrap();
        assert!((r.phi - 1.0).abs() < 1e-9);
        for ((u, v), f) in &r.flows {
            let b = balance_report(f, &[*u], &[*v]).unwrap();
            assert!(b.is_proper() && (b.volume - r.phi).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_large_cube() {
        let net = CapacityNetwork::constant(Cube::new(4).unwrap(), 1.0);
        assert!(matches!(exact_concurrent(&net, &PairSet::Opp), Err(Error::BudgetExceeded(_))));
    }
}
