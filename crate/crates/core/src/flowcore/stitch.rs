use serde::{Deserialize, Serialize};

use super::decompose::{cube_arcs, decompose_arcs, dust_tolerance, Arc};
use super::flow::{balance_from_outflows, BalanceReport, DirectedFlow, Terminals};
use crate::error::{Error, Result};
use crate::hypercube::Vertex;

/// Largest admissible θ (exclusive).
pub const THETA_LIMIT: f64 = 1.0 / 9.0;

/// Result of repairing an improper flow.
#[derive(Clone, Debug)]
pub struct StitchOutcome {
    pub flow: DirectedFlow,
    pub theta: f64,
    /// Balance of the input flow.
    pub before: BalanceReport,
    /// Balance of the repaired flow.
    pub after: BalanceReport,
    /// Volume of the deleted x→y paths.
    pub deleted: f64,
    pub checks: StitchChecks,
}

/// The three guarantees of the repair, as measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StitchChecks {
    /// 0 ≤ g ≤ f on every arc.
    pub dominated: bool,
    /// vol(g) ≥ (1−2θ)·size(f).
    pub volume: bool,
    /// deviation(g) ≤ 9θ·vol(g).
    pub deviation: bool,
}

impl StitchChecks {
    pub fn all(&self) -> bool {
        self.dominated && self.volume && self.deviation
    }
}

/// Repair `f` into a proper S→T flow.
///
/// A super-source x feeds every vertex with positive net outflow and a super-sink y
/// drains every vertex with negative net outflow; the augmented x→y flow is decomposed
/// and only paths entering at S and leaving at T are kept.
pub fn stitch(f: &DirectedFlow, s: &[Vertex], t: &[Vertex], theta: f64) -> Result<StitchOutcome> {
    let cube = f.cube();
    let terminals = Terminals::new(cube, s, t)?;
    if !(theta >= 0.0 && theta < THETA_LIMIT) {
        return Err(Error::InvalidParameter(format!("theta = {theta} must lie in [0, 1/9)")));
    }
    let outflow = f.net_outflows();
    let before = balance_from_outflows(&outflow, &terminals);
    let slack = 1e-12 * before.size;
    if before.interior_imbalance > theta * before.size + slack || before.boundary_deviation > theta * before.size + slack
    {
        return Err(Error::StitchHypothesis {
            interior_ratio: before.interior_imbalance / before.size,
            deviation_ratio: before.boundary_deviation / before.size,
            theta,
        });
    }

    let n = cube.vertex_count();
    let (x, y) = (n, n + 1);
    let (mut arcs, mut values) = cube_arcs(f);
    let cube_arc_count = arcs.len();
    let super_key = 1u64 << 40;
    for (v, &o) in outflow.iter().enumerate() {
        if o > 0.0 {
            arcs.push(Arc { from: x, to: v, key: super_key + v as u64 });
            values.push(o);
        } else if o < 0.0 {
            arcs.push(Arc { from: v, to: y, key: super_key + v as u64 });
            values.push(-o);
        }
    }
    let total: f64 = outflow.iter().filter(|o| **o > 0.0).sum();
    let mut excess = vec![0.0; n + 2];
    excess[x] = total;
    excess[y] = -total;
    let tol = dust_tolerance(f);
    let (paths, _cycles) = decompose_arcs(n + 2, &arcs, values, excess, tol);

    let mut g = DirectedFlow::zero(cube);
    let mut deleted = 0.0;
    for p in &paths {
        let first = arcs[p.arcs[0]];
        let last = arcs[*p.arcs.last().unwrap()];
        let keep = terminals.is_source(first.to as Vertex) && terminals.is_sink(last.from as Vertex);
        if !keep {
            deleted += p.value;
            continue;
        }
        for &i in &p.arcs[1..p.arcs.len() - 1] {
            debug_assert!(i < cube_arc_count);
            let a = arcs[i];
            g.push(a.from as Vertex, a.to as Vertex, p.value);
        }
    }

    let after = balance_from_outflows(&g.net_outflows(), &terminals);
    let dominated = g.signed_values().iter().zip(f.signed_values()).all(|(gv, fv)| {
        let eps = 1e-12 * fv.abs().max(tol);
        (*gv == 0.0) || (gv.signum() == fv.signum() && gv.abs() <= fv.abs() + eps)
    });
    let rel = 1e-9 * before.size;
    let checks = StitchChecks {
        dominated,
        volume: after.volume >= (1.0 - 2.0 * theta) * before.size - rel,
        deviation: after.boundary_deviation <= 9.0 * theta * after.volume + rel,
    };
    Ok(StitchOutcome { flow: g, theta, before, after, deleted, checks })
}

/// Stitch with the smallest θ the flow admits; errors when that θ reaches 1/9.
pub fn stitch_auto(f: &DirectedFlow, s: &[Vertex], t: &[Vertex]) -> Result<StitchOutcome> {
    let terminals = Terminals::new(f.cube(), s, t)?;
    let before = balance_from_outflows(&f.net_outflows(), &terminals);
    let theta = before.required_theta();
    if theta >= THETA_LIMIT {
        return Err(Error::StitchHypothesis {
            interior_ratio: before.interior_imbalance / before.size,
            deviation_ratio: before.boundary_deviation / before.size,
            theta,
        });
    }
    stitch(f, s, t, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::Cube;

    #[test]
    fn proper_balanced_unchanged() {
        let c = Cube::new(3).unwrap();
        let mut f = DirectedFlow::zero(c);
        f.add_path(&[0, 1, 3, 7], 0.5);
        f.add_path(&[0, 4, 6, 7], 0.5);
        let out = stitch(&f, &[0], &[7], 0.05).unwrap();
        assert!(out.flow.max_difference(&f) < 1e-15);
        assert!((out.after.volume - out.before.size).abs() < 1e-15);
        assert!(out.checks.all());
    }

    #[test]
    fn leaky_path() {
        let c = Cube::new(2).unwrap();
        let mut f = DirectedFlow::zero(c);
        f.push(0b00, 0b01, 1.0);
        f.push(0b01, 0b11, 0.9);
        let out = stitch(&f, &[0b00], &[0b11], 0.1).unwrap();
        assert!((out.after.volume - 0.9).abs() < 1e-12);
        assert!((out.flow.get(0b00, 0b01) - 0.9).abs() < 1e-12);
        assert!((out.flow.get(0b01, 0b11) - 0.9).abs() < 1e-12);
        assert!(out.checks.all());
    }

    #[test]
    fn sink_surplus_is_deleted() {
        // Balanced 0 → V_2(0) in Q^5, then sink 0b00011 forwards slightly more than it
        // receives to the interior vertex 0b00111.
        let c = Cube::new(5).unwrap();
        let sinks = c.layer_vertices(0, 2);
        let mut f = DirectedFlow::zero(c);
        for &w in &sinks {
            let (i, j) = (w.trailing_zeros(), 31 - w.leading_zeros());
            f.add_path(&[0, 1 << i, w], 0.05);
            f.add_path(&[0, 1 << j, w], 0.05);
        }
        let (t, b) = (0b00011, 0b00111);
        f.push(t, b, 0.101);
        assert!(f.net_outflow(t) > 0.0);
        let out = stitch(&f, &[0], &sinks, 0.105).unwrap();
        assert_eq!(out.flow.get(t, b), 0.0);
        assert!(out.deleted >= 0.001 - 1e-12);
        assert!(out.checks.all());
    }

    #[test]
    fn hypothesis_violation_reports_theta() {
        let c = Cube::new(2).unwrap();
        let mut f = DirectedFlow::zero(c);
        f.push(0b00, 0b01, 1.0);
        f.push(0b01, 0b11, 0.5);
        match stitch(&f, &[0b00], &[0b11], 0.1) {
            Err(Error::StitchHypothesis { interior_ratio, .. }) => assert!(interior_ratio > 0.1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(stitch(&f, &[0], &[3], 0.2).is_err());
    }
}
