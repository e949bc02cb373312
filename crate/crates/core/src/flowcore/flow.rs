use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{Cube, EdgeId, Vertex};
use crate::netscale::EdgeCapacity;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A flow on the cube stored as one signed value per undirected edge: positive means
/// lower → upper. Superposition cancels antiparallel parts automatically, so at most
/// one direction of each edge ever carries flow.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedFlow {
    cube: Cube,
    values: Vec<f64>,
}

impl DirectedFlow {
    pub fn zero(cube: Cube) -> Self {
        DirectedFlow { cube, values: vec![0.0; cube.edge_count()] }
    }

    pub fn from_signed(cube: Cube, values: Vec<f64>) -> Result<Self> {
        if values.len() != cube.edge_count() {
            return Err(Error::Format(format!("expected {} edge values, got {}", cube.edge_count(), values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("flow values must be finite".into()));
        }
        Ok(DirectedFlow { cube, values })
    }

    pub fn cube(&self) -> Cube {
        self.cube
    }

    /// Signed value per canonical edge index.
    pub fn signed_values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn signed(&self, edge: usize) -> f64 {
        self.values[edge]
    }

    /// f(from → to) ≥ 0 for adjacent vertices.
    pub fn get(&self, from: Vertex, to: Vertex) -> f64 {
        let diff = from ^ to;
        debug_assert_eq!(diff.count_ones(), 1);
        let dim = diff.trailing_zeros();
        let v = self.values[self.cube.edge_index_at(from, dim)];
        if from & diff == 0 {
            v.max(0.0)
        } else {
            (-v).max(0.0)
        }
    }

    /// Add `amount` on the arc from → to (negative amounts push the other way).
    #[inline]
    pub fn push(&mut self, from: Vertex, to: Vertex, amount: f64) {
        let diff = from ^ to;
        debug_assert_eq!(diff.count_ones(), 1);
        let dim = diff.trailing_zeros();
        let i = self.cube.edge_index_at(from, dim);
        if from & diff == 0 {
            self.values[i] += amount;
        } else {
            self.values[i] -= amount;
        }
    }

    /// Send `amount` along a walk of adjacent vertices.
    pub fn add_path(&mut self, path: &[Vertex], amount: f64) {
        for w in path.windows(2) {
            self.push(w[0], w[1], amount);
        }
    }

    /// self += factor·other.
    pub fn add_scaled(&mut self, other: &DirectedFlow, factor: f64) {
        debug_assert_eq!(self.cube, other.cube);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn scaled(&self, factor: f64) -> DirectedFlow {
        let mut f = self.clone();
        f.scale(factor);
        f
    }

    /// Same flow with every arc reversed.
    pub fn reversed(&self) -> DirectedFlow {
        self.scaled(-1.0)
    }

    /// Image under the cube automorphism x ↦ x ⊕ mask.
    pub fn translated(&self, mask: u32) -> DirectedFlow {
        let mut out = DirectedFlow::zero(self.cube);
        for (i, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                let e = self.cube.edge_at(i);
                out.push(e.lower ^ mask, e.upper() ^ mask, v);
            }
        }
        out
    }

    /// f⁺(x) = Σ_y f(x→y) − f(y→x).
    pub fn net_outflow(&self, x: Vertex) -> f64 {
        let mut out = 0.0;
        for j in 0..self.cube.dim() {
            let v = self.values[self.cube.edge_index_at(x, j)];
            if x & (1 << j) == 0 {
                out += v;
            } else {
                out -= v;
            }
        }
        out
    }

    /// f⁺ at every vertex.
    pub fn net_outflows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cube.vertex_count()];
        for (i, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                let e = self.cube.edge_at(i);
                out[e.lower as usize] += v;
                out[e.upper() as usize] -= v;
            }
        }
        out
    }

    /// Nonzero arcs as (from, to, value > 0), by edge index.
    pub fn arcs(&self) -> impl Iterator<Item = (Vertex, Vertex, f64)> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(i, &v)| {
            let e = self.cube.edge_at(i);
            if v > 0.0 {
                (e.lower, e.upper(), v)
            } else {
                (e.upper(), e.lower, -v)
            }
        })
    }

    pub fn support_len(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Largest per-edge difference to another flow.
    pub fn max_difference(&self, other: &DirectedFlow) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Set entries with |value| ≤ tol to zero.
    pub fn prune(&mut self, tol: f64) {
        self.values.iter_mut().filter(|v| v.abs() <= tol).for_each(|v| *v = 0.0);
    }
}

/// Source and sink sets with per-vertex roles.
#[derive(Clone, Debug)]
pub struct Terminals {
    pub sources: Vec<Vertex>,
    pub sinks: Vec<Vertex>,
    role: Vec<u8>,
}

pub(crate) const INTERIOR: u8 = 0;
pub(crate) const SOURCE: u8 = 1;
pub(crate) const SINK: u8 = 2;

impl Terminals {
    pub fn new(cube: Cube, sources: &[Vertex], sinks: &[Vertex]) -> Result<Self> {
        if sources.is_empty() || sinks.is_empty() {
            return Err(Error::BadTerminals);
        }
        let mut role = vec![INTERIOR; cube.vertex_count()];
        for &s in sources {
            cube.check_vertex(s)?;
            role[s as usize] = SOURCE;
        }
        for &t in sinks {
            cube.check_vertex(t)?;
            if role[t as usize] == SOURCE {
                return Err(Error::BadTerminals);
            }
            role[t as usize] = SINK;
        }
        let mut sources = sources.to_vec();
        sources.sort_unstable();
        sources.dedup();
        let mut sinks = sinks.to_vec();
        sinks.sort_unstable();
        sinks.dedup();
        Ok(Terminals { sources, sinks, role })
    }

    #[inline]
    pub(crate) fn role(&self, x: Vertex) -> u8 {
        self.role[x as usize]
    }

    pub fn is_source(&self, x: Vertex) -> bool {
        self.role(x) == SOURCE
    }

    pub fn is_sink(&self, x: Vertex) -> bool {
        self.role(x) == SINK
    }
}

/// Size, volume and balance deviations of a flow relative to (S, T).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BalanceReport {
    pub size: f64,
    pub volume: f64,
    pub interior_imbalance: f64,
    pub boundary_deviation: f64,
    pub mu: f64,
}

impl BalanceReport {
    /// Interior imbalance within 1e−9·size.
    pub fn is_proper(&self) -> bool {
        self.interior_imbalance <= 1e-9 * self.size.max(f64::MIN_POSITIVE)
    }

    /// Smallest θ for which the two stitching hypotheses hold.
    pub fn required_theta(&self) -> f64 {
        if self.size == 0.0 {
            0.0
        } else {
            self.interior_imbalance.max(self.boundary_deviation) / self.size
        }
    }
}

pub fn balance_report_with(f: &DirectedFlow, terminals: &Terminals) -> BalanceReport {
    let outflow = f.net_outflows();
    balance_from_outflows(&outflow, terminals)
}

pub(crate) fn balance_from_outflows(outflow: &[f64], terminals: &Terminals) -> BalanceReport {
    let size = 0.5 * compensated_sum(outflow.iter().map(|x| x.abs()));
    let volume = compensated_sum(terminals.sources.iter().map(|&s| outflow[s as usize]));
    let interior = compensated_sum(
        outflow.iter().enumerate().filter(|(x, _)| terminals.role(*x as Vertex) == INTERIOR).map(|(_, v)| v.abs()),
    );
    let per_source = volume / terminals.sources.len() as f64;
    let per_sink = volume / terminals.sinks.len() as f64;
    let deviation = compensated_sum(
        terminals
            .sources
            .iter()
            .map(|&s| (outflow[s as usize] - per_source).abs())
            .chain(terminals.sinks.iter().map(|&t| (-outflow[t as usize] - per_sink).abs())),
    );
    let mu = if volume > 0.0 {
        deviation / volume
    } else if deviation == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    BalanceReport { size, volume, interior_imbalance: interior, boundary_deviation: deviation, mu }
}

/// Balance metrics of `f` for sources `s` and sinks `t`.
pub fn balance_report(f: &DirectedFlow, s: &[Vertex], t: &[Vertex]) -> Result<BalanceReport> {
    let terminals = Terminals::new(f.cube(), s, t)?;
    Ok(balance_report_with(f, &terminals))
}

/// The arc with the largest overload.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorstEdge {
    pub edge: EdgeId,
    pub from: Vertex,
    pub to: Vertex,
    pub flow: f64,
    pub capacity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// max over arcs of flow − capacity (may be negative).
    pub max_excess: f64,
    /// max over arcs of flow / capacity (infinite if flow sits on a zero-capacity edge).
    pub max_utilization: f64,
    pub worst: Option<WorstEdge>,
}

/// f(x→y) ≤ cap(e) + tol on every arc.
pub fn check_feasible<C: EdgeCapacity + ?Sized>(f: &DirectedFlow, caps: &C, tol: f64) -> FeasibilityReport {
    let cube = f.cube();
    let mut worst: Option<WorstEdge> = None;
    let mut max_excess = f64::NEG_INFINITY;
    let mut max_util: f64 = 0.0;
    for (i, &v) in f.signed_values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let c = caps.capacity_of(i);
        let flow = v.abs();
        let excess = flow - c;
        let util = if c > 0.0 { flow / c } else { f64::INFINITY };
        max_util = max_util.max(util);
        if excess > max_excess {
            max_excess = excess;
            let e = cube.edge_at(i);
            let (from, to) = if v > 0.0 { (e.lower, e.upper()) } else { (e.upper(), e.lower) };
            worst = Some(WorstEdge { edge: e, from, to, flow, capacity: c });
        }
    }
    if worst.is_none() {
        max_excess = 0.0;
    }
    FeasibilityReport { feasible: max_excess <= tol, max_excess, max_utilization: max_util, worst }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(d: u32) -> Cube {
        Cube::new(d).unwrap()
    }

    #[test]
    fn net_outflow_examples() {
        let c = cube(2);
        let mut f = DirectedFlow::zero(c);
        f.add_path(&[0b00, 0b01, 0b11], 1.0);
        assert_eq!(f.net_outflow(0b00), 1.0);
        assert_eq!(f.net_outflow(0b01), 0.0);
        assert_eq!(f.net_outflow(0b11), -1.0);
        let z = DirectedFlow::zero(c);
        assert!(z.net_outflows().iter().all(|&x| x == 0.0));
        let mut leaky = DirectedFlow::zero(c);
        leaky.push(0b00, 0b01, 1.0);
        leaky.push(0b01, 0b11, 0.9);
        assert!((leaky.net_outflow(0b01) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn antiparallel_cancel() {
        let mut f = DirectedFlow::zero(cube(2));
        f.push(0, 1, 0.7);
        f.push(1, 0, 0.2);
        assert!((f.get(0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(f.get(1, 0), 0.0);
    }

    #[test]
    fn feasibility_examples() {
        let c = cube(2);
        let caps = vec![1.0; 4];
        assert!(check_feasible(&DirectedFlow::zero(c), &caps, 0.0).feasible);
        let mut f = DirectedFlow::zero(c);
        f.add_path(&[0, 1, 3], 1.0);
        assert!(check_feasible(&f, &caps, 0.0).feasible);
        let mut g = DirectedFlow::zero(c);
        g.push(0, 1, 1.1);
        let r = check_feasible(&g, &caps, 1e-9);
        assert!(!r.feasible);
        let w = r.worst.unwrap();
        assert_eq!((w.from, w.to), (0, 1));
    }

    #[test]
    fn balance_examples() {
        let c = cube(2);
        let mut f = DirectedFlow::zero(c);
        f.push(0b01, 0b11, 0.5);
        f.push(0b10, 0b11, 0.5);
        let r = balance_report(&f, &[0b01, 0b10], &[0b11]).unwrap();
        assert_eq!(r.mu, 0.0);
        assert_eq!(r.volume, 1.0);
        let mut g = DirectedFlow::zero(c);
        g.push(0b01, 0b11, 0.6);
        g.push(0b10, 0b11, 0.4);
        let r = balance_report(&g, &[0b01, 0b10], &[0b11]).unwrap();
        assert!(r.boundary_deviation >= 0.2 - 1e-12);
        let mut leaky = DirectedFlow::zero(c);
        leaky.push(0b00, 0b01, 1.0);
        leaky.push(0b01, 0b11, 0.9);
        let r = balance_report(&leaky, &[0b00], &[0b11]).unwrap();
        assert!((r.size - 1.0).abs() < 1e-12);
        assert!(balance_report(&leaky, &[0b00], &[0b00]).is_err());
    }

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
