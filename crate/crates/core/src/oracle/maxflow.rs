//! Dinic max flow on real capacities with a min-cut certificate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::DirectedFlow;
use crate::hypercube::Vertex;
use crate::netscale::EdgeCapacity;
use crate::hypercube::Cube;

/// Directed graph with paired residual arcs.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    initial: Vec<f64>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        FlowGraph { adj: vec![Vec::new(); nodes], to: Vec::new(), cap: Vec::new(), initial: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Arc a→b with capacity `cap`; returns its id. The reverse residual arc is `id ^ 1`.
    pub fn add_arc(&mut self, a: usize, b: usize, cap: f64) -> usize {
        let id = self.to.len();
        self.to.push(b);
        self.cap.push(cap);
        self.initial.push(cap);
        self.adj[a].push(id);
        self.to.push(a);
        self.cap.push(0.0);
        self.initial.push(0.0);
        self.adj[b].push(id + 1);
        id
    }

    /// Flow currently routed on arc `id`.
    pub fn flow_on(&self, id: usize) -> f64 {
        self.initial[id] - self.cap[id]
    }

    fn levels(&self, s: usize, tol: f64) -> Vec<u32> {
        let mut level = vec![u32::MAX; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for &a in &self.adj[x] {
                let y = self.to[a];
                if self.cap[a] > tol && level[y] == u32::MAX {
                    level[y] = level[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        level
    }

    fn augment(&mut self, x: usize, t: usize, limit: f64, level: &[u32], next: &mut [usize], tol: f64) -> f64 {
        if x == t {
            return limit;
        }
        while next[x] < self.adj[x].len() {
            let a = self.adj[x][next[x]];
            let y = self.to[a];
            if self.cap[a] > tol && level[y] == level[x] + 1 {
                let pushed = self.augment(y, t, limit.min(self.cap[a]), level, next, tol);
                if pushed > 0.0 {
                    self.cap[a] -= pushed;
                    self.cap[a ^ 1] += pushed;
                    return pushed;
                }
            }
            next[x] += 1;
        }
        0.0
    }

    /// Maximum s→t flow value.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let scale = self.initial.iter().copied().fold(0.0, f64::max);
        let tol = scale * 1e-13;
        let mut total = 0.0;
        loop {
            let level = self.levels(s, tol);
            if level[t] == u32::MAX {
                return total;
            }
            let mut next = vec![0; self.adj.len()];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut next, tol);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let scale = self.initial.iter().copied().fold(0.0, f64::max);
        let level = self.levels(s, scale * 1e-13);
        level.iter().map(|&l| l != u32::MAX).collect()
    }

    /// Total initial capacity of arcs leaving `side`.
    pub fn cut_value(&self, side: &[bool]) -> f64 {
        let mut total = 0.0;
        for (x, arcs) in self.adj.iter().enumerate() {
            if !side[x] {
                continue;
            }
            for &a in arcs {
                if a % 2 == 0 && !side[self.to[a]] {
                    total += self.initial[a];
                }
            }
        }
        total
    }
}

/// Exact single-commodity max flow with its certificate.
#[derive(Clone, Debug)]
pub struct MaxFlowResult {
    pub value: f64,
    pub flow: DirectedFlow,
    /// Capacity of the min cut found from the residual graph.
    pub cut_value: f64,
    pub source_side: Vec<Vertex>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MaxFlowSummary {
    pub value: f64,
    pub cut_value: f64,
}

impl MaxFlowResult {
    pub fn summary(&self) -> MaxFlowSummary {
        MaxFlowSummary { value: self.value, cut_value: self.cut_value }
    }

    /// Value equals cut capacity within relative tolerance.
    pub fn certified(&self, tol: f64) -> bool {
        (self.value - self.cut_value).abs() <= tol * self.value.abs().max(1.0)
    }
}

/// Max flow s→t where every cube edge is a pair of opposed arcs of capacity `caps`.
pub fn max_flow_single<C: EdgeCapacity + ?Sized>(cube: Cube, caps: &C, s: Vertex, t: Vertex) -> Result<MaxFlowResult> {
    cube.check_vertex(s)?;
    cube.check_vertex(t)?;
    if s == t {
        return Err(Error::SameVertex(s));
    }
    let mut g = FlowGraph::new(cube.vertex_count());
    let mut arcs = Vec::with_capacity(cube.edge_count());
    for (i, e) in cube.edges().enumerate() {
        let c = caps.capacity_of(i);
        let a = g.add_arc(e.lower as usize, e.upper() as usize, c);
        let b = g.add_arc(e.upper() as usize, e.lower as usize, c);
        arcs.push((a, b));
    }
    let value = g.max_flow(s as usize, t as usize);
    let mut values = vec![0.0; cube.edge_count()];
    for (i, &(a, b)) in arcs.iter().enumerate() {
        values[i] = g.flow_on(a) - g.flow_on(b);
    }
    let side = g.source_side(s as usize);
    let cut_value = g.cut_value(&side);
    let source_side = (0..cube.vertex_count() as Vertex).filter(|&x| side[x as usize]).collect();
    Ok(MaxFlowResult { value, flow: DirectedFlow::from_signed(cube, values)?, cut_value, source_side })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::balance_report;

    #[test]
    fn small_examples() {
        let c1 = Cube::new(1).unwrap();
        let r = max_flow_single(c1, &vec![0.7], 0, 1).unwrap();
        assert!((r.value - 0.7).abs() < 1e-15);
        let c2 = Cube::new(2).unwrap();
        let r = max_flow_single(c2, &vec![1.0; 4], 0b00, 0b11).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.certified(1e-12));
        let b = balance_report(&r.flow, &[0], &[3]).unwrap();
        assert!(b.is_proper() && (b.volume - 2.0).abs() < 1e-12);
        assert!(matches!(max_flow_single(c2, &vec![1.0; 4], 1, 1), Err(Error::SameVertex(1))));
    }
}
