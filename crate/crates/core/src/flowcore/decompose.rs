use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::flow::{balance_from_outflows, DirectedFlow, Terminals};
use crate::error::{Error, Result};
use crate::hypercube::{Cube, Vertex};

/// Flow `value` along a walk of vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFlow {
    pub vertices: Vec<Vertex>,
    pub value: f64,
}

/// Flow `value` around a closed walk; the first vertex is repeated at the end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleFlow {
    pub vertices: Vec<Vertex>,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub paths: Vec<PathFlow>,
    pub cycles: Vec<CycleFlow>,
}

impl Decomposition {
    pub fn recombine(&self, cube: Cube) -> DirectedFlow {
        let mut f = DirectedFlow::zero(cube);
        for p in &self.paths {
            f.add_path(&p.vertices, p.value);
        }
        for c in &self.cycles {
            f.add_path(&c.vertices, c.value);
        }
        f
    }

    pub fn path_volume(&self) -> f64 {
        self.paths.iter().map(|p| p.value).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Arc {
    pub from: usize,
    pub to: usize,
    /// Tie-break key: lower wins among equal residuals.
    pub key: u64,
}

/// A path or cycle found by the engine, as arc indices.
pub(crate) struct Walk {
    pub arcs: Vec<usize>,
    pub value: f64,
}

#[derive(PartialEq)]
struct Entry(f64, Reverse<u64>, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then_with(|| self.1.cmp(&other.1))
    }
}

/// Path/cycle decomposition of a flow given as arcs with positive values.
///
/// Walks start at nodes with positive excess (largest first) and follow the outgoing
/// arc of highest remaining value (ties: lowest key), ending at the first node with
/// remaining deficit. Revisiting a node peels off a cycle. Arcs left after all excess
/// is routed form circulations and are peeled into cycles. Residuals at or below `tol`
/// are treated as zero.
pub(crate) fn decompose_arcs(
    nodes: usize,
    arcs: &[Arc],
    mut residual: Vec<f64>,
    mut excess: Vec<f64>,
    tol: f64,
) -> (Vec<Walk>, Vec<Walk>) {
    let mut heaps: Vec<BinaryHeap<Entry>> = (0..nodes).map(|_| BinaryHeap::new()).collect();
    for (i, a) in arcs.iter().enumerate() {
        if residual[i] > tol {
            heaps[a.from].push(Entry(residual[i], Reverse(a.key), i));
        } else {
            residual[i] = 0.0;
        }
    }
    let best_out = |heaps: &mut Vec<BinaryHeap<Entry>>, residual: &Vec<f64>, node: usize| -> Option<usize> {
        let heap = &mut heaps[node];
        while let Some(top) = heap.peek() {
            let i = top.2;
            if residual[i] > tol && residual[i] == top.0 {
                return Some(i);
            }
            heap.pop();
        }
        None
    };
    let reduce = |heaps: &mut Vec<BinaryHeap<Entry>>, residual: &mut Vec<f64>, i: usize, amount: f64| {
        residual[i] -= amount;
        if residual[i] > tol {
            heaps[arcs[i].from].push(Entry(residual[i], Reverse(arcs[i].key), i));
        } else {
            residual[i] = 0.0;
        }
    };

    let mut starts: Vec<usize> = (0..nodes).filter(|&v| excess[v] > tol).collect();
    starts.sort_by(|&a, &b| excess[b].total_cmp(&excess[a]).then(a.cmp(&b)));

    let mut paths = Vec::new();
    let mut cycles = Vec::new();
    let mut position: Vec<usize> = vec![usize::MAX; nodes];
    let mut walk_nodes: Vec<usize> = Vec::new();
    let mut walk_arcs: Vec<usize> = Vec::new();

    for s in starts {
        while excess[s] > tol {
            walk_nodes.clear();
            walk_arcs.clear();
            walk_nodes.push(s);
            position[s] = 0;
            let mut end: Option<usize> = None;
            loop {
                let cur = *walk_nodes.last().unwrap();
                if cur != s && excess[cur] < -tol {
                    end = Some(cur);
                    break;
                }
                match best_out(&mut heaps, &residual, cur) {
                    None => {
                        // Dead end: what reaches `cur` is rounding dust.
                        match walk_arcs.pop() {
                            None => {
                                excess[s] = 0.0;
                                break;
                            }
                            Some(a) => {
                                residual[a] = 0.0;
                                position[cur] = usize::MAX;
                                walk_nodes.pop();
                            }
                        }
                    }
                    Some(a) => {
                        let next = arcs[a].to;
                        if position[next] != usize::MAX {
                            let p = position[next];
                            let mut cyc: Vec<usize> = walk_arcs[p..].to_vec();
                            cyc.push(a);
                            let value = cyc.iter().map(|&i| residual[i]).fold(f64::INFINITY, f64::min);
                            for &i in &cyc {
                                reduce(&mut heaps, &mut residual, i, value);
                            }
                            cycles.push(Walk { arcs: cyc, value });
                            for &v in &walk_nodes[p + 1..] {
                                position[v] = usize::MAX;
                            }
                            walk_nodes.truncate(p + 1);
                            walk_arcs.truncate(p);
                        } else {
                            position[next] = walk_nodes.len();
                            walk_nodes.push(next);
                            walk_arcs.push(a);
                        }
                    }
                }
            }
            for &v in &walk_nodes {
                position[v] = usize::MAX;
            }
            if let Some(t) = end {
                let value = walk_arcs
                    .iter()
                    .map(|&i| residual[i])
                    .fold(excess[s].min(-excess[t]), f64::min);
                for &i in &walk_arcs {
                    reduce(&mut heaps, &mut residual, i, value);
                }
                excess[s] -= value;
                excess[t] += value;
                paths.push(Walk { arcs: walk_arcs.clone(), value });
            }
        }
    }

    // Remaining arcs carry circulations.
    for first in 0..arcs.len() {
        while residual[first] > tol {
            walk_nodes.clear();
            walk_arcs.clear();
            let start = arcs[first].from;
            walk_nodes.push(start);
            position[start] = 0;
            let mut a = first;
            loop {
                let next = arcs[a].to;
                if position[next] != usize::MAX {
                    let p = position[next];
                    let mut cyc: Vec<usize> = walk_arcs[p..].to_vec();
                    cyc.push(a);
                    let value = cyc.iter().map(|&i| residual[i]).fold(f64::INFINITY, f64::min);
                    for &i in &cyc {
                        reduce(&mut heaps, &mut residual, i, value);
                    }
                    cycles.push(Walk { arcs: cyc, value });
                    break;
                }
                position[next] = walk_nodes.len();
                walk_nodes.push(next);
                walk_arcs.push(a);
                match best_out(&mut heaps, &residual, next) {
                    Some(b) => a = b,
                    None => {
                        // Unbalanced dust: drop the arc that led here.
                        let last = walk_arcs.pop().unwrap();
                        residual[last] = 0.0;
                        break;
                    }
                }
            }
            for &v in &walk_nodes {
                position[v] = usize::MAX;
            }
        }
    }
    (paths, cycles)
}

/// Arcs of a cube flow, keyed by 2·edge index + direction.
pub(crate) fn cube_arcs(f: &DirectedFlow) -> (Vec<Arc>, Vec<f64>) {
    let cube = f.cube();
    let mut arcs = Vec::with_capacity(f.support_len());
    let mut values = Vec::with_capacity(f.support_len());
    for (i, &v) in f.signed_values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let e = cube.edge_at(i);
        let (from, to, dir) = if v > 0.0 { (e.lower, e.upper(), 0) } else { (e.upper(), e.lower, 1) };
        arcs.push(Arc { from: from as usize, to: to as usize, key: 2 * i as u64 + dir });
        values.push(v.abs());
    }
    (arcs, values)
}

pub(crate) fn walk_vertices(arcs: &[Arc], walk: &[usize]) -> Vec<Vertex> {
    let mut out = Vec::with_capacity(walk.len() + 1);
    if let Some(&first) = walk.first() {
        out.push(arcs[first].from as Vertex);
    }
    out.extend(walk.iter().map(|&i| arcs[i].to as Vertex));
    out
}

/// Relative tolerance used to discard rounding dust.
pub(crate) fn dust_tolerance(f: &DirectedFlow) -> f64 {
    f.max_abs() * 1e-12
}

/// Decompose a proper S→T flow into path flows and cycle flows.
pub fn decompose(f: &DirectedFlow, s: &[Vertex], t: &[Vertex]) -> Result<Decomposition> {
    let cube = f.cube();
    let terminals = Terminals::new(cube, s, t)?;
    let outflow = f.net_outflows();
    let report = balance_from_outflows(&outflow, &terminals);
    if !report.is_proper() {
        return Err(Error::ImproperFlow { imbalance: report.interior_imbalance });
    }
    let (arcs, values) = cube_arcs(f);
    let tol = dust_tolerance(f);
    let excess: Vec<f64> = outflow
        .iter()
        .enumerate()
        .map(|(x, &v)| if terminals.is_source(x as Vertex) || terminals.is_sink(x as Vertex) { v } else { 0.0 })
        .collect();
    let (paths, cycles) = decompose_arcs(cube.vertex_count(), &arcs, values, excess, tol);
    Ok(Decomposition {
        paths: paths
            .into_iter()
            .map(|w| PathFlow { vertices: walk_vertices(&arcs, &w.arcs), value: w.value })
            .collect(),
        cycles: cycles
            .into_iter()
            .map(|w| CycleFlow { vertices: walk_vertices(&arcs, &w.arcs), value: w.value })
            .collect(),
    })
}
