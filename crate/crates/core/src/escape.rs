//! Local connectivity and escape flows from a vertex to its neighbours and to its
//! radius-ℓ shell.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::capacities::CapacityNetwork;
use crate::error::{Error, Result};
use crate::flowcore::{balance_report, decompose, DirectedFlow, PathFlow};
use crate::hypercube::{binomial, distance, Cube, Subcube, Vertex};

pub const DEFAULT_ALPHA: f64 = 0.2;

/// Number of times α is halved when a vertex cannot escape.
pub const ALPHA_FALLBACKS: usize = 2;

/// Constants of the neighbour-escape construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EscapeConstants {
    /// M₀ = 1 + 1/α.
    pub m0: f64,
    /// N = ⌊1/α⌋.
    pub n: f64,
    /// M₁ = M₀·N/α.
    pub m1: f64,
    /// M = 7·M₁.
    pub m: f64,
}

pub fn escape_constants(alpha: f64) -> EscapeConstants {
    let m0 = 1.0 + 1.0 / alpha;
    let n = (1.0 / alpha).floor();
    let m1 = m0 * n / alpha;
    EscapeConstants { m0, n, m1, m: 7.0 * m1 }
}

/// The shell-propagation constant 7·M₁ for a given α.
pub fn shell_m(alpha: f64) -> f64 {
    escape_constants(alpha).m
}

/// Open/closed state of every edge.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenEdges {
    cube: Cube,
    open: Vec<bool>,
}

impl OpenEdges {
    pub fn new(cube: Cube, open: Vec<bool>) -> Result<Self> {
        if open.len() != cube.edge_count() {
            return Err(Error::Format(format!("expected {} edge states, got {}", cube.edge_count(), open.len())));
        }
        Ok(OpenEdges { cube, open })
    }

    /// Edges with capacity at least `threshold` (and positive).
    pub fn at_threshold(net: &CapacityNetwork, threshold: f64) -> Self {
        let open = net.capacities().iter().map(|&c| c > 0.0 && c >= threshold).collect();
        OpenEdges { cube: net.cube(), open }
    }

    pub fn cube(&self) -> Cube {
        self.cube
    }

    #[inline]
    pub fn is_open_index(&self, edge: usize) -> bool {
        self.open[edge]
    }

    /// Whether the edge x-x⊕e_dim is open.
    #[inline]
    pub fn is_open(&self, x: Vertex, dim: u32) -> bool {
        self.open[self.cube.edge_index_at(x, dim)]
    }

    #[inline]
    pub fn is_open_between(&self, a: Vertex, b: Vertex) -> bool {
        self.is_open(a, (a ^ b).trailing_zeros())
    }

    pub fn degree(&self, x: Vertex) -> u32 {
        (0..self.cube.dim()).filter(|&j| self.is_open(x, j)).count() as u32
    }

    /// Close every edge incident to `x`.
    pub fn isolate(&mut self, x: Vertex) {
        for j in 0..self.cube.dim() {
            let i = self.cube.edge_index_at(x, j);
            self.open[i] = false;
        }
    }

    /// Open canonical matching edges w1-w2 between Γ(u)∖v and Γ(v)∖u.
    pub fn matching_count(&self, u: Vertex, dim: u32) -> u32 {
        (0..self.cube.dim()).filter(|&j| j != dim && self.is_open(u ^ (1 << j), dim)).count() as u32
    }

    /// Coordinates j ≠ dim whose 3-path u, u⊕e_j, u⊕e_j⊕e_dim, u⊕e_dim is fully open, ascending.
    pub fn open_three_paths(&self, u: Vertex, dim: u32) -> Vec<u32> {
        let v = u ^ (1 << dim);
        (0..self.cube.dim())
            .filter(|&j| j != dim && self.is_open(u, j) && self.is_open(u ^ (1 << j), dim) && self.is_open(v, j))
            .collect()
    }
}

/// Bit flags for the three local-connectivity criteria.
pub const CRITERION_1: u8 = 1;
pub const CRITERION_2: u8 = 2;
pub const CRITERION_3: u8 = 4;

fn criteria_list(flags: u8) -> Vec<u8> {
    (0..3).filter(|i| flags & (1 << i) != 0).map(|i| i + 1).collect()
}

/// α-local-connectivity of every vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LocalConnectivityReport {
    pub alpha: f64,
    /// Failed-criteria flags per vertex (0 = ok).
    pub per_vertex: Vec<u8>,
    pub t1: Vec<Vertex>,
    pub t2: Vec<Vertex>,
    pub t3: Vec<Vertex>,
}

impl LocalConnectivityReport {
    pub fn is_ok(&self, x: Vertex) -> bool {
        self.per_vertex[x as usize] == 0
    }

    /// Failed criteria of `x` as numbers 1..=3.
    pub fn failed_criteria(&self, x: Vertex) -> Vec<u8> {
        criteria_list(self.per_vertex[x as usize])
    }

    pub fn poorly_connected(&self) -> Vec<Vertex> {
        (0..self.per_vertex.len() as Vertex).filter(|&x| !self.is_ok(x)).collect()
    }

    pub fn poorly_connected_fraction(&self) -> f64 {
        self.per_vertex.iter().filter(|&&f| f != 0).count() as f64 / self.per_vertex.len() as f64
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// Failed-criteria flags of a single vertex.
pub fn vertex_criteria(open: &OpenEdges, u: Vertex, alpha: f64) -> u8 {
    let d = open.cube().dim();
    let threshold = alpha * d as f64;
    let mut flags = 0;
    if (open.degree(u) as f64) < threshold {
        flags |= CRITERION_1;
    }
    let mut bad_neighbours = 0u32;
    for dim in 0..d {
        if (open.matching_count(u, dim) as f64) < threshold {
            flags |= CRITERION_2;
        }
        if (open.open_three_paths(u, dim).len() as f64) < threshold {
            bad_neighbours += 1;
        }
    }
    if bad_neighbours as f64 > (1.0 / alpha).floor() {
        flags |= CRITERION_3;
    }
    flags
}

/// Exact classification of every vertex.
pub fn classify_local_connectivity(open: &OpenEdges, alpha: f64) -> Result<LocalConnectivityReport> {
    check_alpha(alpha)?;
    let n = open.cube().vertex_count() as Vertex;
    let per_vertex: Vec<u8> = (0..n).map(|u| vertex_criteria(open, u, alpha)).collect();
    let pick = |flag: u8| (0..n).filter(|&u| per_vertex[u as usize] & flag != 0).collect();
    Ok(LocalConnectivityReport { alpha, t1: pick(CRITERION_1), t2: pick(CRITERION_2), t3: pick(CRITERION_3), per_vertex })
}

/// How a vertex reaches one cube neighbour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighbourClass {
    /// Open edge.
    S1,
    /// Closed edge with enough open 3-paths.
    S3,
    /// Served through matched pairs.
    SStar,
}

/// A unit flow from a vertex to one neighbour as weighted walks.
pub type Route = Vec<(Vec<Vertex>, f64)>;

/// Unit routes from a vertex to each of its d neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighbourRoutes {
    pub vertex: Vertex,
    pub class: Vec<NeighbourClass>,
    pub routes: Vec<Route>,
    /// Matched pairs used per S* neighbour.
    pub matched_pairs: Vec<usize>,
}

/// Direct or 3-path route x → x⊕e_dim, if x reaches that neighbour without matchings.
fn basic_route(open: &OpenEdges, x: Vertex, dim: u32, k3: usize) -> Option<(NeighbourClass, Route)> {
    let y = x ^ (1 << dim);
    if open.is_open(x, dim) {
        return Some((NeighbourClass::S1, vec![(vec![x, y], 1.0)]));
    }
    let paths = open.open_three_paths(x, dim);
    if paths.len() >= k3 {
        let w = 1.0 / k3 as f64;
        let route = paths[..k3]
            .iter()
            .map(|&j| {
                let a = x ^ (1 << j);
                (vec![x, a, a ^ (1 << dim), y], w)
            })
            .collect();
        return Some((NeighbourClass::S3, route));
    }
    None
}

fn reverse_route(route: &Route) -> Route {
    route
        .iter()
        .map(|(p, w)| {
            let mut q = p.clone();
            q.reverse();
            (q, *w)
        })
        .collect()
}

/// Build the unit routes of `x` to all its neighbours.
pub fn neighbour_routes(open: &OpenEdges, x: Vertex, alpha: f64) -> Result<NeighbourRoutes> {
    check_alpha(alpha)?;
    let d = open.cube().dim();
    let k3 = ((alpha * d as f64).ceil() as usize).max(1);
    let k_star = ((alpha * d as f64 / 2.0).ceil() as usize).max(1);
    let basic: Vec<Option<(NeighbourClass, Route)>> = (0..d).map(|j| basic_route(open, x, j, k3)).collect();
    let mut class = Vec::with_capacity(d as usize);
    let mut routes = Vec::with_capacity(d as usize);
    let mut matched_pairs = vec![0; d as usize];
    for dim in 0..d {
        if let Some((c, r)) = &basic[dim as usize] {
            class.push(*c);
            routes.push(r.clone());
            continue;
        }
        // S*: pairs (w, z) = (x⊕e_j, x⊕e_j⊕e_dim) with w reachable from x, z reaching
        // the target, and the edge w-z open; greedy over ascending j.
        let target = x ^ (1 << dim);
        let mut pairs = Vec::new();
        for j in 0..d {
            if j == dim || pairs.len() == k_star {
                continue;
            }
            let w = x ^ (1 << j);
            if !open.is_open(w, dim) {
                continue;
            }
            let Some((_, to_w)) = &basic[j as usize] else { continue };
            let Some((_, from_target)) = basic_route(open, target, j, k3) else { continue };
            pairs.push((to_w.clone(), reverse_route(&from_target)));
        }
        if pairs.is_empty() {
            return Err(Error::NoRoute { from: x, to: target });
        }
        let share = 1.0 / pairs.len() as f64;
        let mut route = Route::new();
        for (to_w, to_target) in &pairs {
            for (p1, w1) in to_w {
                for (p2, w2) in to_target {
                    let mut walk = p1.clone();
                    walk.extend_from_slice(p2);
                    route.push((walk, share * w1 * w2));
                }
            }
        }
        class.push(NeighbourClass::SStar);
        matched_pairs[dim as usize] = pairs.len();
        routes.push(route);
    }
    Ok(NeighbourRoutes { vertex: x, class, routes, matched_pairs })
}

/// A unit escape flow from `source` onto its shell V_ell(source).
#[derive(Clone, Debug)]
pub struct EscapePlan {
    pub source: Vertex,
    pub ell: u32,
    pub alpha: f64,
    pub s1: Vec<Vertex>,
    pub s3: Vec<Vertex>,
    pub s_star: Vec<Vertex>,
    /// Balanced flow of volume 1 onto the shell.
    pub flow: DirectedFlow,
    /// Measured max usage·|E_m| of the neighbour escape at the source.
    pub m1_used: f64,
    /// Measured max usage·|E_m| of the whole plan (unit capacities on open edges).
    pub m_used: f64,
    pub shell: Vec<Vertex>,
    terminal_paths: OnceLock<Vec<Vec<PathFlow>>>,
}

impl EscapePlan {
    /// The plan's path flows grouped by shell vertex (index into `shell`).
    pub fn terminal_paths(&self) -> &[Vec<PathFlow>] {
        self.terminal_paths.get_or_init(|| {
            let cube = self.flow.cube();
            let mut groups: Vec<Vec<PathFlow>> = vec![Vec::new(); self.shell.len()];
            let dec = decompose(&self.flow, &[self.source], &self.shell).expect("escape plans are proper");
            let mut slot = vec![usize::MAX; cube.vertex_count()];
            for (i, &w) in self.shell.iter().enumerate() {
                slot[w as usize] = i;
            }
            for p in dec.paths {
                let end = *p.vertices.last().unwrap();
                groups[slot[end as usize]].push(p);
            }
            groups
        })
    }

    /// Reweight the plan so that shell vertex w receives `amount(w)`: each terminal's
    /// path group is scaled to the requested amount.
    pub fn shaped(&self, amount: &dyn Fn(Vertex) -> f64) -> DirectedFlow {
        let mut out = DirectedFlow::zero(self.flow.cube());
        for (i, &w) in self.shell.iter().enumerate() {
            let a = amount(w);
            if a == 0.0 {
                continue;
            }
            let group = &self.terminal_paths()[i];
            let total: f64 = group.iter().map(|p| p.value).sum();
            for p in group {
                out.add_path(&p.vertices, a * p.value / total);
            }
        }
        out
    }

    /// The plan's contribution for far target `v`: a balanced flow of volume 2^{−d}
    /// onto S_u(v), built from the path flows ending in S_u(v).
    pub fn slice(&self, v: Vertex) -> Result<DirectedFlow> {
        let cube = self.flow.cube();
        let d = cube.dim();
        let k = distance(self.source, v);
        if k < self.ell || v == self.source {
            return Err(Error::PairKind { u: self.source, v, dist: k, expected: "beyond the shell radius" });
        }
        let sub = Subcube::spanning(self.source, v);
        let share = self.shell.len() as f64 * 2f64.powi(-(d as i32)) / binomial(k, self.ell) as f64;
        let groups = self.terminal_paths();
        let mut out = DirectedFlow::zero(cube);
        for (i, &w) in self.shell.iter().enumerate() {
            if sub.contains(w) {
                for p in &groups[i] {
                    out.add_path(&p.vertices, share * p.value);
                }
            }
        }
        Ok(out)
    }
}

fn usage_ratio(flow: &DirectedFlow, source: Vertex, open: &OpenEdges) -> f64 {
    let cube = flow.cube();
    let d = cube.dim();
    let mut worst: f64 = 0.0;
    for (i, &v) in flow.signed_values().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        if !open.is_open_index(i) {
            return f64::INFINITY;
        }
        let m = cube.edge_layer(source, cube.edge_at(i));
        worst = worst.max(v.abs() * m as f64 * binomial(d, m) as f64);
    }
    worst
}

/// Per-α state: classification plus lazily built neighbour routes.
struct AlphaLevel {
    alpha: f64,
    report: LocalConnectivityReport,
    routes: Vec<OnceLock<std::result::Result<NeighbourRoutes, (Vertex, Vertex)>>>,
}

impl AlphaLevel {
    fn new(open: &OpenEdges, alpha: f64) -> Result<Self> {
        let report = classify_local_connectivity(open, alpha)?;
        let routes = (0..open.cube().vertex_count()).map(|_| OnceLock::new()).collect();
        Ok(AlphaLevel { alpha, report, routes })
    }

    fn routes(&self, open: &OpenEdges, x: Vertex) -> Result<&NeighbourRoutes> {
        let r = self.routes[x as usize].get_or_init(|| {
            neighbour_routes(open, x, self.alpha).map_err(|e| match e {
                Error::NoRoute { from, to } => (from, to),
                _ => (x, x),
            })
        });
        r.as_ref().map_err(|&(from, to)| Error::NoRoute { from, to })
    }
}

/// Escape machinery for one network: open edges at the truncation threshold and the
/// classification at α, α/2, α/4.
pub struct EscapeContext {
    open: OpenEdges,
    levels: Vec<AlphaLevel>,
}

impl EscapeContext {
    pub fn new(open: OpenEdges, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let levels = (0..=ALPHA_FALLBACKS)
            .map(|i| AlphaLevel::new(&open, alpha / 2f64.powi(i as i32)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EscapeContext { open, levels })
    }

    pub fn open(&self) -> &OpenEdges {
        &self.open
    }

    pub fn alpha(&self) -> f64 {
        self.levels[0].alpha
    }

    /// Classification at the configured α.
    pub fn report(&self) -> &LocalConnectivityReport {
        &self.levels[0].report
    }

    fn level_plan(&self, level: &AlphaLevel, u: Vertex, ell: u32) -> Result<EscapePlan> {
        let cube = self.open.cube();
        let d = cube.dim();
        if ell == 0 || ell >= d {
            return Err(Error::LayerOutOfRange { m: ell, d });
        }
        let poor: Vec<Vertex> =
            (0..ell).flat_map(|r| cube.layer_vertices(u, r)).filter(|&x| !level.report.is_ok(x)).collect();
        if !poor.is_empty() {
            if poor == [u] {
                return Err(Error::PoorlyConnected {
                    vertex: u,
                    alpha: level.alpha,
                    criteria: level.report.failed_criteria(u),
                });
            }
            return Err(Error::PoorBall { center: u, vertices: poor });
        }
        let mut flow = DirectedFlow::zero(cube);
        for m in 1..=ell {
            let amount = 1.0 / ((d - m + 1) as f64 * binomial(d, m - 1) as f64);
            for v in cube.layer_vertices(u, m - 1) {
                let routes = level.routes(&self.open, v)?;
                for j in 0..d {
                    if (v ^ u) & (1 << j) != 0 {
                        continue;
                    }
                    for (path, w) in &routes.routes[j as usize] {
                        flow.add_path(path, amount * w);
                    }
                }
            }
        }
        let own = level.routes(&self.open, u)?;
        let mut neighbour = DirectedFlow::zero(cube);
        for route in &own.routes {
            for (path, w) in route {
                neighbour.add_path(path, w / d as f64);
            }
        }
        let pick = |c: NeighbourClass| -> Vec<Vertex> {
            (0..d).filter(|&j| own.class[j as usize] == c).map(|j| u ^ (1 << j)).collect()
        };
        Ok(EscapePlan {
            source: u,
            ell,
            alpha: level.alpha,
            s1: pick(NeighbourClass::S1),
            s3: pick(NeighbourClass::S3),
            s_star: pick(NeighbourClass::SStar),
            m1_used: usage_ratio(&neighbour, u, &self.open),
            m_used: usage_ratio(&flow, u, &self.open),
            flow,
            shell: cube.layer_vertices(u, ell),
            terminal_paths: OnceLock::new(),
        })
    }

    /// Balanced unit flow u → V_ell(u), retrying at smaller α on failure.
    pub fn propagate_to_shell(&self, u: Vertex, ell: u32) -> Result<EscapePlan> {
        self.open.cube().check_vertex(u)?;
        let mut first_err = None;
        for level in &self.levels {
            match self.level_plan(level, u, ell) {
                Ok(plan) => return Ok(plan),
                Err(e @ (Error::PoorBall { .. } | Error::PoorlyConnected { .. } | Error::NoRoute { .. })) => {
                    first_err.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(first_err.unwrap())
    }

    /// Balanced unit flow u → Γ(u).
    pub fn neighbour_escape(&self, u: Vertex) -> Result<EscapePlan> {
        self.propagate_to_shell(u, 1)
    }
}

/// Per-shell-vertex allocation of a set of far targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AllocationReport {
    pub max_allocation: f64,
    pub limit: f64,
}

/// Split a plan into balanced volume-2^{−d} flows onto S_u(v) for each target.
pub fn split_to_subcube_boundaries(
    plan: &EscapePlan,
    targets: &[Vertex],
) -> Result<(Vec<(Vertex, DirectedFlow)>, AllocationReport)> {
    let cube = plan.flow.cube();
    let d = cube.dim();
    let report = balance_report(&plan.flow, &[plan.source], &plan.shell)?;
    if !report.is_proper() || report.mu > 1e-9 || (report.volume - 1.0).abs() > 1e-9 {
        return Err(Error::Unbalanced { mu: report.mu.max(report.interior_imbalance) });
    }
    let mut allocation = vec![0.0; cube.vertex_count()];
    let mut out = Vec::with_capacity(targets.len());
    for &v in targets {
        cube.check_vertex(v)?;
        let k = distance(plan.source, v);
        let slice = plan.slice(v)?;
        let sub = Subcube::spanning(plan.source, v);
        for w in sub.layer(plan.ell) {
            allocation[w as usize] += 2f64.powi(-(d as i32)) / binomial(k, plan.ell) as f64;
        }
        out.push((v, slice));
    }
    let limit = 1.0 / plan.shell.len() as f64;
    let max_allocation = allocation.iter().copied().fold(0.0, f64::max);
    if max_allocation > limit * (1.0 + 1e-12) {
        return Err(Error::Allocation { allocation: max_allocation, limit });
    }
    Ok((out, AllocationReport { max_allocation, limit }))
}

/// Far targets of u: vertices with d(u,v) > d/4.
pub fn far_targets(cube: Cube, u: Vertex) -> Vec<Vertex> {
    let d = cube.dim();
    (0..cube.vertex_count() as Vertex).filter(|&v| 4 * distance(u, v) > d).collect()
}

/// Σ_{k>ℓ, far} C(d−ℓ, k−ℓ)·C(k,ℓ)⁻¹·2^{−d}: the allocation at each shell vertex when
/// all far targets are split.
pub fn allocation_identity(d: u32, ell: u32) -> f64 {
    (ell.max(1)..=d)
        .filter(|&k| 4 * k > d && k >= ell)
        .map(|k| binomial(d - ell, k - ell) as f64 / binomial(k, ell) as f64)
        .sum::<f64>()
        * 2f64.powi(-(d as i32))
}
