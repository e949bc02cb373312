//! Approximate maximum uniform concurrent flow with a certified dual bound.
//!
//! Each commodity carries one unit split over simple paths; the congestion
//! λ = max_e load_e/c_e is minimized through the potential Σ_e exp(η·load_e/c_e).
//! A pass computes edge lengths from the current loads, finds a shortest path for every
//! commodity under those lengths, and then shifts each commodity's flow onto that path
//! by projected Newton steps. The same lengths give the bound
//! Φ ≤ Σ_e c_e·l_e / Σ_j dist_j(l), and the primal flows scaled by 1/λ give φ̂ = 1/λ.
//! Unit lengths on the edge star of a single vertex give a second bound, which is
//! tight when a low-degree vertex is the bottleneck. The sharpness η is raised in
//! stages as the gap closes.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacities::CapacityNetwork;
use crate::error::{Error, Result};
use crate::flowcore::DirectedFlow;
use crate::hypercube::{Cube, Vertex};
use crate::oracle::bounds::PairSet;

/// Largest d for antipodal pairs.
pub const OPP_MAX_D: u32 = 11;
/// Largest d for all pairs.
pub const ALL_MAX_D: u32 = 7;
/// η = ETA_SCALE·ln|E| / (ω_stage·λ).
const ETA_SCALE: f64 = 0.25;
/// Largest commodities × edges product for custom pair sets.
pub const CUSTOM_MAX_WORK: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConcurrentParams {
    pub omega: f64,
    pub max_passes: usize,
    /// Rebalancing sweeps over known paths after each shortest-path round.
    pub inner_sweeps: usize,
    #[serde(skip)]
    pub deadline: Option<Instant>,
}

impl Default for ConcurrentParams {
    fn default() -> Self {
        ConcurrentParams { omega: 0.02, max_passes: 5000, inner_sweeps: 16, deadline: None }
    }
}

#[derive(Clone, Debug)]
pub struct ConcurrentFlowResult {
    /// Uniform volume of the returned feasible flows.
    pub phi_hat: f64,
    /// Certified upper bound on Φ.
    pub dual_bound: f64,
    pub passes: usize,
    /// φ̂ ≥ (1−ω)·dual bound.
    pub certified: bool,
    /// Per-commodity feasible flows of volume φ̂.
    pub flows: Option<Vec<((Vertex, Vertex), DirectedFlow)>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConcurrentSummary {
    pub phi_hat: f64,
    pub dual_bound: f64,
    pub passes: usize,
    pub certified: bool,
}

impl ConcurrentFlowResult {
    pub fn summary(&self) -> ConcurrentSummary {
        ConcurrentSummary {
            phi_hat: self.phi_hat,
            dual_bound: self.dual_bound,
            passes: self.passes,
            certified: self.certified,
        }
    }
}

fn check_budget(cube: Cube, pairs: &PairSet, count: usize) -> Result<()> {
    let d = cube.dim();
    let ok = match pairs {
        PairSet::Opp => d <= OPP_MAX_D,
        PairSet::All => d <= ALL_MAX_D,
        PairSet::Custom(_) => count.saturating_mul(cube.edge_count()) <= CUSTOM_MAX_WORK,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::BudgetExceeded(format!(
            "concurrent-flow oracle limits: opp d <= {OPP_MAX_D}, all d <= {ALL_MAX_D}, custom pairs x edges <= {CUSTOM_MAX_WORK}; got d = {d} with {count} pairs"
        )))
    }
}

const ABSENT: u32 = u32::MAX;
const SETTLED: u32 = u32::MAX - 1;

/// Reusable Dijkstra state: an indexed 4-ary heap with generation-stamped labels.
struct Scratch {
    dist: Vec<f64>,
    prev: Vec<u32>,
    pos: Vec<u32>,
    stamp: Vec<u32>,
    generation: u32,
    heap: Vec<Vertex>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            dist: vec![f64::INFINITY; n],
            prev: vec![0; n],
            pos: vec![ABSENT; n],
            stamp: vec![0; n],
            generation: 0,
            heap: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        self.heap.clear();
    }

    fn touch(&mut self, x: Vertex) {
        let i = x as usize;
        if self.stamp[i] != self.generation {
            self.stamp[i] = self.generation;
            self.dist[i] = f64::INFINITY;
            self.pos[i] = ABSENT;
        }
    }

    fn sift_up(&mut self, mut i: usize) {
        let x = self.heap[i];
        let key = self.dist[x as usize];
        while i > 0 {
            let p = (i - 1) / 4;
            let y = self.heap[p];
            if self.dist[y as usize] <= key {
                break;
            }
            self.heap[i] = y;
            self.pos[y as usize] = i as u32;
            i = p;
        }
        self.heap[i] = x;
        self.pos[x as usize] = i as u32;
    }

    fn sift_down(&mut self, mut i: usize) {
        let len = self.heap.len();
        let x = self.heap[i];
        let key = self.dist[x as usize];
        loop {
            let first = 4 * i + 1;
            if first >= len {
                break;
            }
            let mut best = first;
            let mut best_key = self.dist[self.heap[first] as usize];
            for c in first + 1..(first + 4).min(len) {
                let k = self.dist[self.heap[c] as usize];
                if k < best_key {
                    best = c;
                    best_key = k;
                }
            }
            if best_key >= key {
                break;
            }
            let y = self.heap[best];
            self.heap[i] = y;
            self.pos[y as usize] = i as u32;
            i = best;
        }
        self.heap[i] = x;
        self.pos[x as usize] = i as u32;
    }

    fn pop(&mut self) -> Option<Vertex> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().expect("nonempty");
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.sift_down(0);
        }
        self.pos[top as usize] = SETTLED;
        Some(top)
    }
}

/// Shortest s→t path under edge lengths (infinite = unusable); returns (length, arcs).
fn shortest_path(cube: Cube, len: &[f64], s: Vertex, t: Vertex, sc: &mut Scratch) -> Option<(f64, Vec<u32>)> {
    sc.reset();
    sc.touch(s);
    sc.dist[s as usize] = 0.0;
    sc.heap.push(s);
    sc.pos[s as usize] = 0;
    let mut reached = false;
    while let Some(x) = sc.pop() {
        if x == t {
            reached = true;
            break;
        }
        let dx = sc.dist[x as usize];
        for j in 0..cube.dim() {
            let e = cube.edge_index_at(x, j);
            let l = len[e];
            if !l.is_finite() {
                continue;
            }
            let y = x ^ (1 << j);
            sc.touch(y);
            let p = sc.pos[y as usize];
            if p == SETTLED {
                continue;
            }
            let nd = dx + l;
            if nd < sc.dist[y as usize] {
                sc.dist[y as usize] = nd;
                sc.prev[y as usize] = (2 * e + (x >> j & 1) as usize) as u32;
                if p == ABSENT {
                    sc.heap.push(y);
                    sc.sift_up(sc.heap.len() - 1);
                } else {
                    sc.sift_up(p as usize);
                }
            }
        }
    }
    if !reached {
        return None;
    }
    let mut arcs = Vec::new();
    let mut x = t;
    while x != s {
        let a = sc.prev[x as usize];
        arcs.push(a);
        x ^= 1 << cube.edge_at(a as usize / 2).dim;
    }
    arcs.reverse();
    Some((sc.dist[t as usize], arcs))
}

/// One commodity's routing: simple paths (as arc lists) with their flow.
type PathSet = Vec<(Vec<u32>, f64)>;

/// Monotone s→t paths over open edges, one per rotation of the differing bits: at each
/// step the first remaining bit (in rotated order) whose edge is open is flipped.
fn geodesic_paths(cube: Cube, caps: &[f64], s: Vertex, t: Vertex) -> Vec<Vec<u32>> {
    let bits: Vec<u32> = (0..cube.dim()).filter(|&j| (s ^ t) >> j & 1 == 1).collect();
    let mut out: Vec<Vec<u32>> = Vec::new();
    for r in 0..bits.len() {
        let mut remaining: Vec<u32> = bits[r..].iter().chain(&bits[..r]).copied().collect();
        let mut x = s;
        let mut arcs = Vec::with_capacity(bits.len());
        while !remaining.is_empty() {
            let Some(i) = remaining.iter().position(|&j| caps[cube.edge_index_at(x, j)] > 0.0) else {
                break;
            };
            let j = remaining.remove(i);
            let e = cube.edge_index_at(x, j);
            arcs.push((2 * e + (x >> j & 1) as usize) as u32);
            x ^= 1 << j;
        }
        if remaining.is_empty() && !out.contains(&arcs) {
            out.push(arcs);
        }
    }
    out
}

/// The smoothed congestion Σ_e exp(η(load_e/c_e − λ)) with frozen η and λ.
struct Potential<'a> {
    eta: f64,
    lambda: f64,
    inv_cap: &'a [f64],
}

impl Potential<'_> {
    /// First and second derivative with respect to the load of edge `e`.
    fn grad(&self, load: &[f64], e: usize) -> (f64, f64) {
        let g = (self.eta * (load[e] * self.inv_cap[e] - self.lambda)).exp();
        let s = self.eta * self.inv_cap[e];
        (s * g, s * s * g)
    }

    /// First derivative at edge `e` after its load moves by `delta`.
    fn grad_shifted(&self, load: &[f64], e: usize, delta: f64) -> f64 {
        let l = (load[e] + delta).max(0.0);
        self.eta * self.inv_cap[e] * (self.eta * (l * self.inv_cap[e] - self.lambda)).exp()
    }

    fn path_length(&self, path: &[u32], load: &[f64]) -> f64 {
        path.iter().map(|&a| self.grad(load, a as usize / 2).0).sum()
    }

    /// Moves flow from every other path of `r` onto `r[target]`, one Newton step each.
    fn shift_toward(&self, r: &mut PathSet, target: usize, load: &mut [f64], on_target: &mut [bool]) -> f64 {
        let mut moved = 0.0;
        for &a in &r[target].0 {
            on_target[a as usize / 2] = true;
        }
        let mut on_path = Vec::new();
        let mut target_only = Vec::new();
        for i in 0..r.len() {
            if i == target || r[i].1 <= 0.0 {
                continue;
            }
            on_path.clear();
            target_only.clear();
            let (mut slope, mut curv) = (0.0, 0.0);
            for &a in &r[i].0 {
                let e = a as usize / 2;
                if !on_target[e] {
                    let (g, h) = self.grad(load, e);
                    slope += g;
                    curv += h;
                }
                on_path.push(e);
            }
            for &a in &r[target].0 {
                let e = a as usize / 2;
                if !on_path.contains(&e) {
                    let (g, h) = self.grad(load, e);
                    slope -= g;
                    curv += h;
                    target_only.push(e);
                }
            }
            if slope <= 0.0 || curv <= 0.0 {
                continue;
            }
            let x = r[i].1;
            let mut step = (slope / curv).min(x);
            if x - step < 1e-12 {
                step = x;
            }
            // The derivative is convex in the step, so a Newton step can overshoot badly
            // when the target path crosses a thin edge; bisect back in that case.
            let slope_at = |t: f64| -> f64 {
                let down: f64 = on_path.iter().filter(|&&e| !on_target[e]).map(|&e| self.grad_shifted(load, e, -t)).sum();
                let up: f64 = target_only.iter().map(|&e| self.grad_shifted(load, e, t)).sum();
                down - up
            };
            if slope_at(step) < 0.0 {
                let (mut lo, mut hi) = (0.0, step);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if slope_at(mid) < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                step = lo;
                if step <= 0.0 {
                    continue;
                }
            }
            for &e in &on_path {
                if !on_target[e] {
                    load[e] = (load[e] - step).max(0.0);
                }
            }
            for &e in &target_only {
                load[e] += step;
            }
            r[i].1 -= step;
            r[target].1 += step;
            moved += step;
        }
        for &a in &r[target].0 {
            on_target[a as usize / 2] = false;
        }
        r.retain(|(_, x)| *x > 0.0);
        moved
    }
}

/// Maximum uniform concurrent flow over `pairs`, each pair an unordered commodity.
pub fn max_concurrent_uniform(
    base: &CapacityNetwork,
    pairs: &PairSet,
    params: &ConcurrentParams,
) -> Result<ConcurrentFlowResult> {
    max_concurrent_impl(base, pairs, params, true)
}

/// As [`max_concurrent_uniform`] without materializing the flows.
pub fn max_concurrent_value(
    base: &CapacityNetwork,
    pairs: &PairSet,
    params: &ConcurrentParams,
) -> Result<ConcurrentFlowResult> {
    max_concurrent_impl(base, pairs, params, false)
}

fn max_concurrent_impl(
    base: &CapacityNetwork,
    pairs: &PairSet,
    params: &ConcurrentParams,
    keep_flows: bool,
) -> Result<ConcurrentFlowResult> {
    let omega = params.omega;
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidParameter(format!("omega = {omega} must lie in (0, 1)")));
    }
    let cube = base.cube();
    let list = pairs.pairs(cube)?;
    check_budget(cube, pairs, list.len())?;
    if list.is_empty() {
        return Err(Error::InvalidParameter("pair set is empty".into()));
    }
    let m = cube.edge_count();
    let n = cube.vertex_count();
    let caps = base.capacities();
    let inv_cap: Vec<f64> = caps.iter().map(|&c| if c > 0.0 { 1.0 / c } else { f64::INFINITY }).collect();
    // Lengths l ≡ 1 give the cut bound Σ c_e / Σ_j d(u_j, v_j).
    let trivial_bound = caps.iter().sum::<f64>() / pairs.distance_sum(cube)?;
    // Unit lengths on the star of v give φ ≤ c(δ(v)) / #pairs ending at v.
    let mut ends = vec![0usize; n];
    for &(s, t) in &list {
        ends[s as usize] += 1;
        ends[t as usize] += 1;
    }
    let star_bound = (0..n as Vertex)
        .filter(|&v| ends[v as usize] > 0)
        .map(|v| (0..cube.dim()).map(|j| caps[cube.edge_index_at(v, j)]).sum::<f64>() / ends[v as usize] as f64)
        .fold(f64::INFINITY, f64::min);

    let initial: Vec<Option<(f64, Vec<u32>)>> = list
        .par_iter()
        .map_init(|| Scratch::new(n), |sc, &(s, t)| shortest_path(cube, &inv_cap, s, t, sc))
        .collect();
    if initial.iter().any(|p| p.is_none()) {
        let flows = keep_flows.then(|| list.iter().map(|&p| (p, DirectedFlow::zero(cube))).collect());
        return Ok(ConcurrentFlowResult { phi_hat: 0.0, dual_bound: 0.0, passes: 0, certified: true, flows });
    }
    let mut routes: Vec<PathSet> = list
        .par_iter()
        .zip(initial)
        .map(|(&(s, t), fallback)| {
            let paths = geodesic_paths(cube, caps, s, t);
            if paths.is_empty() {
                vec![(fallback.expect("connected").1, 1.0)]
            } else {
                let share = 1.0 / paths.len() as f64;
                paths.into_iter().map(|p| (p, share)).collect()
            }
        })
        .collect();
    let mut load = vec![0.0; m];
    for r in &routes {
        for (path, x) in r {
            for &a in path {
                load[a as usize / 2] += x;
            }
        }
    }

    let ln_m = (m as f64).ln().max(1.0);
    let mut stage_omega: f64 = 0.5f64.max(omega);
    let final_omega = omega / 2.0;
    let mut best_bound = trivial_bound.min(star_bound);
    let mut lengths = vec![0.0; m];
    let mut on_target = vec![false; m];
    let mut passes = 0;
    let mut certified = false;
    let congestion = |load: &[f64]| -> f64 {
        load.iter().zip(&inv_cap).filter(|(l, _)| **l > 0.0).map(|(l, ic)| l * ic).fold(0.0, f64::max)
    };
    while passes < params.max_passes {
        if params.deadline.is_some_and(|t| Instant::now() > t) {
            return Err(Error::Timeout);
        }
        passes += 1;
        let lambda = congestion(&load);
        let eta = ETA_SCALE * ln_m / (stage_omega * lambda);
        let mut potential = 0.0;
        for e in 0..m {
            if caps[e] > 0.0 {
                let w = (eta * (load[e] * inv_cap[e] - lambda)).exp();
                potential += w;
                lengths[e] = w * inv_cap[e];
            } else {
                lengths[e] = f64::INFINITY;
            }
        }
        let paths: Vec<(f64, Vec<u32>)> = list
            .par_iter()
            .map_init(|| Scratch::new(n), |sc, &(s, t)| shortest_path(cube, &lengths, s, t, sc).expect("connected"))
            .collect();
        let dist_sum: f64 = paths.iter().map(|p| p.0).sum();
        best_bound = best_bound.min(potential / dist_sum);
        let phi = 1.0 / lambda;
        if phi >= (1.0 - omega) * best_bound {
            certified = true;
            break;
        }
        if stage_omega > final_omega && phi >= (1.0 - 2.0 * stage_omega) * best_bound {
            stage_omega = (stage_omega / 2.0).max(final_omega);
        }

        // Gauss-Seidel sweeps: shift flow from each path to the new shortest path by a
        // projected Newton step on the potential, using the live loads; then rebalance
        // within the known paths without new shortest-path searches.
        let pot = Potential { eta, lambda, inv_cap: &inv_cap };
        for (j, (_, best)) in paths.into_iter().enumerate() {
            let r = &mut routes[j];
            let target = match r.iter().position(|(p, _)| *p == best) {
                Some(i) => i,
                None => {
                    r.push((best, 0.0));
                    r.len() - 1
                }
            };
            pot.shift_toward(r, target, &mut load, &mut on_target);
        }
        for _ in 0..params.inner_sweeps {
            let mut moved = 0.0;
            for r in routes.iter_mut().filter(|r| r.len() > 1) {
                let target = (0..r.len())
                    .map(|i| (i, pot.path_length(&r[i].0, &load)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| i)
                    .expect("nonempty");
                moved += pot.shift_toward(r, target, &mut load, &mut on_target);
            }
            if moved == 0.0 {
                break;
            }
        }
    }
    // Recompute loads from scratch to avoid drift.
    load.iter_mut().for_each(|l| *l = 0.0);
    for r in &routes {
        for (path, x) in r {
            for &a in path {
                load[a as usize / 2] += x;
            }
        }
    }
    let lambda = congestion(&load);
    let phi_hat = 1.0 / lambda;
    let flows = keep_flows.then(|| {
        list.iter()
            .zip(&routes)
            .map(|(&pair, r)| {
                let mut signed = vec![0.0; m];
                for (path, x) in r {
                    for &a in path {
                        let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
                        signed[a as usize / 2] += sign * x * phi_hat;
                    }
                }
                (pair, DirectedFlow::from_signed(cube, signed).expect("length matches"))
            })
            .collect()
    });
    Ok(ConcurrentFlowResult {
        phi_hat,
        dual_bound: best_bound.max(phi_hat),
        passes,
        certified: certified || phi_hat >= (1.0 - omega) * best_bound,
        flows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::balance_report;

    #[test]
    fn single_edge() {
        let net = CapacityNetwork::from_capacities(Cube::new(1).unwrap(), vec![0.6]).unwrap();
        let r = max_concurrent_uniform(&net, &PairSet::Opp, &ConcurrentParams::default()).unwrap();
        assert!((r.phi_hat - 0.6).abs() < 1e-12 && r.certified);
    }

    #[test]
    fn square_opp() {
        let net = CapacityNetwork::constant(Cube::new(2).unwrap(), 1.0);
        let params = ConcurrentParams::default();
        let r = max_concurrent_uniform(&net, &PairSet::Opp, &params).unwrap();
        assert!(r.phi_hat >= 1.0 - params.omega && r.phi_hat <= 1.0 + 1e-12);
        assert!(r.certified && r.dual_bound >= 1.0 - 1e-12);
        for ((u, v), f) in r.flows.as_ref().unwrap() {
            let b = balance_report(f, &[*u], &[*v]).unwrap();
            assert!(b.is_proper() && (b.volume - r.phi_hat).abs() < 1e-9);
        }
    }

    #[test]
    fn flows_are_feasible_together() {
        let net = CapacityNetwork::sample(
            &crate::capacities::CapacityDistribution::Uniform01,
            Cube::new(4).unwrap(),
            7,
        )
        .unwrap();
        let r = max_concurrent_uniform(&net, &PairSet::Opp, &ConcurrentParams::default()).unwrap();
        let mut load = vec![0.0; net.cube().edge_count()];
        for (_, f) in r.flows.as_ref().unwrap() {
            for (i, x) in f.signed_values().iter().enumerate() {
                load[i] += x.abs();
            }
        }
        for (i, l) in load.iter().enumerate() {
            assert!(*l <= net.capacity(i) * (1.0 + 1e-9) + 1e-12);
        }
        assert!(r.phi_hat <= r.dual_bound * (1.0 + 1e-12));
    }

    #[test]
    fn disconnected_gives_zero() {
        let cube = Cube::new(3).unwrap();
        let mut caps = vec![1.0; cube.edge_count()];
        for j in 0..3 {
            caps[cube.edge_index_at(0, j)] = 0.0;
        }
        let net = CapacityNetwork::from_capacities(cube, caps).unwrap();
        let r = max_concurrent_uniform(&net, &PairSet::Opp, &ConcurrentParams::default()).unwrap();
        assert_eq!(r.phi_hat, 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        let net = CapacityNetwork::constant(Cube::new(8).unwrap(), 1.0);
        assert!(matches!(
            max_concurrent_uniform(&net, &PairSet::All, &ConcurrentParams::default()),
            Err(Error::BudgetExceeded(_))
        ));
    }
}
