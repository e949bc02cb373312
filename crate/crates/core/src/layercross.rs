//! Near-balanced crossing flows through the middle layers, imbalance smoothing, and the
//! multi-layer middle flow V_ℓ → V_{k−ℓ}.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacities::CapacityModel;
use crate::error::{Error, Result};
use crate::flowcore::{balance_report, check_feasible, stitch_auto, DirectedFlow};
use crate::hypercube::{binomial, Cube, Subcube, Vertex};
use crate::netscale::ScaledNetwork;
use crate::oracle::maxflow::FlowGraph;
use crate::rng::{StreamTag, UnitStream};

pub const DEFAULT_SMOOTHING_RADIUS: u32 = 4;
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Thinning and smoothing parameters for one Bernoulli(p) indicator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerCrossParams {
    pub p_prime: f64,
    pub delta: f64,
    pub lambda: f64,
    pub smoothing_radius: u32,
    pub epsilon: f64,
}

impl LayerCrossParams {
    /// Smallest admissible p′: max{p/(1+p), p/(1+ε)}.
    pub fn p_prime_floor(p: f64, epsilon: f64) -> f64 {
        (p / (1.0 + p)).max(p / (1.0 + epsilon))
    }

    /// floor + 0.8·(p − floor); p′ = 1 when p = 1.
    pub fn default_p_prime(p: f64, epsilon: f64) -> f64 {
        if p >= 1.0 {
            return 1.0;
        }
        let floor = Self::p_prime_floor(p, epsilon);
        floor + 0.8 * (p - floor)
    }

    /// δ from (1−p) = (1−p′)(1−δ).
    pub fn delta_for(p: f64, p_prime: f64) -> f64 {
        if p_prime >= 1.0 {
            0.0
        } else {
            1.0 - (1.0 - p) / (1.0 - p_prime)
        }
    }

    pub fn for_probability(p: f64, epsilon: f64, lambda: f64, smoothing_radius: u32) -> Result<Self> {
        let p_prime = Self::default_p_prime(p, epsilon);
        let params = LayerCrossParams { p_prime, delta: Self::delta_for(p, p_prime), lambda, smoothing_radius, epsilon };
        params.validate(p)?;
        Ok(params)
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(p > 0.0 && p <= 1.0) {
            return bad(format!("layer probability p = {p} must lie in (0, 1]"));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon = {} must be positive", self.epsilon));
        }
        if p < 1.0 {
            let floor = Self::p_prime_floor(p, self.epsilon);
            if !(self.p_prime >= floor * (1.0 - 1e-12) && self.p_prime < p) {
                return bad(format!("p' = {} must lie in [{floor}, {p})", self.p_prime));
            }
        } else if self.p_prime != 1.0 {
            return bad(format!("p' = {} must equal 1 when p = 1", self.p_prime));
        }
        if ((1.0 - p) - (1.0 - self.p_prime) * (1.0 - self.delta)).abs() > 1e-12 {
            return bad(format!("delta = {} is inconsistent with p = {p}, p' = {}", self.delta, self.p_prime));
        }
        if !(self.lambda > 0.5 && self.lambda < 1.0) {
            return bad(format!("lambda = {} must lie in (1/2, 1)", self.lambda));
        }
        if self.smoothing_radius < 2 || self.smoothing_radius % 2 != 0 {
            return bad(format!("smoothing radius {} must be even and >= 2", self.smoothing_radius));
        }
        Ok(())
    }
}

/// The bipartite graph between frame layers m−1 and m.
#[derive(Clone, Debug)]
pub struct LayerGraph {
    pub cube: Cube,
    pub frame: Subcube,
    pub m: u32,
    pub lower: Vec<Vertex>,
    pub upper: Vec<Vertex>,
    slot: Vec<u32>,
}

impl LayerGraph {
    pub fn new(cube: Cube, frame: Subcube, m: u32) -> Result<Self> {
        if m == 0 || m > frame.k {
            return Err(Error::LayerOutOfRange { m, d: frame.k });
        }
        let lower = frame.layer(m - 1);
        let upper = frame.layer(m);
        let mut slot = vec![u32::MAX; cube.vertex_count()];
        for (i, &x) in lower.iter().chain(&upper).enumerate() {
            slot[x as usize] = i as u32;
        }
        Ok(LayerGraph { cube, frame, m, lower, upper, slot })
    }

    /// Index into lower ++ upper.
    #[inline]
    pub fn slot(&self, x: Vertex) -> usize {
        self.slot[x as usize] as usize
    }

    pub fn len(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        self.lower.iter().chain(&self.upper).copied()
    }

    #[inline]
    pub fn is_upper(&self, x: Vertex) -> bool {
        self.frame.layer_of(x) == self.m
    }

    /// Number of cube edges a vertex has across the layer pair.
    pub fn side_degree(&self, x: Vertex) -> u32 {
        if self.is_upper(x) {
            self.m
        } else {
            self.frame.k - self.m + 1
        }
    }

    /// Free coordinates whose flip moves `x` to the other side.
    #[inline]
    fn crossing_bits(&self, x: Vertex) -> u32 {
        let rel = (x ^ self.frame.u) & self.frame.free_bits;
        if self.is_upper(x) {
            rel
        } else {
            self.frame.free_bits & !rel
        }
    }

    /// |E_m| of the frame.
    pub fn edge_count(&self) -> f64 {
        self.m as f64 * binomial(self.frame.k, self.m) as f64
    }

    /// (lower, upper, edge index) for every edge of the layer pair.
    pub fn edges(&self) -> Vec<(Vertex, Vertex, usize)> {
        let mut out = Vec::with_capacity(self.edge_count() as usize);
        for &x in &self.lower {
            let mut bits = self.crossing_bits(x);
            while bits != 0 {
                let j = bits.trailing_zeros();
                bits &= bits - 1;
                out.push((x, x ^ (1 << j), self.cube.edge_index_at(x, j)));
            }
        }
        out
    }
}

/// Output of the imbalance smoothing step.
#[derive(Clone, Debug)]
pub struct SmoothOutcome {
    pub flow: DirectedFlow,
    /// Residual per vertex (lower ++ upper): net outflow of `flow` equals ψ + θ.
    pub theta: Vec<f64>,
    /// Mass deposited at each vertex by the pulses.
    pub received: Vec<f64>,
    pub smoothed: Vec<bool>,
    /// Radius actually used after clamping to the layer geometry.
    pub radius: u32,
}

/// Spread each vertex's ψ over same-side vertices reachable by `radius/2` swaps along
/// B_δ edges. Every swap flips two fresh coordinates, so walks never return toward the
/// start; a pulse that cannot continue deposits its mass where it stands.
pub fn smooth_pulse(graph: &LayerGraph, b_delta: &[bool], delta: f64, psi: &[f64], radius: u32) -> SmoothOutcome {
    let n = graph.len();
    let max_swaps = (graph.m - 1).min(graph.frame.k - graph.m);
    let swaps = (radius / 2).min(max_swaps);
    let mut flow = DirectedFlow::zero(graph.cube);
    let mut received = vec![0.0; n];
    let mut smoothed = vec![false; n];
    let open = |x: Vertex, j: u32| b_delta[graph.cube.edge_index_at(x, j)];
    for x in graph.vertices() {
        let sx = graph.slot(x);
        let mass0 = psi[sx];
        let mut bits = graph.crossing_bits(x);
        let mut degree = 0;
        while bits != 0 {
            let j = bits.trailing_zeros();
            bits &= bits - 1;
            degree += open(x, j) as u32;
        }
        if (degree as f64) < delta * graph.side_degree(x) as f64 / 2.0 {
            continue;
        }
        smoothed[sx] = true;
        if mass0 == 0.0 {
            continue;
        }
        let mut frontier: Vec<(Vertex, f64)> = vec![(x, mass0)];
        for _ in 0..swaps {
            let mut next: BTreeMap<Vertex, f64> = BTreeMap::new();
            for &(y, mass) in &frontier {
                let mut moves = Vec::new();
                let mut first = graph.crossing_bits(y) & !(y ^ x);
                while first != 0 {
                    let i = first.trailing_zeros();
                    first &= first - 1;
                    if !open(y, i) {
                        continue;
                    }
                    let a = y ^ (1 << i);
                    let mut second = graph.crossing_bits(a) & !(a ^ x);
                    while second != 0 {
                        let j = second.trailing_zeros();
                        second &= second - 1;
                        if open(a, j) {
                            moves.push((a, a ^ (1 << j)));
                        }
                    }
                }
                if moves.is_empty() {
                    received[graph.slot(y)] += mass;
                    continue;
                }
                let share = mass / moves.len() as f64;
                for (a, b) in moves {
                    flow.push(y, a, share);
                    flow.push(a, b, share);
                    *next.entry(b).or_insert(0.0) += share;
                }
            }
            frontier = next.into_iter().collect();
        }
        for (y, mass) in frontier {
            received[graph.slot(y)] += mass;
        }
    }
    let theta = (0..n).map(|i| -received[i] - if smoothed[i] { 0.0 } else { psi[i] }).collect();
    SmoothOutcome { flow, theta, received, smoothed, radius: 2 * swaps }
}

/// Diagnostics of one crossing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerCrossReport {
    pub m: u32,
    /// lower ++ upper.
    pub vertices: Vec<Vertex>,
    pub rho: Vec<f64>,
    pub psi_input: Vec<f64>,
    pub theta_residual: Vec<f64>,
    pub achieved_volume: f64,
    pub mu_achieved: f64,
    pub max_utilization: f64,
    pub deviant: usize,
    pub skipped: usize,
    pub radius: u32,
}

/// Crossing V_{m−1} → V_m on the edges where `open` holds, for an indicator with
/// open probability `p`; the target volume is p·scale.
pub fn cross_layer_indicator(
    graph: &LayerGraph,
    open: &dyn Fn(usize) -> bool,
    p: f64,
    scale: f64,
    params: &LayerCrossParams,
    seed: u64,
) -> Result<(DirectedFlow, LayerCrossReport)> {
    params.validate(p)?;
    let m = graph.m;
    let k = graph.frame.k;
    let unit = scale / graph.edge_count();
    let ratio = p / params.p_prime;
    let q1 = params.p_prime * (1.0 - params.delta) / p;
    let q2 = (1.0 - params.p_prime) * params.delta / p;
    let mut stream = UnitStream::new(seed, StreamTag::Thin);
    let mut b_delta = vec![false; graph.cube.edge_count()];
    let mut d_prime = vec![0u32; graph.len()];
    let mut flow = DirectedFlow::zero(graph.cube);
    let mut opened = Vec::new();
    for (x, y, idx) in graph.edges() {
        if !open(idx) {
            continue;
        }
        opened.push(idx);
        let u = stream.at(idx as u64);
        let (in_prime, in_delta) = if u < q1 {
            (true, false)
        } else if u < q1 + q2 {
            (false, true)
        } else {
            (true, true)
        };
        b_delta[idx] = in_delta;
        if in_prime {
            d_prime[graph.slot(x)] += 1;
            d_prime[graph.slot(y)] += 1;
            flow.push(x, y, ratio * unit);
        }
    }
    if d_prime.iter().all(|&c| c == 0) {
        return Err(Error::NoCapacity { m });
    }

    let lower_n = graph.lower.len();
    let (target_lower, target_upper) = (p * scale / lower_n as f64, p * scale / graph.upper.len() as f64);
    let deviation_limit = (k as f64).powf(params.lambda);
    let mut rho = vec![0.0; graph.len()];
    let mut deviant = vec![false; graph.len()];
    for (i, x) in graph.vertices().enumerate() {
        let sent = ratio * d_prime[i] as f64 * unit;
        rho[i] = if i < lower_n { target_lower - sent } else { sent - target_upper };
        deviant[i] = (d_prime[i] as f64 - params.p_prime * graph.side_degree(x) as f64).abs() > deviation_limit;
    }
    let side_mean = |range: std::ops::Range<usize>| {
        let (sum, count) =
            range.filter(|&i| !deviant[i]).fold((0.0, 0usize), |(s, c), i| (s + rho[i], c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };
    let means = [side_mean(0..lower_n), side_mean(lower_n..graph.len())];
    let psi: Vec<f64> = (0..graph.len())
        .map(|i| if deviant[i] { 0.0 } else { rho[i] - means[(i >= lower_n) as usize] })
        .collect();

    let smooth = smooth_pulse(graph, &b_delta, params.delta, &psi, params.smoothing_radius);
    flow.add_scaled(&smooth.flow, 1.0);
    let balance = balance_report(&flow, &graph.lower, &graph.upper)?;
    let max_utilization = opened.iter().map(|&i| flow.signed(i).abs() / unit).fold(0.0, f64::max);
    let skipped = smooth.smoothed.iter().zip(&deviant).filter(|(s, d)| !**s && !**d).count();
    let report = LayerCrossReport {
        m,
        vertices: graph.vertices().collect(),
        rho,
        psi_input: psi,
        theta_residual: smooth.theta,
        achieved_volume: balance.volume,
        mu_achieved: balance.mu,
        max_utilization,
        deviant: deviant.iter().filter(|&&d| d).count(),
        skipped,
        radius: smooth.radius,
    };
    Ok((flow, report))
}

/// Crossing of layer m of a scaled network, using positive capacities as the indicator.
pub fn cross_layer(
    net: &ScaledNetwork,
    m: u32,
    p: f64,
    params: &LayerCrossParams,
    seed: u64,
) -> Result<(DirectedFlow, LayerCrossReport)> {
    let (ell, k) = (net.ell(), net.k());
    if m < ell + 1 || m + ell > k {
        return Err(Error::LayerOutOfRange { m, d: k });
    }
    let graph = LayerGraph::new(net.cube(), *net.frame(), m)?;
    let base = net.base();
    cross_layer_indicator(&graph, &|i| base.capacity(i) > 0.0, p, net.mode_factor(), params, seed)
}

/// How the middle flow is built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiddleMethod {
    /// Per-layer thinning crossings, smoothing and a single stitch.
    #[default]
    Crossing,
    /// Exact max flow with terminal arcs capped at the balanced shares.
    Maxflow,
}

/// Parameters of the middle construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MiddleParams {
    pub epsilon: f64,
    pub lambda: f64,
    pub smoothing_radius: u32,
    pub method: MiddleMethod,
}

impl MiddleParams {
    /// λ defaults to the midpoint of (1/2, κ).
    pub fn for_kappa(kappa: f64) -> Self {
        MiddleParams {
            epsilon: DEFAULT_EPSILON,
            lambda: 0.25 + kappa / 2.0,
            smoothing_radius: DEFAULT_SMOOTHING_RADIUS,
            method: MiddleMethod::Crossing,
        }
    }
}

impl Default for MiddleParams {
    fn default() -> Self {
        Self::for_kappa(0.6)
    }
}

/// One row of the per-layer diagnostic dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerDiagnostics {
    pub atom: f64,
    pub m: u32,
    pub achieved_volume: f64,
    pub mu: f64,
    pub max_utilization: f64,
}

/// Bounds the middle flow is meant to meet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MiddleBounds {
    /// μ ≤ d⁻².
    pub mu: bool,
    /// volume ≥ (1−d⁻²)·target.
    pub volume: bool,
    /// Feasible against (1+ε)·middle capacities.
    pub feasible: bool,
}

#[derive(Clone, Debug)]
pub struct MiddleOutcome {
    pub flow: DirectedFlow,
    pub sources: Vec<Vertex>,
    pub sinks: Vec<Vertex>,
    pub volume: f64,
    pub target_volume: f64,
    pub mu: f64,
    /// Largest stitch θ over atoms (0 for max flow).
    pub theta: f64,
    pub max_utilization: f64,
    pub method: MiddleMethod,
    pub layers: Vec<LayerDiagnostics>,
    pub bounds: MiddleBounds,
}

fn middle_range(net: &ScaledNetwork) -> Result<(u32, u32)> {
    let (ell, k) = (net.ell(), net.k());
    if k < 2 * ell + 1 {
        return Err(Error::DegenerateLayering { d: k, ell, constraint: "k >= 2*ell + 1" });
    }
    Ok((ell, k - ell))
}

/// Per-atom, per-layer crossings without stitching: (atom value, flows by layer, diagnostics).
pub fn cross_all_layers(
    net: &ScaledNetwork,
    model: &CapacityModel,
    params: &MiddleParams,
    seed: u64,
) -> Result<Vec<(f64, DirectedFlow, Vec<LayerCrossReport>)>> {
    let (lo, hi) = middle_range(net)?;
    let base = net.base();
    let cube = net.cube();
    let graphs: Vec<LayerGraph> =
        (lo + 1..=hi).map(|m| LayerGraph::new(cube, *net.frame(), m)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, atom) in model.atoms.iter().enumerate() {
        let lp = LayerCrossParams::for_probability(atom.prob, params.epsilon, params.lambda, params.smoothing_radius)?;
        let indicator = |e: usize| model.atom_of(base.capacity(e)) == Some(i);
        let layers: Vec<(DirectedFlow, LayerCrossReport)> = graphs
            .par_iter()
            .map(|g| cross_layer_indicator(g, &indicator, atom.prob, net.mode_factor(), &lp, seed))
            .collect::<Result<_>>()?;
        let mut flow = DirectedFlow::zero(cube);
        let mut reports = Vec::with_capacity(layers.len());
        for (f, r) in layers {
            flow.add_scaled(&f, 1.0);
            reports.push(r);
        }
        out.push((atom.value, flow, reports));
    }
    Ok(out)
}

fn middle_caps(net: &ScaledNetwork, factor: f64) -> Vec<f64> {
    let cube = net.cube();
    cube.edges().map(|e| factor * net.middle_capacity(e)).collect()
}

/// Middle flow V_ℓ → V_{k−ℓ} of the frame.
pub fn build_middle(
    net: &ScaledNetwork,
    model: &CapacityModel,
    params: &MiddleParams,
    seed: u64,
) -> Result<MiddleOutcome> {
    let (lo, hi) = middle_range(net)?;
    let sources = net.frame().layer(lo);
    let sinks = net.frame().layer(hi);
    let target_volume = net.mode_factor() * model.discrete_mean();
    let cube = net.cube();
    let (flow, theta, layers) = match params.method {
        MiddleMethod::Crossing => {
            let mut flow = DirectedFlow::zero(cube);
            let mut theta: f64 = 0.0;
            let mut layers = Vec::new();
            for (value, raw, reports) in cross_all_layers(net, model, params, seed)? {
                for r in &reports {
                    layers.push(LayerDiagnostics {
                        atom: value,
                        m: r.m,
                        achieved_volume: r.achieved_volume,
                        mu: r.mu_achieved,
                        max_utilization: r.max_utilization,
                    });
                }
                let stitched = stitch_auto(&raw, &sources, &sinks)?;
                theta = theta.max(stitched.theta);
                flow.add_scaled(&stitched.flow, value);
            }
            (flow, theta, layers)
        }
        MiddleMethod::Maxflow => (balanced_max_flow(net, &sources, &sinks, target_volume, lo, hi)?, 0.0, Vec::new()),
    };
    let balance = balance_report(&flow, &sources, &sinks)?;
    let d = cube.dim() as f64;
    let caps = middle_caps(net, 1.0 + params.epsilon);
    let feasibility = check_feasible(&flow, &caps, 1e-12);
    let unit_caps = middle_caps(net, 1.0);
    let max_utilization = flow
        .signed_values()
        .iter()
        .zip(&unit_caps)
        .filter(|(f, _)| **f != 0.0)
        .map(|(f, c)| f.abs() / c)
        .fold(0.0, f64::max);
    Ok(MiddleOutcome {
        bounds: MiddleBounds {
            mu: balance.mu <= d.powi(-2),
            volume: balance.volume >= (1.0 - d.powi(-2)) * target_volume,
            feasible: feasibility.feasible,
        },
        flow,
        sources,
        sinks,
        volume: balance.volume,
        target_volume,
        mu: balance.mu,
        theta,
        max_utilization,
        method: params.method,
        layers,
    })
}

fn balanced_max_flow(
    net: &ScaledNetwork,
    sources: &[Vertex],
    sinks: &[Vertex],
    target: f64,
    lo: u32,
    hi: u32,
) -> Result<DirectedFlow> {
    let cube = net.cube();
    let n = cube.vertex_count();
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    let mut arcs = Vec::new();
    for m in lo + 1..=hi {
        let graph = LayerGraph::new(cube, *net.frame(), m)?;
        for (x, y, idx) in graph.edges() {
            let c = net.middle_capacity(cube.edge_at(idx));
            if c > 0.0 {
                let a = g.add_arc(x as usize, y as usize, c);
                let b = g.add_arc(y as usize, x as usize, c);
                // Signed values are oriented from the endpoint with the edge's bit clear.
                let sign = if cube.edge_at(idx).lower == x { 1.0 } else { -1.0 };
                arcs.push((idx, a, b, sign));
            }
        }
    }
    for &x in sources {
        g.add_arc(s, x as usize, target / sources.len() as f64);
    }
    for &y in sinks {
        g.add_arc(y as usize, t, target / sinks.len() as f64);
    }
    let value = g.max_flow(s, t);
    if value <= 0.0 {
        return Err(Error::NoCapacity { m: lo + 1 });
    }
    let mut values = vec![0.0; cube.edge_count()];
    for (idx, a, b, sign) in arcs {
        values[idx] = sign * (g.flow_on(a) - g.flow_on(b));
    }
    DirectedFlow::from_signed(cube, values)
}

/// Write per-layer diagnostics as CSV (m, achieved volume, μ, max edge utilization).
pub fn write_layer_diagnostics<W: Write>(writer: W, rows: &[LayerDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
