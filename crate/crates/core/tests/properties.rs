//! Property tests for the structural invariants of every module.

use std::collections::HashSet;

use proptest::prelude::*;

use cubeflow::assemble::{solve_uniform, PipelineParams, SolveOptions, UniformMode};
use cubeflow::capacities::coupled_reductions;
use cubeflow::escape::{far_targets, split_to_subcube_boundaries, EscapeContext, OpenEdges};
use cubeflow::flowcore::{
    balance_report, check_feasible, compensated_sum, decompose, stitch, DirectedFlow, THETA_LIMIT,
};
use cubeflow::hypercube::{binomial, distance, Subcube};
use cubeflow::layercross::{smooth_pulse, LayerCrossParams, LayerGraph, MiddleMethod};
use cubeflow::netscale::{audit_antipodal_superposition, ScaledNetwork, ScalingParams};
use cubeflow::oracle::bounds::{upper_bounds, PairSet};
use cubeflow::oracle::concurrent::{max_concurrent_value, ConcurrentParams};
use cubeflow::oracle::maxflow::max_flow_single;
use cubeflow::{CapacityDistribution, CapacityNetwork, Cube, Vertex};

fn distribution() -> impl Strategy<Value = CapacityDistribution> {
    prop_oneof![
        (0.55f64..=1.0).prop_map(|p| CapacityDistribution::bernoulli(p).unwrap()),
        Just("uniform01".parse().unwrap()),
        (0.1f64..0.9, 0.05f64..0.3).prop_map(|(v, q)| {
            CapacityDistribution::finite(vec![(v, 0.7 - q), (1.0 + v, 0.3 + q)]).unwrap()
        }),
    ]
}

/// A random simple path from `s` that only moves along the listed coordinate order.
fn monotone_path(cube: Cube, s: Vertex, t: Vertex, rotation: usize) -> Vec<Vertex> {
    let dims: Vec<u32> = (0..cube.dim()).filter(|&j| (s ^ t) >> j & 1 == 1).collect();
    let mut path = vec![s];
    let mut x = s;
    for i in 0..dims.len() {
        x ^= 1 << dims[(i + rotation) % dims.len()];
        path.push(x);
    }
    path
}

/// A proper s→t flow built from weighted monotone paths plus a circulation.
fn proper_flow(cube: Cube, s: Vertex, t: Vertex, weights: &[f64], with_cycle: bool) -> DirectedFlow {
    let mut f = DirectedFlow::zero(cube);
    for (r, &w) in weights.iter().enumerate() {
        f.add_path(&monotone_path(cube, s, t, r), w);
    }
    if with_cycle && cube.dim() >= 2 {
        f.add_path(&[s, s ^ 1, s ^ 3, s ^ 2, s], 0.125);
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn matchings_have_d_minus_one_disjoint_three_paths(d in 2u32..=8, u in any::<u32>(), j in any::<u32>()) {
        let cube = Cube::new(d).unwrap();
        let u = u & cube.full_mask();
        let v = u ^ (1 << (j % d));
        let pairs = cube.neighborhood_matching(u, v).unwrap();
        prop_assert_eq!(pairs.len() as u32, d - 1);
        let mut seen = HashSet::new();
        for (w1, w2) in pairs {
            prop_assert_eq!(distance(u, w1), 1);
            prop_assert_eq!(distance(w1, w2), 1);
            prop_assert_eq!(distance(w2, v), 1);
            prop_assert!(seen.insert(w1) && seen.insert(w2));
            prop_assert!(![u, v].contains(&w1) && ![u, v].contains(&w2));
        }
    }

    #[test]
    fn boundary_sets_lie_in_layer_and_subcube(d in 1u32..=10, u in any::<u32>(), v in any::<u32>(), ell in 0u32..=10) {
        let cube = Cube::new(d).unwrap();
        let (u, v) = (u & cube.full_mask(), v & cube.full_mask());
        prop_assume!(u != v);
        let k = distance(u, v);
        prop_assume!(ell <= k);
        let set = cube.boundary_set(u, v, ell).unwrap();
        prop_assert_eq!(set.len() as u64, binomial(k, ell));
        let sub = Subcube::spanning(u, v);
        for x in set {
            prop_assert_eq!(distance(u, x), ell);
            prop_assert!(sub.contains(x));
        }
    }

    #[test]
    fn truncation_and_discretization_are_dominated(dist in distribution(), d in 3u32..=9, seed in any::<u64>()) {
        let r = coupled_reductions(&dist, Cube::new(d).unwrap(), seed, 0.05).unwrap();
        prop_assert_eq!(r.truncation_violations, 0);
        prop_assert_eq!(r.discretization_violations, 0);
        prop_assert!(r.law_gap < 0.05);
    }

    #[test]
    fn sampling_is_deterministic(dist in distribution(), d in 1u32..=10, seed in any::<u64>()) {
        let cube = Cube::new(d).unwrap();
        let a = CapacityNetwork::sample(&dist, cube, seed).unwrap();
        let b = CapacityNetwork::sample(&dist, cube, seed).unwrap();
        let bits = |n: &CapacityNetwork| n.capacities().iter().map(|c| c.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn scaled_capacity_is_monotone_and_homogeneous(seed in any::<u64>(), edge in any::<usize>(), factor in 0.0f64..4.0) {
        let cube = Cube::new(9).unwrap();
        let net = CapacityNetwork::sample(&"uniform01".parse().unwrap(), cube, seed).unwrap();
        let i = edge % cube.edge_count();
        let mut caps = net.capacities().to_vec();
        caps[i] *= factor;
        let other = CapacityNetwork::from_capacities(cube, caps).unwrap();
        let params = ScalingParams { m: 7.0, ..ScalingParams::default() };
        let e = cube.edge_at(i);
        let a = ScaledNetwork::antipodal(&net, 0, params).unwrap().scaled_capacity(e);
        let b = ScaledNetwork::antipodal(&other, 0, params).unwrap().scaled_capacity(e);
        prop_assert!((b - factor * a).abs() <= 1e-15 * a.max(1e-300));
        if factor >= 1.0 { prop_assert!(b >= a); } else { prop_assert!(b <= a); }
    }

    #[test]
    fn superposition_identity_holds_on_every_edge(dist in distribution(), d in 7u32..=9, m in 1.0f64..20.0, seed in any::<u64>()) {
        let net = CapacityNetwork::sample(&dist, Cube::new(d).unwrap(), seed).unwrap();
        let params = ScalingParams { m, ..ScalingParams::default() };
        let audit = audit_antipodal_superposition(&net, &params).unwrap();
        for (&dem, &c) in audit.demand.iter().zip(net.capacities()) {
            let expected = (1.0 + audit.epsilon_d) * c;
            prop_assert!((dem - expected).abs() <= 1e-10 * expected.max(1e-300) || (c == 0.0 && dem == 0.0));
        }
    }

    #[test]
    fn net_outflows_sum_to_zero(d in 2u32..=8, seed in any::<u64>(), k in 1usize..20) {
        let cube = Cube::new(d).unwrap();
        let net = CapacityNetwork::sample(&"uniform01".parse().unwrap(), cube, seed).unwrap();
        let values: Vec<f64> = net.capacities().iter().map(|c| (c - 0.5) * k as f64).collect();
        let f = DirectedFlow::from_signed(cube, values).unwrap();
        let total = compensated_sum(f.net_outflows());
        prop_assert!(total.abs() <= 1e-12);
    }

    #[test]
    fn decompose_then_recombine_is_identity(
        d in 2u32..=8,
        s in any::<u32>(),
        weights in prop::collection::vec(0.01f64..1.0, 1..6),
        cycle in any::<bool>(),
    ) {
        let cube = Cube::new(d).unwrap();
        let s = s & cube.full_mask();
        let t = cube.antipode(s);
        let f = proper_flow(cube, s, t, &weights, cycle);
        let dec = decompose(&f, &[s], &[t]).unwrap();
        prop_assert!(dec.recombine(cube).max_difference(&f) <= 1e-9);
        prop_assert!((dec.path_volume() - weights.iter().sum::<f64>()).abs() <= 1e-9);
    }

    #[test]
    fn stitching_meets_its_three_guarantees(
        d in 3u32..=7,
        weights in prop::collection::vec(0.05f64..1.0, 1..5),
        leak in 0.0f64..1.0,
        theta_frac in 0.05f64..1.0,
    ) {
        let cube = Cube::new(d).unwrap();
        let (s, t) = (0, cube.antipode(0));
        let mut f = proper_flow(cube, s, t, &weights, false);
        let b = balance_report(&f, &[s], &[t]).unwrap();
        let theta = theta_frac * THETA_LIMIT;
        // Strand part of the flow halfway, keeping the imbalance below θ·size.
        let amount = leak * theta * b.size / 3.0;
        f.add_path(&monotone_path(cube, s, 0b11, 0), amount);
        let out = stitch(&f, &[s], &[t], theta).unwrap();
        prop_assert!(out.checks.all());
        prop_assert!(out.after.is_proper());
        for (i, (&g, &orig)) in out.flow.signed_values().iter().zip(f.signed_values()).enumerate() {
            prop_assert!(g * orig >= 0.0 && g.abs() <= orig.abs() + 1e-12, "edge {}", i);
        }
    }

    #[test]
    fn opposite_pushes_cancel(d in 1u32..=6, x in any::<u32>(), j in any::<u32>(), a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let cube = Cube::new(d).unwrap();
        let x = x & cube.full_mask();
        let y = x ^ (1 << (j % d));
        let mut f = DirectedFlow::zero(cube);
        f.push(x, y, a);
        f.push(y, x, b);
        let (fwd, back) = (f.get(x, y), f.get(y, x));
        prop_assert!(fwd == 0.0 || back == 0.0);
        prop_assert!((fwd - back - (a - b)).abs() <= 1e-15);
    }

    #[test]
    fn escape_plans_are_feasible_and_balanced(d in 7u32..=9, p in 0.8f64..=1.0, seed in any::<u64>(), u in any::<u32>()) {
        let cube = Cube::new(d).unwrap();
        let net = CapacityNetwork::sample(&CapacityDistribution::bernoulli(p).unwrap(), cube, seed).unwrap();
        let open = OpenEdges::at_threshold(&net, 1.0);
        let ctx = EscapeContext::new(open.clone(), 0.2).unwrap();
        let u = u & cube.full_mask();
        let ell = 2;
        if let Ok(plan) = ctx.propagate_to_shell(u, ell) {
            let b = balance_report(&plan.flow, &[u], &plan.shell).unwrap();
            prop_assert!(b.mu <= 1e-9 && (b.volume - 1.0).abs() <= 1e-9);
            let caps: Vec<f64> = cube
                .edges()
                .enumerate()
                .map(|(i, e)| {
                    let m = cube.edge_layer(u, e);
                    if open.is_open_index(i) { plan.m_used / (m as f64 * binomial(d, m) as f64) } else { 0.0 }
                })
                .collect();
            prop_assert!(check_feasible(&plan.flow, &caps, 1e-12).feasible);
            let (slices, _) = split_to_subcube_boundaries(&plan, &far_targets(cube, u)).unwrap();
            let mut total = vec![0.0; cube.edge_count()];
            for (_, s) in &slices {
                for (t, (&x, &whole)) in total.iter_mut().zip(s.signed_values().iter().zip(plan.flow.signed_values())) {
                    prop_assert!(x == 0.0 || x * whole > 0.0);
                    *t += x.abs();
                }
            }
            for (t, whole) in total.iter().zip(plan.flow.signed_values()) {
                prop_assert!(*t <= whole.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn thinning_recovers_the_open_probability(p in 0.55f64..1.0, eps in 0.01f64..0.5) {
        let pp = LayerCrossParams::default_p_prime(p, eps);
        let delta = LayerCrossParams::delta_for(p, pp);
        prop_assert!(pp >= LayerCrossParams::p_prime_floor(p, eps) && pp <= p);
        prop_assert!((1.0 - (1.0 - pp) * (1.0 - delta) - p).abs() <= 1e-12);
    }

    #[test]
    fn smoothing_conserves_mass(
        d in 4u32..=8,
        m_frac in 0.2f64..0.8,
        seed in any::<u64>(),
        radius in prop::sample::select(vec![2u32, 4, 6]),
    ) {
        let cube = Cube::new(d).unwrap();
        let m = ((d as f64 * m_frac).round() as u32).clamp(1, d);
        let g = LayerGraph::new(cube, Subcube::spanning(0, cube.full_mask()), m).unwrap();
        let net = CapacityNetwork::sample(&"uniform01".parse().unwrap(), cube, seed).unwrap();
        let b_delta: Vec<bool> = net.capacities().iter().map(|&c| c < 0.4).collect();
        let psi: Vec<f64> = (0..g.len()).map(|i| ((i * 37 + seed as usize % 11) % 7) as f64 / 7.0 - 0.4).collect();
        let out = smooth_pulse(&g, &b_delta, 0.4, &psi, radius);
        let outflow = out.flow.net_outflows();
        for (i, v) in g.vertices().enumerate() {
            prop_assert!((outflow[v as usize] - (psi[i] + out.theta[i])).abs() <= 1e-9);
        }
        // The smoothing flow is a flow, so the residuals absorb exactly the injected mass.
        let residual = compensated_sum(out.theta.iter().copied());
        prop_assert!((residual + compensated_sum(psi.iter().copied())).abs() <= 1e-9);
    }

    #[test]
    fn max_flow_matches_its_cut_and_is_monotone(d in 2u32..=6, seed in any::<u64>(), s in any::<u32>(), t in any::<u32>(), edge in any::<usize>(), bump in 0.0f64..2.0) {
        let cube = Cube::new(d).unwrap();
        let (s, t) = (s & cube.full_mask(), t & cube.full_mask());
        prop_assume!(s != t);
        let net = CapacityNetwork::sample(&"uniform01".parse().unwrap(), cube, seed).unwrap();
        let r = max_flow_single(cube, &net, s, t).unwrap();
        prop_assert!((r.value - r.cut_value).abs() <= 1e-9 * (1.0 + r.value));
        let mut caps = net.capacities().to_vec();
        let i = edge % caps.len();
        caps[i] += bump;
        let raised = max_flow_single(cube, &caps, s, t).unwrap();
        prop_assert!(raised.value >= r.value - 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn oracle_never_exceeds_the_cut_bound(dist in distribution(), d in 2u32..=6, seed in any::<u64>(), all in any::<bool>()) {
        let net = CapacityNetwork::sample(&dist, Cube::new(d).unwrap(), seed).unwrap();
        let pairs = if all { PairSet::All } else { PairSet::Opp };
        let bound = upper_bounds(&net, &pairs).unwrap();
        let r = max_concurrent_value(&net, &pairs, &ConcurrentParams::default()).unwrap();
        prop_assert!(r.phi_hat <= bound.bound * (1.0 + 1e-9) + 1e-12);
        prop_assert!(r.phi_hat <= r.dual_bound * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn uniform_solutions_are_feasible_and_bounded(p in 0.7f64..=1.0, d in 5u32..=7, seed in any::<u64>(), all in any::<bool>()) {
        let net = CapacityNetwork::sample(&CapacityDistribution::bernoulli(p).unwrap(), Cube::new(d).unwrap(), seed).unwrap();
        let mut params = PipelineParams { seed, ..PipelineParams::default() };
        params.middle.method = MiddleMethod::Maxflow;
        let (mode, pairs) = if all && d <= 6 { (UniformMode::All, PairSet::All) } else { (UniformMode::Opp, PairSet::Opp) };
        let sol = solve_uniform(&net, mode, &params, &SolveOptions { keep_flows: true, ..SolveOptions::default() }).unwrap();
        let bound = upper_bounds(&net, &pairs).unwrap().bound;
        prop_assert!(sol.phi <= bound * (1.0 + 1e-9));
        let flows = sol.final_flows().unwrap();
        let mut load = vec![0.0; net.cube().edge_count()];
        for (spec, f) in &flows {
            let b = balance_report(f, &[spec.u], &[spec.v]).unwrap();
            prop_assert!(b.is_proper());
            if sol.failures.is_empty() {
                prop_assert!((b.volume - sol.phi).abs() <= 1e-9);
            }
            for (l, x) in load.iter_mut().zip(f.signed_values()) {
                *l += x.abs();
            }
        }
        if sol.failures.is_empty() {
            for (l, &c) in load.iter().zip(net.capacities()) {
                prop_assert!(*l <= c * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}

#[test]
fn layer_edge_counts_sum_to_edge_total() {
    for d in 1..=16 {
        let cube = Cube::new(d).unwrap();
        let total: u64 = (1..=d).map(|m| cube.layer_sizes(m).unwrap().edges.unwrap()).sum();
        assert_eq!(total, d as u64 * (1 << (d - 1)));
    }
}

#[test]
fn each_edge_lies_in_layer_m_of_two_e_m_over_d_vertices() {
    for d in 1..=8 {
        let cube = Cube::new(d).unwrap();
        let n = cube.vertex_count() as Vertex;
        for e in cube.edges() {
            let mut count = vec![0u64; d as usize + 1];
            for v in 0..n {
                count[cube.edge_layer(v, e) as usize] += 1;
            }
            for m in 1..=d {
                let e_m = cube.layer_sizes(m).unwrap().edges.unwrap();
                assert_eq!(count[m as usize] * d as u64, 2 * e_m, "d = {d}, m = {m}");
            }
        }
    }
}
