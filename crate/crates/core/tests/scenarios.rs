//! Worked scenarios for each module, checked against values computed independently here.
//! Monte Carlo scenarios print their empirical rates.

use cubeflow::assemble::{solve_uniform, Pipeline, PipelineParams, SolveOptions, UniformMode};
use cubeflow::escape::{
    allocation_identity, classify_local_connectivity, far_targets, split_to_subcube_boundaries, EscapeContext,
    OpenEdges,
};
use cubeflow::flowcore::{balance_report, decompose, stitch, DirectedFlow};
use cubeflow::harness::{run_experiment, ExperimentConfig, RowStatus};
use cubeflow::hypercube::{distance, Subcube};
use cubeflow::layercross::{build_middle, MiddleMethod, MiddleParams};
use cubeflow::netscale::{subcube_identity, ScaledNetwork, ScalingParams};
use cubeflow::oracle::bounds::{upper_bounds, PairSet};
use cubeflow::oracle::concurrent::{max_concurrent_value, ConcurrentParams};
use cubeflow::oracle::lp::exact_concurrent;
use cubeflow::oracle::maxflow::max_flow_single;
use cubeflow::{CapacityDistribution, CapacityModel, CapacityNetwork, Cube, Error, Stage, Vertex};

/// n choose k by the multiplicative formula in exact integer steps.
fn choose(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

fn ones(d: u32) -> CapacityNetwork {
    CapacityNetwork::constant(Cube::new(d).unwrap(), 1.0)
}

fn ber(p: f64, d: u32, seed: u64) -> CapacityNetwork {
    CapacityNetwork::sample(&CapacityDistribution::bernoulli(p).unwrap(), Cube::new(d).unwrap(), seed).unwrap()
}

#[test]
fn middle_layer_of_q16_has_12870_vertices_and_102960_edges() {
    let cube = Cube::new(16).unwrap();
    let sizes = cube.layer_sizes(8).unwrap();
    assert_eq!(sizes.vertices, choose(16, 8));
    assert_eq!(sizes.edges, Some(8 * choose(16, 8)));
    assert_eq!((sizes.vertices, sizes.edges), (12870, Some(102960)));
}

#[test]
fn matching_across_a_top_coordinate_edge_lifts_by_that_bit() {
    let cube = Cube::new(4).unwrap();
    let pairs = cube.neighborhood_matching(0, 0b1000).unwrap();
    assert_eq!(pairs.len(), 3);
    let mut used = vec![0, 0b1000];
    for (w1, w2) in pairs {
        assert_eq!(w2, w1 | 0b1000);
        assert!(!used.contains(&w1) && !used.contains(&w2));
        used.extend([w1, w2]);
    }
}

#[test]
fn antipodal_boundary_at_radius_two_in_q6_has_fifteen_vertices() {
    let set = Cube::new(6).unwrap().boundary_set(0, 0b111111, 2).unwrap();
    assert_eq!(set.len() as u64, choose(6, 2));
    assert!(set.iter().all(|&x| x.count_ones() == 2));
}

#[test]
fn bernoulli_open_fraction_matches_p_within_three_sigma() {
    let net = ber(0.75, 10, 1);
    let n = net.cube().edge_count() as f64;
    let sigma = (0.75f64 * 0.25 / n).sqrt();
    assert!((net.open_fraction() - 0.75).abs() <= 3.0 * sigma, "{}", net.open_fraction());
}

#[test]
fn two_atom_law_equals_bernoulli_under_the_same_stream() {
    let cube = Cube::new(8).unwrap();
    let a = CapacityNetwork::sample(&"discrete:0@0.25,1@0.75".parse().unwrap(), cube, 4).unwrap();
    let b = CapacityNetwork::sample(&CapacityDistribution::bernoulli(0.75).unwrap(), cube, 4).unwrap();
    assert_eq!(a.capacities(), b.capacities());
}

#[test]
fn uniform_truncation_picks_the_largest_grid_point_above_the_margin() {
    // Largest k/128 with Pr[U >= k/128] = 1 − k/128 > 1/2 + 1/1024.
    let k = (0..=128).rev().find(|&k| 1.0 - k as f64 / 128.0 > 0.5 + 1.0 / 1024.0).unwrap();
    let c_star = k as f64 / 128.0;
    let t = "uniform01".parse::<CapacityDistribution>().unwrap().truncate_to_bernoulli().unwrap();
    assert_eq!(t.c_star, c_star);
    assert_eq!(t.p_star, 1.0 - c_star);
    assert_eq!((t.c_star, t.p_star), (0.4921875, 0.5078125));
    let two = "discrete:0@0.4,2@0.6".parse::<CapacityDistribution>().unwrap().truncate_to_bernoulli().unwrap();
    assert_eq!((two.c_star, two.p_star), (2.0, 0.6));
}

#[test]
fn uniform_discretization_floors_to_the_grid() {
    let u: CapacityDistribution = "uniform01".parse().unwrap();
    let q = u.discretize(0.25).unwrap();
    let atoms = q.atoms();
    assert_eq!(atoms.len(), 4);
    for (i, a) in atoms.iter().enumerate() {
        assert_eq!(a.value, 0.25 * i as f64);
        assert!((a.prob - 0.25).abs() < 1e-15);
    }
    assert!((q.mean() - 0.375).abs() < 1e-15);
    let h = u.discretize(0.5).unwrap();
    assert!((h.mean() - 0.25).abs() < 1e-15);
}

#[test]
fn scaled_capacities_in_q16_follow_the_layer_edge_counts() {
    let net = ones(16);
    let params = ScalingParams { kappa: 0.6, m: 7.0, ell_override: None };
    let s = ScaledNetwork::antipodal(&net, 0, params).unwrap();
    assert_eq!(s.ell(), 5);
    let middle = cubeflow::EdgeId { lower: 0b0111_1111, dim: 7 };
    assert_eq!(s.scaled_capacity(middle), 1.0 / (8 * choose(16, 8)) as f64);
    let near = cubeflow::EdgeId { lower: 1, dim: 1 };
    assert_eq!(s.scaled_capacity(near), 7.0 / (2 * choose(16, 2)) as f64);
    let eps = 2.0 * (7.0 - 1.0) * (5.0 + 2.0) / 16.0;
    assert_eq!(params.epsilon_d(16), eps);
    assert_eq!(eps, 5.25);
    let sub = ScaledNetwork::subcube(&net, 0, 0xffff, params).unwrap();
    assert_eq!(sub.scaled_capacity(middle), s.scaled_capacity(middle) * 2f64.powi(-15));
}

#[test]
fn subcube_sum_over_all_pairs_is_one() {
    for d in 1..=12u32 {
        let direct: f64 =
            (1..=d as u64).map(|k| k as f64 / d as f64 * choose(d as u64, k) as f64).sum::<f64>() * 2f64.powi(1 - d as i32);
        assert!((subcube_identity(d) - direct).abs() < 1e-12);
        assert!((direct - 1.0).abs() < 1e-12);
    }
}

#[test]
fn leaky_path_has_size_one_and_stitches_to_ninety_percent() {
    let cube = Cube::new(2).unwrap();
    let (s, a, t) = (0, 1, 3);
    let mut f = DirectedFlow::zero(cube);
    f.push(s, a, 1.0);
    f.push(a, t, 0.9);
    let out = f.net_outflows();
    assert_eq!((out[s as usize], out[t as usize]), (1.0, -0.9));
    assert!((out[a as usize] + 0.1).abs() < 1e-15);
    let b = balance_report(&f, &[s], &[t]).unwrap();
    assert!((b.size - 0.5 * (1.0 + 0.1 + 0.9)).abs() < 1e-15);

    let g = stitch(&f, &[s], &[t], 0.1).unwrap();
    let mut expected = DirectedFlow::zero(cube);
    expected.add_path(&[s, a, t], 0.9);
    assert!(g.flow.max_difference(&expected) < 1e-12);
    assert!((g.after.volume - 0.9).abs() < 1e-12 && g.after.volume >= (1.0 - 0.2) * b.size);
    assert!(g.checks.all());
}

#[test]
fn surplus_entering_a_sink_is_deleted() {
    // s → t carries 1; a stray 0.05 leaves the sink t towards b.
    let cube = Cube::new(2).unwrap();
    let (s, t, b) = (0, 1, 3);
    let mut f = DirectedFlow::zero(cube);
    f.push(s, t, 1.0);
    f.push(t, b, 0.05);
    let theta = 0.1;
    let g = stitch(&f, &[s], &[t], theta).unwrap();
    assert_eq!(g.flow.get(t, b), 0.0);
    assert!(g.checks.all());
    assert!(g.after.volume >= (1.0 - 2.0 * theta) * g.before.size);
    assert!(g.after.boundary_deviation <= 9.0 * theta * g.after.volume);
}

#[test]
fn two_edge_disjoint_paths_decompose_into_exactly_those_paths() {
    let cube = Cube::new(2).unwrap();
    let mut f = DirectedFlow::zero(cube);
    f.add_path(&[0, 1, 3], 0.3);
    f.add_path(&[0, 2, 3], 0.7);
    let dec = decompose(&f, &[0], &[3]).unwrap();
    let mut got: Vec<(Vec<Vertex>, f64)> = dec.paths.iter().map(|p| (p.vertices.clone(), p.value)).collect();
    got.sort_by(|a, b| a.1.total_cmp(&b.1));
    assert_eq!(got.len(), 2);
    assert!(dec.cycles.is_empty());
    assert_eq!(got[0].0, vec![0, 1, 3]);
    assert_eq!(got[1].0, vec![0, 2, 3]);
    assert!((got[0].1 - 0.3).abs() < 1e-15 && (got[1].1 - 0.7).abs() < 1e-15);
}

#[test]
fn radius_two_escape_in_open_q6_spreads_one_fifteenth() {
    let net = ones(6);
    let ctx = EscapeContext::new(OpenEdges::at_threshold(&net, 1.0), 0.2).unwrap();
    let plan = ctx.propagate_to_shell(0, 2).unwrap();
    let out = plan.flow.net_outflows();
    let share = 1.0 / choose(6, 2) as f64;
    for w in Cube::new(6).unwrap().layer_vertices(0, 2) {
        assert!((-out[w as usize] - share).abs() < 1e-15);
    }
}

#[test]
fn far_target_allocation_in_q8_matches_the_binomial_sum() {
    let ctx = EscapeContext::new(OpenEdges::at_threshold(&ones(8), 1.0), 0.2).unwrap();
    let plan = ctx.propagate_to_shell(0, 2).unwrap();
    let (slices, alloc) = split_to_subcube_boundaries(&plan, &far_targets(plan.flow.cube(), 0)).unwrap();
    let direct = (3..=8u64).map(|k| choose(8, k) as f64).sum::<f64>() / 256.0 / choose(8, 2) as f64;
    assert!((alloc.max_allocation - direct).abs() < 1e-15);
    assert!((allocation_identity(8, 2) - direct).abs() < 1e-15);
    assert!(direct <= 1.0 / 28.0);
    let full = slices.iter().find(|(v, _)| *v == 255).unwrap();
    assert!(full.1.max_difference(&plan.flow.scaled(2f64.powi(-8))) < 1e-15);
}

#[test]
fn disjoint_free_bits_give_disjoint_boundary_slices() {
    let ctx = EscapeContext::new(OpenEdges::at_threshold(&ones(8), 1.0), 0.2).unwrap();
    let plan = ctx.propagate_to_shell(0, 1).unwrap();
    let (v1, v2) = (0b0000_1111, 0b1111_0000);
    let (slices, _) = split_to_subcube_boundaries(&plan, &[v1, v2]).unwrap();
    let sinks = |f: &DirectedFlow| -> Vec<usize> {
        f.net_outflows().iter().enumerate().filter(|(_, &x)| x < -1e-15).map(|(i, _)| i).collect()
    };
    let a = sinks(&slices[0].1);
    let b = sinks(&slices[1].1);
    assert!(!a.is_empty() && !b.is_empty());
    assert!(a.iter().all(|x| !b.contains(x)));
}

#[test]
fn open_cube_is_locally_connected_and_isolation_is_detected() {
    let cube = Cube::new(6).unwrap();
    let mut net = ones(6);
    let r = classify_local_connectivity(&OpenEdges::at_threshold(&net, 1.0), 0.4).unwrap();
    assert!(r.poorly_connected().is_empty());
    for j in 0..6 {
        net.capacities_mut()[cube.edge_index_at(9, j)] = 0.0;
    }
    let r = classify_local_connectivity(&OpenEdges::at_threshold(&net, 1.0), 0.4).unwrap();
    assert!(r.t1.contains(&9));
}

#[test]
fn percolated_q10_is_locally_connected_almost_everywhere() {
    let mut fractions = Vec::new();
    for seed in 1..=20 {
        let r = classify_local_connectivity(&OpenEdges::at_threshold(&ber(0.75, 10, seed), 1.0), 0.2).unwrap();
        fractions.push(1.0 - r.poorly_connected_fraction());
    }
    let hits = fractions.iter().filter(|&&f| f >= 0.99).count();
    println!("d = 10, p = 0.75: ok fraction >= 0.99 on {hits}/20 seeds; min {:.4}", fractions.iter().cloned().fold(1.0, f64::min));
    fractions.sort_by(f64::total_cmp);
    assert!(fractions[10] >= 0.99);
}

#[test]
fn radius_two_escapes_in_percolated_q10_are_balanced_whenever_built() {
    let mut built = 0;
    for seed in 1..=20 {
        let net = ber(0.75, 10, seed);
        let ctx = EscapeContext::new(OpenEdges::at_threshold(&net, 1.0), 0.2).unwrap();
        for u in [0, 511, 1023] {
            if let Ok(plan) = ctx.propagate_to_shell(u, 2) {
                built += 1;
                let b = balance_report(&plan.flow, &[u], &plan.shell).unwrap();
                assert!(b.mu <= 1e-9 && b.is_proper(), "seed {seed}, u {u}");
            }
        }
    }
    println!("built {built}/60 radius-two escapes");
    assert!(built > 0);
}

#[test]
fn all_open_middle_is_balanced_with_full_volume() {
    let net = ones(9);
    let model = CapacityModel::new(CapacityDistribution::bernoulli(1.0).unwrap(), 0.1).unwrap();
    let s = ScaledNetwork::antipodal(&net, 0, ScalingParams::default()).unwrap();
    let out = build_middle(&s, &model, &MiddleParams::default(), 1).unwrap();
    assert!(out.volume >= 1.0 - 1.0 / 81.0);
    assert!(out.mu <= 1e-9);
}

#[test]
fn percolated_middle_rates_are_recorded() {
    // Single-atom Ber(0.75) at d = 12 with ℓ = 2, and a two-atom law at d = 10.
    let params = ScalingParams { ell_override: Some(2), ..ScalingParams::default() };
    let cases: [(&str, u32, f64); 2] = [("bernoulli:0.75", 12, 0.9 * 0.75), ("discrete:0@0.25,1@0.5,2@0.25", 10, 0.9)];
    for (law, d, threshold) in cases {
        let dist: CapacityDistribution = law.parse().unwrap();
        for method in [MiddleMethod::Crossing, MiddleMethod::Maxflow] {
            let mut hits = 0;
            let mut errors = 0;
            let mut best: f64 = 0.0;
            let seeds = if d == 12 { 6 } else { 10 };
            for seed in 1..=seeds {
                let net = CapacityNetwork::sample(&dist, Cube::new(d).unwrap(), seed).unwrap();
                let model = CapacityModel::new(dist.clone(), 0.1).unwrap();
                let s = ScaledNetwork::antipodal(&net, 0, params).unwrap();
                let mp = MiddleParams { method, ..MiddleParams::default() };
                match build_middle(&s, &model, &mp, seed) {
                    Ok(out) => {
                        assert!(out.volume.is_finite() && out.volume >= 0.0);
                        hits += usize::from(out.volume >= threshold);
                        best = best.max(out.volume);
                    }
                    Err(_) => errors += 1,
                }
            }
            println!("{law} d = {d} {method:?}: volume >= {threshold:.3} on {hits}/{seeds} seeds, best {best:.4}, {errors} errors");
        }
    }
}

#[test]
fn all_ones_pipeline_builds_far_and_near_pairs() {
    let net = ones(8);
    let p = Pipeline::new(&net, PipelineParams::default()).unwrap();
    let v = 0b11111;
    assert_eq!(distance(0, v), 5);
    let far = p.build_pair(0, v).unwrap();
    assert!(far.volume >= 0.9 * 2f64.powi(-7));
    let sub = Subcube::spanning(0, v);
    for (x, y, _) in far.flow.arcs() {
        assert!(sub.contains(x) && sub.contains(y));
    }
    let near = p.build_pair(0, 1).unwrap();
    let b = balance_report(&near.flow, &[0], &[1]).unwrap();
    assert!(b.is_proper());
    assert!((b.volume - 2f64.powi(-7)).abs() < 1e-9, "{}", b.volume);
    assert!(matches!(p.build_pair(3, 3), Err(Error::SameVertex(3))));
    assert!(matches!(p.build_far_pair(0, 0b11), Err(Error::PairKind { .. })));
    assert!(matches!(p.build_near_pair(0, 255, &|a, b| p.build_far_pair(a, b)), Err(Error::PairKind { .. })));
}

#[test]
fn isolated_vertex_zeroes_the_uniform_volume_and_is_reported() {
    let cube = Cube::new(7).unwrap();
    let mut net = ones(7);
    for j in 0..7 {
        net.capacities_mut()[cube.edge_index_at(5, j)] = 0.0;
    }
    let p = Pipeline::new(&net, PipelineParams::default()).unwrap();
    assert_eq!(p.build_antipodal(5).unwrap_err().stage(), Some(Stage::Escape));
    let sol = solve_uniform(&net, UniformMode::Opp, &PipelineParams::default(), &SolveOptions::default()).unwrap();
    assert_eq!(sol.phi, 0.0);
    assert!(sol.failures.iter().any(|f| f.u == 5 || f.v == 5));
}

#[test]
fn all_ones_uniform_solutions_reach_the_targets() {
    let net = ones(7);
    let opp = solve_uniform(&net, UniformMode::Opp, &PipelineParams::default(), &SolveOptions::default()).unwrap();
    assert!(opp.phi >= 0.9, "{}", opp.phi);
    let all = solve_uniform(&net, UniformMode::All, &PipelineParams::default(), &SolveOptions::default()).unwrap();
    let scaled = all.phi * 64.0;
    println!("d = 7 all ones: 2^(d-1)·phi = {scaled:.4}");
    assert!(scaled >= 0.8);
    assert!(scaled <= upper_bounds(&net, &PairSet::All).unwrap().bound * 64.0 + 1e-9);
}

#[test]
fn antipodal_volumes_on_percolated_q10_are_recorded() {
    let mut volumes = Vec::new();
    let mut params = PipelineParams::default();
    params.middle.method = MiddleMethod::Maxflow;
    for seed in 1..=20 {
        let net = ber(0.75, 10, seed);
        let p = Pipeline::new(&net, PipelineParams { seed, ..params }).unwrap();
        volumes.push(p.build_antipodal(0).map(|c| c.volume).unwrap_or(0.0));
    }
    volumes.sort_by(f64::total_cmp);
    let median = 0.5 * (volumes[9] + volumes[10]);
    let bound = 0.8 * 0.75;
    println!("d = 10 Ber(0.75), max-flow middle: median antipodal volume {median:.4} (reference 0.8·E[C] = {bound})");
    assert!(median > 0.0);
}

#[test]
fn cut_bounds_on_small_and_sampled_cubes() {
    assert_eq!(upper_bounds(&ones(3), &PairSet::Opp).unwrap().bound, 1.0);
    assert_eq!(upper_bounds(&ones(2), &PairSet::All).unwrap().bound, 0.5);
    let net = ber(0.75, 10, 2);
    let c = upper_bounds(&net, &PairSet::Opp).unwrap().bound;
    let n = net.cube().edge_count() as f64;
    assert!((c - 0.75).abs() <= 3.0 * (0.75f64 * 0.25 / n).sqrt());
}

#[test]
fn single_pair_max_flows() {
    let line = CapacityNetwork::from_capacities(Cube::new(1).unwrap(), vec![0.37]).unwrap();
    assert_eq!(max_flow_single(line.cube(), &line, 0, 1).unwrap().value, 0.37);
    let sq = ones(2);
    let r = max_flow_single(sq.cube(), &sq, 0, 3).unwrap();
    assert_eq!((r.value, r.cut_value), (2.0, 2.0));
    assert!(matches!(max_flow_single(sq.cube(), &sq, 1, 1), Err(Error::SameVertex(1))));
}

#[test]
fn oracle_on_tiny_cubes_brackets_the_exact_value() {
    let omega = ConcurrentParams::default().omega;
    let line = CapacityNetwork::from_capacities(Cube::new(1).unwrap(), vec![0.6]).unwrap();
    let r = max_concurrent_value(&line, &PairSet::Opp, &ConcurrentParams::default()).unwrap();
    assert!(r.phi_hat >= (1.0 - omega) * 0.6 && r.phi_hat <= 0.6 + 1e-12);
    let r = max_concurrent_value(&ones(2), &PairSet::Opp, &ConcurrentParams::default()).unwrap();
    assert!(r.phi_hat >= 1.0 - omega && r.phi_hat <= 1.0 + 1e-12);
    let exact = exact_concurrent(&ones(3), &PairSet::Opp).unwrap().phi;
    let r = max_concurrent_value(&ones(3), &PairSet::Opp, &ConcurrentParams::default()).unwrap();
    assert!(r.phi_hat >= (1.0 - omega) * exact && r.phi_hat <= exact + 1e-9);
}

#[test]
fn all_ones_q4_experiment_row_is_certified() {
    let config = ExperimentConfig::new(vec![4], "bernoulli:1".parse().unwrap(), vec![1], UniformMode::Opp);
    let report = run_experiment(&config).unwrap();
    let row = &report.rows[0];
    assert_eq!(row.status, RowStatus::Ok);
    assert!(row.phi_constructive.unwrap() >= 0.9);
    assert_eq!(row.upper_bound, Some(1.0));
    assert!(row.consistent);
}
