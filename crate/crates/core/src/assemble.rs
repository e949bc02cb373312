//! End-to-end commodity builders and the uniform multicommodity solution.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacities::{CapacityModel, CapacityNetwork};
use crate::error::{Error, Result, Stage};
use crate::escape::{EscapeContext, EscapePlan, OpenEdges, DEFAULT_ALPHA};
use crate::flowcore::{check_feasible, stitch_auto, DirectedFlow};
use crate::hypercube::{distance, Cube, Vertex};
use crate::layercross::{build_middle, MiddleMethod, MiddleParams};
use crate::netscale::{subcube_ell, ScaledNetwork, ScalingParams};
use crate::rng::{StreamTag, UnitStream};

/// Everything the constructive pipeline needs besides the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineParams {
    pub scaling: ScalingParams,
    pub alpha: f64,
    pub middle: MiddleParams,
    /// Seed of the thinning stream.
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            scaling: ScalingParams::default(),
            alpha: DEFAULT_ALPHA,
            middle: MiddleParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommodityKind {
    Antipodal,
    Far,
    Near,
}

/// One commodity of a uniform flow problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommoditySpec {
    pub u: Vertex,
    pub v: Vertex,
    pub kind: CommodityKind,
    pub target_volume: f64,
}

/// Per-stage measurements of one commodity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageVolumes {
    /// Measured escape constants at the two ends.
    pub escape_m_source: f64,
    pub escape_m_sink: f64,
    /// α actually used at the two ends.
    pub alpha_source: f64,
    pub alpha_sink: f64,
    pub middle_volume: f64,
    pub middle_mu: f64,
    pub middle_theta: f64,
    pub stitch_theta: f64,
    pub volume: f64,
}

/// A proper u→v flow with its diagnostics.
#[derive(Clone, Debug)]
pub struct CommodityFlow {
    pub spec: CommoditySpec,
    pub flow: DirectedFlow,
    pub volume: f64,
    pub stages: StageVolumes,
    /// max |f(e)| / scaled capacity in 𝒩^M (antipodal commodities only).
    pub max_scaled_ratio: Option<f64>,
}

/// Classify an unordered pair.
pub fn pair_kind(cube: Cube, u: Vertex, v: Vertex) -> Result<CommodityKind> {
    cube.check_vertex(u)?;
    cube.check_vertex(v)?;
    if u == v {
        return Err(Error::SameVertex(u));
    }
    let k = distance(u, v);
    Ok(if k == cube.dim() {
        CommodityKind::Antipodal
    } else if 4 * k > cube.dim() {
        CommodityKind::Far
    } else {
        CommodityKind::Near
    })
}

fn clone_escape_error(e: &Error) -> Error {
    match e {
        Error::PoorBall { center, vertices } => Error::PoorBall { center: *center, vertices: vertices.clone() },
        Error::PoorlyConnected { vertex, alpha, criteria } => {
            Error::PoorlyConnected { vertex: *vertex, alpha: *alpha, criteria: criteria.clone() }
        }
        Error::NoRoute { from, to } => Error::NoRoute { from: *from, to: *to },
        Error::LayerOutOfRange { m, d } => Error::LayerOutOfRange { m: *m, d: *d },
        other => Error::InvalidParameter(other.to_string()),
    }
}

type FarSlot = Arc<std::result::Result<CommodityFlow, CommodityFailure>>;

type PlanSlot = std::result::Result<Arc<EscapePlan>, Arc<Error>>;

/// Shared state for building many commodities on one network.
pub struct Pipeline<'a> {
    base: &'a CapacityNetwork,
    params: PipelineParams,
    model: CapacityModel,
    escape: EscapeContext,
    plans: Option<Mutex<HashMap<(Vertex, u32), PlanSlot>>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(base: &'a CapacityNetwork, params: PipelineParams) -> Result<Self> {
        params.scaling.validate()?;
        let model = CapacityModel::new(base.model_distribution(), params.middle.epsilon)?;
        let open = OpenEdges::at_threshold(base, model.truncation.c_star);
        let escape = EscapeContext::new(open, params.alpha)?;
        Ok(Pipeline { base, params, model, escape, plans: None })
    }

    /// Keep escape plans for reuse across commodities.
    pub fn with_plan_cache(mut self) -> Self {
        self.plans = Some(Mutex::new(HashMap::new()));
        self
    }

    pub fn base(&self) -> &CapacityNetwork {
        self.base
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn model(&self) -> &CapacityModel {
        &self.model
    }

    pub fn escape(&self) -> &EscapeContext {
        &self.escape
    }

    pub fn ell(&self) -> u32 {
        self.params.scaling.ell(self.base.cube().dim())
    }

    /// Unit escape plan from `u` onto its radius-`ell` shell.
    pub fn plan(&self, u: Vertex, ell: u32) -> Result<Arc<EscapePlan>> {
        let Some(cache) = &self.plans else {
            return self.escape.propagate_to_shell(u, ell).map(Arc::new);
        };
        if let Some(slot) = cache.lock().unwrap().get(&(u, ell)) {
            return slot.clone().map_err(|e| clone_escape_error(&e));
        }
        let slot: PlanSlot = self.escape.propagate_to_shell(u, ell).map(Arc::new).map_err(Arc::new);
        cache.lock().unwrap().insert((u, ell), slot.clone());
        slot.map_err(|e| clone_escape_error(&e))
    }

    fn check_layering(&self) -> Result<u32> {
        let d = self.base.cube().dim();
        let ell = self.ell();
        if 2 * ell + 1 > d {
            return Err(Error::DegenerateLayering { d, ell, constraint: "2*ell + 1 <= d" });
        }
        Ok(ell)
    }

    /// Join escape flows to a middle flow. Layer crossings are joined to balanced escape
    /// flows (or far-pair slices of volume `unit`) scaled to the middle volume; a max-flow
    /// middle is joined to escape flows reweighted per shell vertex to its throughput.
    fn compose(
        &self,
        middle: &DirectedFlow,
        volume: f64,
        source_plan: &EscapePlan,
        sink_plan: &EscapePlan,
        slices: Option<(&DirectedFlow, &DirectedFlow, f64)>,
    ) -> DirectedFlow {
        let mut f = middle.clone();
        match self.params.middle.method {
            MiddleMethod::Crossing => match slices {
                Some((su, sv, unit)) => {
                    f.add_scaled(su, volume / unit);
                    f.add_scaled(sv, -volume / unit);
                }
                None => {
                    f.add_scaled(&source_plan.flow, volume);
                    f.add_scaled(&sink_plan.flow, -volume);
                }
            },
            MiddleMethod::Maxflow => {
                let out = middle.net_outflows();
                f.add_scaled(&source_plan.shaped(&|w| out[w as usize].max(0.0)), 1.0);
                f.add_scaled(&sink_plan.shaped(&|w| (-out[w as usize]).max(0.0)), -1.0);
            }
        }
        f
    }

    /// Escape at u, middle flow, reversed escape at ū, stitched into a proper u→ū flow.
    pub fn build_antipodal(&self, u: Vertex) -> Result<CommodityFlow> {
        let cube = self.base.cube();
        cube.check_vertex(u)?;
        let ell = self.check_layering()?;
        let ubar = cube.antipode(u);
        let scaled = ScaledNetwork::antipodal(self.base, u, self.params.scaling)?;
        let pu = self.plan(u, ell).map_err(|e| e.at(Stage::Escape))?;
        let pv = self.plan(ubar, ell).map_err(|e| e.at(Stage::Escape))?;
        let middle =
            build_middle(&scaled, &self.model, &self.params.middle, self.params.seed).map_err(|e| e.at(Stage::Middle))?;
        let f = self.compose(&middle.flow, middle.volume, &pu, &pv, None);
        let stitched = stitch_auto(&f, &[u], &[ubar]).map_err(|e| e.at(Stage::Stitch))?;
        let flow = stitched.flow;
        let volume = stitched.after.volume;
        let max_scaled_ratio = check_feasible(&flow, &scaled, 0.0).max_utilization;
        Ok(CommodityFlow {
            spec: CommoditySpec {
                u,
                v: ubar,
                kind: CommodityKind::Antipodal,
                target_volume: self.model.discrete_mean(),
            },
            flow,
            volume,
            stages: StageVolumes {
                escape_m_source: pu.m_used,
                escape_m_sink: pv.m_used,
                alpha_source: pu.alpha,
                alpha_sink: pv.alpha,
                middle_volume: middle.volume,
                middle_mu: middle.mu,
                middle_theta: middle.theta,
                stitch_theta: stitched.theta,
                volume,
            },
            max_scaled_ratio: Some(max_scaled_ratio),
        })
    }

    /// Slice of the escape plan at u onto S_u(v), subcube middle, reversed slice at v.
    pub fn build_far_pair(&self, u: Vertex, v: Vertex) -> Result<CommodityFlow> {
        let cube = self.base.cube();
        let d = cube.dim();
        let kind = pair_kind(cube, u, v)?;
        let k = distance(u, v);
        if kind == CommodityKind::Near {
            return Err(Error::PairKind { u, v, dist: k, expected: "far (distance > d/4)" });
        }
        let ell = self.check_layering()?;
        let ell_k = subcube_ell(ell, k);
        let pu = self.plan(u, ell_k).map_err(|e| e.at(Stage::Escape))?;
        let pv = self.plan(v, ell_k).map_err(|e| e.at(Stage::Escape))?;
        let slice_u = pu.slice(v).map_err(|e| e.at(Stage::Split))?;
        let slice_v = pv.slice(u).map_err(|e| e.at(Stage::Split))?;
        let unit = 2f64.powi(-(d as i32));
        let mut stages = StageVolumes {
            escape_m_source: pu.m_used,
            escape_m_sink: pv.m_used,
            alpha_source: pu.alpha,
            alpha_sink: pv.alpha,
            ..StageVolumes::default()
        };
        let (f, middle_volume) = if k > 2 * ell_k {
            let scaled = ScaledNetwork::subcube(self.base, u, v, self.params.scaling)?.with_ell(ell_k);
            let middle = build_middle(&scaled, &self.model, &self.params.middle, self.params.seed)
                .map_err(|e| e.at(Stage::Middle))?;
            stages.middle_mu = middle.mu;
            stages.middle_theta = middle.theta;
            let f = self.compose(&middle.flow, middle.volume, &pu, &pv, Some((&slice_u, &slice_v, unit)));
            (f, middle.volume)
        } else {
            let volume = 2.0 * unit * self.model.discrete_mean();
            let mut f = slice_u.scaled(volume / unit);
            f.add_scaled(&slice_v, -volume / unit);
            (f, volume)
        };
        let stitched = stitch_auto(&f, &[u], &[v]).map_err(|e| e.at(Stage::Stitch))?;
        stages.middle_volume = middle_volume;
        stages.stitch_theta = stitched.theta;
        stages.volume = stitched.after.volume;
        Ok(CommodityFlow {
            spec: CommoditySpec { u, v, kind, target_volume: 2.0 * unit * self.model.discrete_mean() },
            volume: stitched.after.volume,
            flow: stitched.flow,
            stages,
            max_scaled_ratio: None,
        })
    }

    /// Half the flow through ū and half through v̄, each leg a far-pair flow.
    pub fn build_near_pair(
        &self,
        u: Vertex,
        v: Vertex,
        far: &dyn Fn(Vertex, Vertex) -> Result<CommodityFlow>,
    ) -> Result<CommodityFlow> {
        let cube = self.base.cube();
        let kind = pair_kind(cube, u, v)?;
        if kind != CommodityKind::Near {
            return Err(Error::PairKind { u, v, dist: distance(u, v), expected: "near (0 < distance <= d/4)" });
        }
        let (ubar, vbar) = (cube.antipode(u), cube.antipode(v));
        let legs = [(u, ubar), (ubar, v), (u, vbar), (vbar, v)]
            .iter()
            .map(|&(a, b)| far(a, b))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at(Stage::Near))?;
        let common = legs.iter().map(|l| l.volume).fold(f64::INFINITY, f64::min);
        if common <= 0.0 {
            return Err(Error::NoCapacity { m: 0 }.at(Stage::Near));
        }
        let mut f = DirectedFlow::zero(cube);
        for leg in &legs {
            f.add_scaled(&leg.flow, 0.5 * common / leg.volume);
        }
        let stitched = stitch_auto(&f, &[u], &[v]).map_err(|e| e.at(Stage::Stitch))?;
        let volume = stitched.after.volume;
        Ok(CommodityFlow {
            spec: CommoditySpec { u, v, kind, target_volume: legs[0].spec.target_volume },
            flow: stitched.flow,
            volume,
            stages: StageVolumes { stitch_theta: stitched.theta, volume, ..StageVolumes::default() },
            max_scaled_ratio: None,
        })
    }

    /// Far or near flow for an arbitrary distinct pair (antipodal pairs use the far builder).
    pub fn build_pair(&self, u: Vertex, v: Vertex) -> Result<CommodityFlow> {
        match pair_kind(self.base.cube(), u, v)? {
            CommodityKind::Near => self.build_near_pair(u, v, &|a, b| self.build_far_pair(a, b)),
            _ => self.build_far_pair(u, v),
        }
    }
}

/// Which commodities a uniform solution serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformMode {
    Opp,
    All,
}

/// Stratified pair sample used in all-pairs mode for 8 ≤ d ≤ 10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SamplingDesign {
    pub pairs_per_distance: usize,
    pub seed: u64,
    pub pair_count: usize,
}

/// Largest d at which all-pairs mode enumerates every pair.
pub const ALL_PAIRS_EXHAUSTIVE_MAX_D: u32 = 7;
/// Largest d at which all-pairs mode runs on a sample.
pub const ALL_PAIRS_SAMPLED_MAX_D: u32 = 10;
pub const DEFAULT_PAIRS_PER_DISTANCE: usize = 16;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub keep_flows: bool,
    pub keep_utilization: bool,
    pub pairs_per_distance: usize,
    pub deadline: Option<Instant>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { keep_flows: false, keep_utilization: false, pairs_per_distance: DEFAULT_PAIRS_PER_DISTANCE, deadline: None }
    }
}

/// A commodity that could not be built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommodityFailure {
    pub u: Vertex,
    pub v: Vertex,
    pub stage: Option<Stage>,
    pub message: String,
}

/// Min / median / max of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        if values.is_empty() {
            return Spread::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Spread { min: v[0], median: median_sorted(&v), max: v[v.len() - 1] }
    }
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Superposed uniform flow with its capacity audit.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct UniformFlowSolution {
    pub mode: UniformMode,
    pub d: u32,
    /// Certified uniform volume after the global rescale (0 if any commodity failed).
    pub phi: f64,
    /// min over commodities of the achieved volume.
    pub phi_raw: f64,
    /// max_e φ_raw·Σ_j |f_j(e)|/vol_j / c_e.
    pub audit_ratio: f64,
    /// max_e Σ_j |f_j(e)| / c_e at the builders' native volumes.
    pub native_demand_ratio: f64,
    /// Allowed native demand ratio: 1 + ε_d (opp) or 1 + ε (all).
    pub demand_budget: f64,
    pub audit_passed: bool,
    /// Native near-pair demand / c_e (all-pairs mode).
    pub near_demand_ratio: Option<f64>,
    pub commodity_count: usize,
    pub volumes: Spread,
    pub stitch_theta: Spread,
    pub escape_m: Spread,
    pub failures: Vec<CommodityFailure>,
    pub sampling: Option<SamplingDesign>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_utilization: Option<Vec<f64>>,
    #[serde(skip)]
    pub flows: Option<Vec<(CommoditySpec, DirectedFlow)>>,
}

impl UniformFlowSolution {
    /// The kept flows rescaled to the certified volume φ.
    pub fn final_flows(&self) -> Option<Vec<(CommoditySpec, DirectedFlow)>> {
        let flows = self.flows.as_ref()?;
        Some(
            flows
                .iter()
                .map(|(spec, f)| {
                    let vol = f.net_outflow(spec.u);
                    (*spec, if vol > 0.0 { f.scaled(self.phi / vol) } else { f.clone() })
                })
                .collect(),
        )
    }
}

/// Stratified sample: up to `per_distance` distinct unordered pairs at every distance.
pub fn stratified_pairs(cube: Cube, per_distance: usize, seed: u64) -> Vec<(Vertex, Vertex)> {
    let d = cube.dim();
    let mut stream = UnitStream::new(seed, StreamTag::Pairs);
    let mut counter = 0u64;
    let mut next = || {
        counter += 1;
        stream.at(counter - 1)
    };
    let mut out = Vec::new();
    for k in 1..=d {
        let mut seen = std::collections::BTreeSet::new();
        let available = if k == d { cube.vertex_count() / 2 } else { usize::MAX };
        let want = per_distance.min(available);
        let mut attempts = 0;
        while seen.len() < want && attempts < 64 * want {
            attempts += 1;
            let u = (next() * cube.vertex_count() as f64) as Vertex;
            let mut dims: Vec<u32> = (0..d).collect();
            for i in 0..k as usize {
                let j = i + (next() * (d as usize - i) as f64) as usize;
                dims.swap(i, j);
            }
            let mask = dims[..k as usize].iter().fold(0, |m, &j| m | (1 << j));
            let v = u ^ mask;
            seen.insert((u.min(v), u.max(v)));
        }
        out.extend(seen);
    }
    out
}

fn failure(u: Vertex, v: Vertex, e: &Error) -> CommodityFailure {
    CommodityFailure { u, v, stage: e.stage(), message: e.to_string() }
}

/// Build every commodity of the mode, superpose, audit and rescale.
pub fn solve_uniform(
    base: &CapacityNetwork,
    mode: UniformMode,
    params: &PipelineParams,
    options: &SolveOptions,
) -> Result<UniformFlowSolution> {
    let cube = base.cube();
    let d = cube.dim();
    let pipeline = Pipeline::new(base, *params)?;
    pipeline.check_layering()?;

    let mut sampling = None;
    let (pairs, demand_budget): (Vec<(Vertex, Vertex)>, f64) = match mode {
        UniformMode::Opp => {
            let half = cube.vertex_count() as Vertex / 2;
            ((0..half).map(|u| (u, cube.antipode(u))).collect(), 1.0 + params.scaling.epsilon_d(d))
        }
        UniformMode::All => {
            let pairs = if d <= ALL_PAIRS_EXHAUSTIVE_MAX_D {
                let n = cube.vertex_count() as Vertex;
                (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect()
            } else if d <= ALL_PAIRS_SAMPLED_MAX_D {
                let pairs = stratified_pairs(cube, options.pairs_per_distance, params.seed);
                sampling = Some(SamplingDesign {
                    pairs_per_distance: options.pairs_per_distance,
                    seed: params.seed,
                    pair_count: pairs.len(),
                });
                pairs
            } else {
                return Err(Error::BudgetExceeded(format!(
                    "all-pairs mode supports d <= {ALL_PAIRS_SAMPLED_MAX_D}, got d = {d}"
                )));
            };
            (pairs, 1.0 + params.middle.epsilon)
        }
    };

    let pipeline = if mode == UniformMode::All { pipeline.with_plan_cache() } else { pipeline };
    let expired = AtomicBool::new(false);
    let guard = |build: &dyn Fn() -> Result<CommodityFlow>| -> Result<CommodityFlow> {
        if expired.load(Ordering::Relaxed) || options.deadline.is_some_and(|t| Instant::now() > t) {
            expired.store(true, Ordering::Relaxed);
            return Err(Error::Timeout);
        }
        build()
    };
    let built: Vec<std::result::Result<CommodityFlow, CommodityFailure>> = match mode {
        UniformMode::Opp => pairs
            .par_iter()
            .map(|&(u, v)| guard(&|| pipeline.build_antipodal(u)).map_err(|e| failure(u, v, &e)))
            .collect(),
        UniformMode::All => {
            // Far flows first, keyed by unordered pair; near flows reuse them as legs.
            let far_built: HashMap<(Vertex, Vertex), FarSlot> = pairs
                .par_iter()
                .filter(|&&(u, v)| pair_kind(cube, u, v).map(|k| k != CommodityKind::Near).unwrap_or(false))
                .map(|&(u, v)| ((u, v), Arc::new(guard(&|| pipeline.build_far_pair(u, v)).map_err(|e| failure(u, v, &e)))))
                .collect();
            let extra: Mutex<HashMap<(Vertex, Vertex), FarSlot>> = Mutex::new(HashMap::new());
            let lookup = |a: Vertex, b: Vertex| -> Result<CommodityFlow> {
                let key = (a.min(b), a.max(b));
                let slot = match far_built.get(&key) {
                    Some(s) => s.clone(),
                    None => {
                        let cached = extra.lock().unwrap().get(&key).cloned();
                        cached.unwrap_or_else(|| {
                            let s = Arc::new(pipeline.build_far_pair(key.0, key.1).map_err(|e| failure(key.0, key.1, &e)));
                            extra.lock().unwrap().insert(key, s.clone());
                            s
                        })
                    }
                };
                match slot.as_ref() {
                    Ok(c) if c.spec.u == a => Ok(c.clone()),
                    Ok(c) => {
                        let mut r = c.clone();
                        r.flow = c.flow.reversed();
                        r.spec.u = a;
                        r.spec.v = b;
                        Ok(r)
                    }
                    Err(f) => Err(Error::InvalidParameter(format!("leg ({a}, {b}) failed: {}", f.message))),
                }
            };
            pairs
                .par_iter()
                .map(|&(u, v)| match far_built.get(&(u, v)) {
                    Some(slot) => slot.as_ref().clone(),
                    None => guard(&|| pipeline.build_near_pair(u, v, &lookup)).map_err(|e| failure(u, v, &e)),
                })
                .collect()
        }
    };
    if expired.load(Ordering::Relaxed) {
        return Err(Error::Timeout);
    }

    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(built.len());
    for (&(u, v), r) in pairs.iter().zip(built) {
        match r {
            Ok(c) if c.volume > 0.0 => ok.push(c),
            Ok(_) => failures.push(CommodityFailure { u, v, stage: None, message: "zero volume".into() }),
            Err(f) => failures.push(f),
        }
    }

    let edges = cube.edge_count();
    let mut per_unit = vec![0.0; edges];
    let mut native = vec![0.0; edges];
    let mut near = vec![0.0; edges];
    for c in &ok {
        let inv = 1.0 / c.volume;
        for (i, &x) in c.flow.signed_values().iter().enumerate() {
            if x != 0.0 {
                per_unit[i] += x.abs() * inv;
                native[i] += x.abs();
                if c.spec.kind == CommodityKind::Near {
                    near[i] += x.abs();
                }
            }
        }
    }
    let ratio = |load: &[f64]| -> f64 {
        load.iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.0)
            .map(|(i, &l)| {
                let c = base.capacity(i);
                if c > 0.0 {
                    l / c
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    };
    let volumes: Vec<f64> = ok.iter().map(|c| c.volume).collect();
    let phi_raw = if failures.is_empty() { volumes.iter().copied().fold(f64::INFINITY, f64::min) } else { 0.0 };
    let phi_raw = if phi_raw.is_finite() { phi_raw } else { 0.0 };
    let unit_ratio = ratio(&per_unit);
    let audit_ratio = phi_raw * unit_ratio;
    let phi = if phi_raw > 0.0 && audit_ratio.is_finite() && audit_ratio > 0.0 { phi_raw / audit_ratio } else { 0.0 };
    let native_demand_ratio = ratio(&native);
    let edge_utilization = options.keep_utilization.then(|| {
        per_unit.iter().enumerate().map(|(i, &l)| if l > 0.0 { phi * l / base.capacity(i) } else { 0.0 }).collect()
    });
    let spread_of = |f: &dyn Fn(&CommodityFlow) -> f64| Spread::of(&ok.iter().map(f).collect::<Vec<_>>());
    let stitch_theta = spread_of(&|c| c.stages.stitch_theta);
    let escape_m = spread_of(&|c| c.stages.escape_m_source.max(c.stages.escape_m_sink));
    let flows = options.keep_flows.then(|| ok.iter().map(|c| (c.spec, c.flow.clone())).collect());
    Ok(UniformFlowSolution {
        mode,
        d,
        phi,
        phi_raw,
        audit_ratio,
        native_demand_ratio,
        demand_budget,
        audit_passed: native_demand_ratio <= demand_budget * (1.0 + 1e-9),
        near_demand_ratio: (mode == UniformMode::All).then(|| ratio(&near)),
        commodity_count: pairs.len(),
        volumes: Spread::of(&volumes),
        stitch_theta,
        escape_m,
        failures,
        sampling,
        edge_utilization,
        flows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::balance_report;

    fn ones(d: u32) -> CapacityNetwork {
        CapacityNetwork::constant(Cube::new(d).unwrap(), 1.0)
    }

    #[test]
    fn antipodal_all_ones() {
        let net = ones(7);
        let p = Pipeline::new(&net, PipelineParams::default()).unwrap();
        let c = p.build_antipodal(0).unwrap();
        assert!(c.volume >= 1.0 - 2.0 / 49.0);
        let b = balance_report(&c.flow, &[0], &[127]).unwrap();
        assert!(b.is_proper() && b.mu < 1e-9);
    }

    #[test]
    fn isolated_source_fails_at_escape() {
        let cube = Cube::new(7).unwrap();
        let mut net = ones(7);
        for j in 0..7 {
            net.capacities_mut()[cube.edge_index_at(5, j)] = 0.0;
        }
        let p = Pipeline::new(&net, PipelineParams::default()).unwrap();
        let err = p.build_antipodal(5).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Escape));
    }

    #[test]
    fn far_pair_all_ones() {
        let net = ones(8);
        let p = Pipeline::new(&net, PipelineParams::default()).unwrap();
        let v = 0b11111;
        let c = p.build_far_pair(0, v).unwrap();
        assert!(c.volume >= 0.9 * 2f64.powi(-7));
        let b = balance_report(&c.flow, &[0], &[v]).unwrap();
        assert!(b.is_proper());
        assert!(matches!(p.build_far_pair(0, 0b11), Err(Error::PairKind { .. })));
    }

    #[test]
    fn near_pair_all_ones() {
        let net = ones(7);
        let p = Pipeline::new(&net, PipelineParams::default()).unwrap();
        let c = p.build_pair(0, 1).unwrap();
        assert!((c.volume - 2f64.powi(-6)).abs() < 1e-9 * 2f64.powi(-6));
        assert!(matches!(p.build_near_pair(0, 127, &|a, b| p.build_far_pair(a, b)), Err(Error::PairKind { .. })));
        assert!(matches!(p.build_pair(3, 3), Err(Error::SameVertex(3))));
    }

    #[test]
    fn opp_all_ones() {
        let net = ones(7);
        let s = solve_uniform(&net, UniformMode::Opp, &PipelineParams::default(), &SolveOptions::default()).unwrap();
        assert!(s.failures.is_empty());
        assert!(s.phi >= 0.9, "phi = {}", s.phi);
    }

    #[test]
    fn stratified_pairs_respect_distance() {
        let cube = Cube::new(9).unwrap();
        let pairs = stratified_pairs(cube, 5, 3);
        for k in 1..=9 {
            assert_eq!(pairs.iter().filter(|(u, v)| distance(*u, *v) == k).count(), 5);
        }
        assert_eq!(pairs, stratified_pairs(cube, 5, 3));
    }
}
