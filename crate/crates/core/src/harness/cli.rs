//! Command-line front end. The binary only forwards `argv` to [`run`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::assemble::{solve_uniform, CommodityKind, Pipeline, PipelineParams, SolveOptions, UniformMode};
use crate::capacities::{CapacityDistribution, CapacityNetwork};
use crate::error::{Error, Result};
use crate::flowcore::{balance_report, compensated_sum};
use crate::harness::experiment::{dimension_cap, run_experiment, ExperimentConfig};
use crate::harness::io::{
    read_flows, read_network, read_to_string, with_output, write_flows, write_network, write_records, DumpedFlow,
    Format,
};
use crate::hypercube::{Cube, Vertex, MAX_DIMENSION};
use crate::layercross::{MiddleMethod, MiddleParams};
use crate::netscale::{audit_antipodal_superposition, audit_subcube_superposition, ScalingParams, SubcubeAuditOptions};
use crate::oracle::bounds::{upper_bounds, PairSet};
use crate::oracle::concurrent::{max_concurrent_uniform, max_concurrent_value, ConcurrentParams};
use crate::oracle::maxflow::max_flow_single;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONSTRUCTION: i32 = 3;

/// Relative tolerance of the audit identities.
const AUDIT_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "cubeflow", version, about = "Uniform multicommodity flows on random-capacity hypercubes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a capacity network and write it to a file.
    Sample {
        #[command(flatten)]
        network: NetworkArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build the constructive uniform flow (opp, all) or a single pair flow.
    Solve {
        #[arg(long, value_enum, default_value_t = Mode::Opp)]
        mode: Mode,
        /// Endpoints for `--mode pair`.
        #[arg(value_name = "U")]
        u: Option<Vertex>,
        #[arg(value_name = "V")]
        v: Option<Vertex>,
        #[command(flatten)]
        network: NetworkArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Also write the final per-commodity flows to this file.
        #[arg(long, value_name = "PATH")]
        dump_flows: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Estimate the maximum uniform concurrent flow with a certified bound.
    Oracle {
        #[arg(long, value_enum, default_value_t = Mode::Opp)]
        mode: Mode,
        #[arg(value_name = "U")]
        u: Option<Vertex>,
        #[arg(value_name = "V")]
        v: Option<Vertex>,
        #[command(flatten)]
        network: NetworkArgs,
        #[arg(long, default_value_t = ConcurrentParams::default().omega)]
        omega: f64,
        #[arg(long, default_value_t = ConcurrentParams::default().max_passes)]
        max_passes: usize,
        #[arg(long)]
        timeout_secs: Option<f64>,
        #[arg(long, value_name = "PATH")]
        dump_flows: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-edge demand of the superposed scaled networks (CSV by default).
    Audit {
        #[arg(long, value_enum, default_value_t = AuditKind::Antipodal)]
        kind: AuditKind,
        /// Subcube audit: only pairs with d(u,v) > d/4.
        #[arg(long)]
        far_only: bool,
        /// Subcube audit: only the middle layers.
        #[arg(long)]
        middle_only: bool,
        #[command(flatten)]
        network: NetworkArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check balance and joint feasibility of a flow dump.
    Verify {
        #[arg(long, value_name = "PATH")]
        flows: PathBuf,
        #[command(flatten)]
        network: NetworkArgs,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run an experiment described by a JSON config.
    Experiment {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Opp,
    All,
    Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AuditKind {
    Antipodal,
    Subcube,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Hypercube dimension.
    #[arg(long)]
    pub d: Option<u32>,
    /// Capacity law: bernoulli:P, scaled_bernoulli:A:P, discrete:V@P,..., uniform01.
    #[arg(long, default_value = "bernoulli:0.75")]
    pub dist: CapacityDistribution,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Read capacities from a network file instead of sampling.
    #[arg(long, value_name = "PATH", conflicts_with = "d")]
    pub network: Option<PathBuf>,
}

impl NetworkArgs {
    fn load(&self, max_d: u32) -> Result<CapacityNetwork> {
        match &self.network {
            Some(path) => {
                let net = read_network(path)?;
                check_cap(net.cube().dim(), max_d)?;
                Ok(net)
            }
            None => {
                let d = self.d.ok_or_else(|| Error::InvalidParameter("--d or --network is required".into()))?;
                check_cap(d, max_d)?;
                CapacityNetwork::sample(&self.dist, Cube::new(d)?, self.seed)
            }
        }
    }
}

fn check_cap(d: u32, max: u32) -> Result<()> {
    if d == 0 || d > max {
        return Err(Error::DimensionOutOfRange { d, max });
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 0.6)]
    pub kappa: f64,
    /// Scaling constant M (defaults to the escape estimate).
    #[arg(long = "M", value_name = "M")]
    pub m: Option<f64>,
    /// Fix ℓ instead of deriving it from κ.
    #[arg(long)]
    pub ell: Option<u32>,
    /// Smoothing radius of the middle construction.
    #[arg(long)]
    pub radius: Option<u32>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = crate::escape::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = MiddleChoice::Crossing)]
    pub middle: MiddleChoice,
    /// Pairs per distance class when all-pairs mode samples pairs.
    #[arg(long)]
    pub pairs_per_distance: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MiddleChoice {
    Crossing,
    Maxflow,
}

impl PipelineArgs {
    fn params(&self, seed: u64) -> Result<PipelineParams> {
        let mut middle = MiddleParams::for_kappa(self.kappa);
        if let Some(e) = self.epsilon {
            middle.epsilon = e;
        }
        if let Some(r) = self.radius {
            middle.smoothing_radius = r;
        }
        middle.method = match self.middle {
            MiddleChoice::Crossing => MiddleMethod::Crossing,
            MiddleChoice::Maxflow => MiddleMethod::Maxflow,
        };
        let scaling = ScalingParams {
            kappa: self.kappa,
            m: self.m.unwrap_or(ScalingParams::default().m),
            ell_override: self.ell,
        };
        scaling.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        Ok(PipelineParams { scaling, alpha: self.alpha, middle, seed })
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file (stdout when absent).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Output format; defaults to the --out extension, else JSON.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

impl OutputArgs {
    fn format_or(&self, fallback: Format) -> Format {
        self.format.or_else(|| self.out.as_deref().and_then(Format::from_path)).unwrap_or(fallback)
    }

    fn write<T: Serialize>(&self, rows: &[T], fallback: Format) -> Result<()> {
        let format = self.format_or(fallback);
        with_output(self.out.as_deref(), |w| write_records(rows, format, w))
    }
}

/// Summary of a uniform constructive solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolveRecord {
    pub mode: UniformMode,
    pub d: u32,
    pub distribution: Option<String>,
    pub seed: Option<u64>,
    pub phi: f64,
    pub phi_raw: f64,
    pub audit_ratio: f64,
    pub native_demand_ratio: f64,
    pub demand_budget: f64,
    pub audit_passed: bool,
    pub commodities: usize,
    pub failures: usize,
    pub volume_min: f64,
    pub volume_median: f64,
    pub volume_max: f64,
    pub stitch_theta_max: f64,
    pub escape_m_min: f64,
    pub c_av: f64,
    pub upper_bound: f64,
    pub first_failure: Option<String>,
}

/// One constructive pair flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairRecord {
    pub d: u32,
    pub u: Vertex,
    pub v: Vertex,
    pub kind: Option<CommodityKind>,
    pub volume: f64,
    pub escape_m_source: Option<f64>,
    pub escape_m_sink: Option<f64>,
    pub middle_volume: Option<f64>,
    pub middle_mu: Option<f64>,
    pub stitch_theta: Option<f64>,
    pub max_scaled_ratio: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleRecord {
    pub mode: String,
    pub d: u32,
    pub distribution: Option<String>,
    pub seed: Option<u64>,
    pub omega: f64,
    pub phi_hat: f64,
    pub dual_bound: f64,
    pub certified: bool,
    pub passes: usize,
    pub c_av: f64,
    pub upper_bound: f64,
}

/// One edge of a superposition audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditRecord {
    pub edge_index: usize,
    pub lower: Vertex,
    pub dim: u32,
    pub base_cap: f64,
    pub demand: f64,
    /// demand / baseCap; empty on closed edges.
    pub ratio: Option<f64>,
    pub expected_ratio: f64,
}

/// Balance of one commodity, or (scope `total`) joint feasibility of the dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerifyRecord {
    pub scope: String,
    pub u: Option<Vertex>,
    pub v: Option<Vertex>,
    pub volume: f64,
    pub interior_imbalance: f64,
    pub mu: f64,
    pub proper: bool,
    /// max_e Σ_j |f_j(e)| / c_e over the commodities in scope.
    pub max_utilization: f64,
    pub passed: bool,
}

/// Parse `argv` and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            error_code(&e)
        }
    }
}

/// Errors that reflect the request rather than the construction.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::DimensionOutOfRange { .. }
        | Error::VertexOutOfRange { .. }
        | Error::SameVertex(_)
        | Error::InvalidDistribution(_)
        | Error::ConditionViolated { .. }
        | Error::InvalidParameter(_)
        | Error::DegenerateLayering { .. }
        | Error::PairKind { .. }
        | Error::BudgetExceeded(_)
        | Error::Format(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_USAGE,
        _ => EXIT_CONSTRUCTION,
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Sample { network, output } => {
            let net = network.load(MAX_DIMENSION)?;
            let format = output.format_or(Format::Json);
            with_output(output.out.as_deref(), |w| write_network(&net, format, w))?;
            Ok(EXIT_OK)
        }
        Command::Solve { mode, u, v, network, pipeline, dump_flows, output } => {
            solve(mode, pair_args(mode, u, v)?, &network, &pipeline, dump_flows.as_deref(), &output)
        }
        Command::Oracle { mode, u, v, network, omega, max_passes, timeout_secs, dump_flows, output } => {
            let params = ConcurrentParams {
                omega,
                max_passes,
                deadline: timeout_secs.map(|t| Instant::now() + Duration::from_secs_f64(t.max(0.0))),
                ..ConcurrentParams::default()
            };
            oracle(mode, pair_args(mode, u, v)?, &network, &params, dump_flows.as_deref(), &output)
        }
        Command::Audit { kind, far_only, middle_only, network, pipeline, output } => {
            audit(kind, SubcubeAuditOptions { far_only, middle_only }, &network, &pipeline, &output)
        }
        Command::Verify { flows, network, tol, output } => verify(&flows, &network, tol, &output),
        Command::Experiment { config, output } => {
            let config = ExperimentConfig::from_json(&read_to_string(&config)?)?;
            let report = run_experiment(&config)?;
            match output.format_or(Format::Json) {
                Format::Json => with_output(output.out.as_deref(), |w| {
                    serde_json::to_writer_pretty(&mut *w, &report)?;
                    writeln!(w)?;
                    Ok(())
                })?,
                Format::Csv => {
                    output.write(&report.rows, Format::Csv)?;
                    if let Some(out) = &output.out {
                        let summary = sibling(out, "summary");
                        with_output(Some(&summary), |w| write_records(&report.summary, Format::Csv, w))?;
                    }
                }
            }
            eprintln!("{} rows, {} not ok", report.rows.len(), report.unsuccessful());
            Ok(EXIT_OK)
        }
    }
}

/// `out.csv` → `out.summary.csv`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn pair_args(mode: Mode, u: Option<Vertex>, v: Option<Vertex>) -> Result<Option<(Vertex, Vertex)>> {
    match (mode, u, v) {
        (Mode::Pair, Some(u), Some(v)) => Ok(Some((u, v))),
        (Mode::Pair, _, _) => Err(Error::InvalidParameter("--mode pair needs two vertices U V".into())),
        (_, None, None) => Ok(None),
        _ => Err(Error::InvalidParameter("vertices are only accepted with --mode pair".into())),
    }
}

fn provenance(net: &CapacityNetwork) -> (Option<String>, Option<u64>) {
    net.provenance().map(|p| (Some(p.distribution.to_string()), Some(p.seed))).unwrap_or((None, None))
}

fn uniform_mode(mode: Mode) -> UniformMode {
    if mode == Mode::All {
        UniformMode::All
    } else {
        UniformMode::Opp
    }
}

fn dump(path: Option<&Path>, cube: Cube, flows: Vec<DumpedFlow>, fallback: Format) -> Result<()> {
    if let Some(p) = path {
        let format = Format::from_path(p).unwrap_or(fallback);
        with_output(Some(p), |w| write_flows(cube, &flows, format, w))?;
    }
    Ok(())
}

fn solve(
    mode: Mode,
    pair: Option<(Vertex, Vertex)>,
    network: &NetworkArgs,
    pipeline: &PipelineArgs,
    dump_flows: Option<&Path>,
    output: &OutputArgs,
) -> Result<i32> {
    let max = if mode == Mode::Pair { MAX_DIMENSION } else { dimension_cap(uniform_mode(mode), true, false) };
    if network.network.is_none() {
        if let Some(d) = network.d {
            check_cap(d, max)?;
        }
    }
    let net = network.load(max)?;
    let cube = net.cube();
    let (distribution, seed) = provenance(&net);
    let params = pipeline.params(seed.unwrap_or(network.seed))?;

    if let Some((u, v)) = pair {
        cube.check_vertex(u)?;
        cube.check_vertex(v)?;
        if u == v {
            return Err(Error::SameVertex(u));
        }
        let built = Pipeline::new(&net, params).and_then(|p| p.build_pair(u, v));
        let (record, code) = match built {
            Ok(c) => {
                dump(dump_flows, cube, vec![DumpedFlow { u, v, flow: c.flow.clone() }], Format::Json)?;
                eprintln!("volume = {:.6}", c.volume);
                (
                    PairRecord {
                        d: cube.dim(),
                        u,
                        v,
                        kind: Some(c.spec.kind),
                        volume: c.volume,
                        escape_m_source: Some(c.stages.escape_m_source),
                        escape_m_sink: Some(c.stages.escape_m_sink),
                        middle_volume: Some(c.stages.middle_volume),
                        middle_mu: Some(c.stages.middle_mu),
                        stitch_theta: Some(c.stages.stitch_theta),
                        max_scaled_ratio: c.max_scaled_ratio,
                        error: None,
                    },
                    EXIT_OK,
                )
            }
            Err(e) if error_code(&e) == EXIT_USAGE => return Err(e),
            Err(e) => {
                eprintln!("construction failed: {e}");
                (
                    PairRecord {
                        d: cube.dim(),
                        u,
                        v,
                        kind: None,
                        volume: 0.0,
                        escape_m_source: None,
                        escape_m_sink: None,
                        middle_volume: None,
                        middle_mu: None,
                        stitch_theta: None,
                        max_scaled_ratio: None,
                        error: Some(e.to_string()),
                    },
                    EXIT_CONSTRUCTION,
                )
            }
        };
        output.write(&[record], Format::Json)?;
        return Ok(code);
    }

    let umode = uniform_mode(mode);
    let mut options = SolveOptions { keep_flows: dump_flows.is_some(), ..SolveOptions::default() };
    if let Some(k) = pipeline.pairs_per_distance {
        options.pairs_per_distance = k;
    }
    let sol = solve_uniform(&net, umode, &params, &options)?;
    let pairs = match (&sol.sampling, umode) {
        (_, UniformMode::Opp) => PairSet::Opp,
        (None, UniformMode::All) => PairSet::All,
        (Some(s), UniformMode::All) => {
            PairSet::Custom(crate::assemble::stratified_pairs(cube, s.pairs_per_distance, s.seed))
        }
    };
    let bounds = upper_bounds(&net, &pairs)?;
    if let Some(flows) = sol.final_flows() {
        let dumped = flows.into_iter().map(|(spec, flow)| DumpedFlow { u: spec.u, v: spec.v, flow }).collect();
        dump(dump_flows, cube, dumped, Format::Json)?;
    }
    let record = SolveRecord {
        mode: umode,
        d: cube.dim(),
        distribution,
        seed,
        phi: sol.phi,
        phi_raw: sol.phi_raw,
        audit_ratio: sol.audit_ratio,
        native_demand_ratio: sol.native_demand_ratio,
        demand_budget: sol.demand_budget,
        audit_passed: sol.audit_passed,
        commodities: sol.commodity_count,
        failures: sol.failures.len(),
        volume_min: sol.volumes.min,
        volume_median: sol.volumes.median,
        volume_max: sol.volumes.max,
        stitch_theta_max: sol.stitch_theta.max,
        escape_m_min: sol.escape_m.min,
        c_av: bounds.c_av,
        upper_bound: bounds.bound,
        first_failure: sol.failures.first().map(|f| format!("({}, {}): {}", f.u, f.v, f.message)),
    };
    output.write(&[record], Format::Json)?;
    eprintln!("phi = {:.6} ({} commodities, {} failed)", sol.phi, sol.commodity_count, sol.failures.len());
    Ok(if sol.failures.is_empty() { EXIT_OK } else { EXIT_CONSTRUCTION })
}

fn oracle(
    mode: Mode,
    pair: Option<(Vertex, Vertex)>,
    network: &NetworkArgs,
    params: &ConcurrentParams,
    dump_flows: Option<&Path>,
    output: &OutputArgs,
) -> Result<i32> {
    if !(params.omega > 0.0 && params.omega < 1.0) {
        return Err(Error::InvalidParameter(format!("omega = {} must lie in (0, 1)", params.omega)));
    }
    let max = match mode {
        Mode::Pair => MAX_DIMENSION,
        m => dimension_cap(uniform_mode(m), false, true),
    };
    if network.network.is_none() {
        if let Some(d) = network.d {
            check_cap(d, max)?;
        }
    }
    let net = network.load(max)?;
    let cube = net.cube();
    let (distribution, seed) = provenance(&net);
    let (label, pairs) = match (mode, pair) {
        (Mode::Pair, Some((u, v))) => (format!("pair {u} {v}"), PairSet::Custom(vec![(u, v)])),
        (Mode::All, _) => ("all".to_string(), PairSet::All),
        _ => ("opp".to_string(), PairSet::Opp),
    };
    let bounds = upper_bounds(&net, &pairs)?;
    let record = if let Some((u, v)) = pair {
        // A single commodity is an ordinary max flow: solve it exactly.
        let r = max_flow_single(cube, &net, u, v)?;
        dump(dump_flows, cube, vec![DumpedFlow { u, v, flow: r.flow }], Format::Json)?;
        OracleRecord {
            mode: label,
            d: cube.dim(),
            distribution,
            seed,
            omega: params.omega,
            phi_hat: r.value,
            dual_bound: r.cut_value,
            certified: true,
            passes: 0,
            c_av: bounds.c_av,
            upper_bound: bounds.bound,
        }
    } else {
        let r = if dump_flows.is_some() {
            max_concurrent_uniform(&net, &pairs, params)?
        } else {
            max_concurrent_value(&net, &pairs, params)?
        };
        if let Some(flows) = &r.flows {
            let dumped = flows.iter().map(|((u, v), f)| DumpedFlow { u: *u, v: *v, flow: f.clone() }).collect();
            dump(dump_flows, cube, dumped, Format::Json)?;
        }
        OracleRecord {
            mode: label,
            d: cube.dim(),
            distribution,
            seed,
            omega: params.omega,
            phi_hat: r.phi_hat,
            dual_bound: r.dual_bound,
            certified: r.certified,
            passes: r.passes,
            c_av: bounds.c_av,
            upper_bound: bounds.bound,
        }
    };
    output.write(std::slice::from_ref(&record), Format::Json)?;
    eprintln!("phi_hat = {:.6}, dual bound = {:.6}, certified = {}", record.phi_hat, record.dual_bound, record.certified);
    Ok(EXIT_OK)
}

fn audit(
    kind: AuditKind,
    opts: SubcubeAuditOptions,
    network: &NetworkArgs,
    pipeline: &PipelineArgs,
    output: &OutputArgs,
) -> Result<i32> {
    let net = network.load(MAX_DIMENSION)?;
    let cube = net.cube();
    let params = pipeline.params(network.seed)?;
    let (demand, expected) = match kind {
        AuditKind::Antipodal => {
            let a = audit_antipodal_superposition(&net, &params.scaling)?;
            (a.demand, 1.0 + a.epsilon_d)
        }
        AuditKind::Subcube => {
            let a = audit_subcube_superposition(&net, &params.scaling, opts)?;
            (a.demand, a.multiplier)
        }
    };
    let mut worst: f64 = 0.0;
    let rows: Vec<AuditRecord> = demand
        .iter()
        .enumerate()
        .map(|(i, &dem)| {
            let e = cube.edge_at(i);
            let c = net.capacity(i);
            let ratio = (c > 0.0).then(|| dem / c);
            let dev = match ratio {
                Some(r) => (r - expected).abs() / expected,
                None => dem.abs(),
            };
            worst = worst.max(dev);
            AuditRecord { edge_index: i, lower: e.lower, dim: e.dim, base_cap: c, demand: dem, ratio, expected_ratio: expected }
        })
        .collect();
    output.write(&rows, Format::Csv)?;
    eprintln!("expected ratio {expected:.12}, worst relative deviation {worst:.3e}");
    Ok(if worst <= AUDIT_TOL { EXIT_OK } else { EXIT_CONSTRUCTION })
}

fn verify(path: &Path, network: &NetworkArgs, tol: f64, output: &OutputArgs) -> Result<i32> {
    let (cube, flows) = read_flows(path)?;
    let net = match (&network.network, network.d) {
        (Some(_), _) => network.load(MAX_DIMENSION)?,
        (None, Some(_)) => network.load(MAX_DIMENSION)?,
        (None, None) => CapacityNetwork::sample(&network.dist, cube, network.seed)?,
    };
    if net.cube() != cube {
        return Err(Error::Format(format!("flow dump has d = {}, network has d = {}", cube.dim(), net.cube().dim())));
    }
    let utilization = |loads: &[f64]| -> f64 {
        loads
            .iter()
            .zip(net.capacities())
            .map(|(&l, &c)| if l <= tol { 0.0 } else if c > 0.0 { l / c } else { f64::INFINITY })
            .fold(0.0, f64::max)
    };
    let mut rows = Vec::with_capacity(flows.len() + 1);
    let mut total = vec![0.0; cube.edge_count()];
    let mut all_proper = true;
    let mut min_volume = f64::INFINITY;
    for f in &flows {
        let b = balance_report(&f.flow, &[f.u], &[f.v])?;
        let loads: Vec<f64> = f.flow.signed_values().iter().map(|x| x.abs()).collect();
        for (t, l) in total.iter_mut().zip(&loads) {
            *t += l;
        }
        let util = utilization(&loads);
        let proper = b.is_proper();
        all_proper &= proper;
        min_volume = min_volume.min(b.volume);
        rows.push(VerifyRecord {
            scope: "commodity".into(),
            u: Some(f.u),
            v: Some(f.v),
            volume: b.volume,
            interior_imbalance: b.interior_imbalance,
            mu: b.mu,
            proper,
            max_utilization: util,
            passed: proper && util <= 1.0 + tol,
        });
    }
    let joint = utilization(&total);
    let passed = all_proper && joint <= 1.0 + tol;
    rows.push(VerifyRecord {
        scope: "total".into(),
        u: None,
        v: None,
        volume: if flows.is_empty() { 0.0 } else { min_volume },
        interior_imbalance: compensated_sum(rows.iter().map(|r| r.interior_imbalance)),
        mu: rows.iter().map(|r| r.mu).fold(0.0, f64::max),
        proper: all_proper,
        max_utilization: joint,
        passed,
    });
    output.write(&rows, Format::Json)?;
    eprintln!("{} commodities, joint utilization {joint:.6}, {}", flows.len(), if passed { "passed" } else { "FAILED" });
    Ok(if passed { EXIT_OK } else { EXIT_CONSTRUCTION })
}
