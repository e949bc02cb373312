//! Seeded experiment campaigns over (d, seed) with constructive and oracle estimates.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemble::{
    median_sorted, solve_uniform, stratified_pairs, PipelineParams, SolveOptions, UniformMode,
    ALL_PAIRS_EXHAUSTIVE_MAX_D, ALL_PAIRS_SAMPLED_MAX_D, DEFAULT_PAIRS_PER_DISTANCE,
};
use crate::capacities::{CapacityDistribution, CapacityNetwork};
use crate::error::{Error, Result};
use crate::escape::DEFAULT_ALPHA;
use crate::harness::io::SCHEMA_VERSION;
use crate::hypercube::{Cube, MAX_DIMENSION};
use crate::layercross::{MiddleMethod, MiddleParams};
use crate::netscale::ScalingParams;
use crate::oracle::bounds::{upper_bounds, PairSet};
use crate::oracle::concurrent::{max_concurrent_value, ConcurrentParams, ALL_MAX_D, OPP_MAX_D};
use crate::rng::GENERATOR;

/// Slack used by the per-row consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-9;

fn default_mode() -> UniformMode {
    UniformMode::Opp
}
fn default_kappa() -> f64 {
    0.6
}
fn default_omega() -> f64 {
    ConcurrentParams::default().omega
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn yes() -> bool {
    true
}

/// Experiment description. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Vec<u32>,
    pub distribution: CapacityDistribution,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_mode")]
    pub mode: UniformMode,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Scaling constant M; the escape estimate is used when absent.
    #[serde(rename = "M", default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub ell_override: Option<u32>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Smoothing radius of the middle construction.
    #[serde(default)]
    pub radius: Option<u32>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub middle: MiddleMethod,
    #[serde(default = "yes")]
    pub constructive: bool,
    #[serde(default = "yes")]
    pub oracle: bool,
    /// Wall-clock budget per row; an exceeded row is marked `timeout`.
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    /// Pairs per distance class for sampled all-pairs runs.
    #[serde(default)]
    pub pairs_per_distance: Option<usize>,
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(dims: Vec<u32>, distribution: CapacityDistribution, seeds: Vec<u64>, mode: UniformMode) -> Self {
        ExperimentConfig {
            dims,
            distribution,
            seeds,
            mode,
            kappa: default_kappa(),
            m: None,
            ell_override: None,
            omega: default_omega(),
            radius: None,
            epsilon: None,
            alpha: default_alpha(),
            middle: MiddleMethod::default(),
            constructive: true,
            oracle: true,
            timeout_secs: None,
            pairs_per_distance: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Pipeline parameters for one seed.
    pub fn pipeline_params(&self, seed: u64) -> PipelineParams {
        let defaults = ScalingParams::default();
        let mut middle = MiddleParams::for_kappa(self.kappa);
        if let Some(eps) = self.epsilon {
            middle.epsilon = eps;
        }
        if let Some(r) = self.radius {
            middle.smoothing_radius = r;
        }
        middle.method = self.middle;
        PipelineParams {
            scaling: ScalingParams { kappa: self.kappa, m: self.m.unwrap_or(defaults.m), ell_override: self.ell_override },
            alpha: self.alpha,
            middle,
            seed,
        }
    }

    pub fn oracle_params(&self) -> ConcurrentParams {
        ConcurrentParams { omega: self.omega, ..ConcurrentParams::default() }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            pairs_per_distance: self.pairs_per_distance.unwrap_or(DEFAULT_PAIRS_PER_DISTANCE),
            ..SolveOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        self.pipeline_params(0).scaling.validate()?;
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::InvalidParameter(format!("omega = {} must lie in (0, 1)", self.omega)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::InvalidParameter(format!("epsilon = {eps} must lie in (0, 1)")));
            }
        }
        if let Some(r) = self.radius {
            if r % 2 != 0 {
                return Err(Error::InvalidParameter(format!("radius = {r} must be even")));
            }
        }
        if let Some(t) = self.timeout_secs {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter(format!("timeoutSecs = {t} must be positive")));
            }
        }
        if self.pairs_per_distance == Some(0) {
            return Err(Error::InvalidParameter("pairsPerDistance must be positive".into()));
        }
        for &d in &self.dims {
            check_dimension(d, self.mode, self.constructive, self.oracle)?;
        }
        Ok(())
    }
}

/// Largest d each solver accepts in the given mode.
pub fn dimension_cap(mode: UniformMode, constructive: bool, oracle: bool) -> u32 {
    let mut cap = MAX_DIMENSION;
    if constructive && mode == UniformMode::All {
        cap = cap.min(ALL_PAIRS_SAMPLED_MAX_D);
    }
    if oracle {
        cap = cap.min(match mode {
            UniformMode::Opp => OPP_MAX_D,
            UniformMode::All => ALL_MAX_D,
        });
    }
    cap
}

pub fn check_dimension(d: u32, mode: UniformMode, constructive: bool, oracle: bool) -> Result<()> {
    let max = dimension_cap(mode, constructive, oracle);
    if d == 0 || d > max {
        return Err(Error::DimensionOutOfRange { d, max });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    /// Every requested estimate was produced and every commodity was built.
    Ok,
    /// The constructive pipeline reported commodity failures (φ = 0).
    Failed,
    /// The row exceeded its wall-clock budget.
    Timeout,
    /// A stage returned an error; see `message`.
    Error,
}

/// One (d, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentRow {
    pub d: u32,
    pub distribution: String,
    pub seed: u64,
    pub mode: UniformMode,
    pub status: RowStatus,
    pub c_av: Option<f64>,
    /// Σc_e / Σd(u,v) over the routed pairs.
    pub upper_bound: Option<f64>,
    pub phi_constructive: Option<f64>,
    pub phi_raw: Option<f64>,
    pub audit_ratio: Option<f64>,
    pub audit_passed: Option<bool>,
    pub commodities: Option<usize>,
    pub commodity_failures: Option<usize>,
    pub phi_oracle: Option<f64>,
    pub oracle_dual_bound: Option<f64>,
    pub oracle_certified: Option<bool>,
    pub oracle_passes: Option<usize>,
    /// φ_constructive ≤ φ_oracle/(1−ω) + tol ≤ upperBound·(1+tol) on the available values.
    pub consistent: bool,
    pub wall_time_secs: f64,
    pub message: Option<String>,
}

impl ExperimentRow {
    /// 1 for opp, 2^{d−1} for all: the factor that makes φ comparable with E[C].
    pub fn scale(&self) -> f64 {
        match self.mode {
            UniformMode::Opp => 1.0,
            UniformMode::All => 2f64.powi(self.d as i32 - 1),
        }
    }
}

/// Per-dimension aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DimensionSummary {
    pub d: u32,
    pub runs: usize,
    pub ok: usize,
    pub failed: usize,
    pub timeouts: usize,
    pub errors: usize,
    /// Share of rows whose status is not `ok`.
    pub failure_rate: f64,
    pub median_c_av: Option<f64>,
    pub median_upper_bound: Option<f64>,
    pub median_phi_constructive: Option<f64>,
    pub median_phi_oracle: Option<f64>,
    /// Medians of φ multiplied by the mode's scale factor.
    pub median_scaled_constructive: Option<f64>,
    pub median_scaled_oracle: Option<f64>,
    pub median_wall_time_secs: f64,
    pub inconsistent_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub rng_generator: String,
    pub consistency_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub manifest: Manifest,
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<DimensionSummary>,
}

impl ExperimentReport {
    /// Rows whose status is not `ok`.
    pub fn unsuccessful(&self) -> usize {
        self.rows.iter().filter(|r| r.status != RowStatus::Ok).count()
    }
}

/// Run every (d, seed) row of the config. Row failures are recorded, never propagated.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut grid: Vec<(u32, u64)> =
        config.dims.iter().flat_map(|&d| config.seeds.iter().map(move |&s| (d, s))).collect();
    grid.sort_unstable();
    grid.dedup();
    let rows: Vec<ExperimentRow> = grid.par_iter().map(|&(d, seed)| run_row(config, d, seed)).collect();
    let summary = summarize(&rows);
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        manifest: Manifest {
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_generator: GENERATOR.to_string(),
            consistency_tol: CONSISTENCY_TOL,
        },
        rows,
        summary,
    })
}

/// Pairs routed by the constructive pipeline, for the matching cut bound.
fn routed_pairs(config: &ExperimentConfig, cube: Cube, seed: u64) -> PairSet {
    match config.mode {
        UniformMode::Opp => PairSet::Opp,
        UniformMode::All if cube.dim() <= ALL_PAIRS_EXHAUSTIVE_MAX_D || !config.constructive => PairSet::All,
        UniformMode::All => PairSet::Custom(stratified_pairs(
            cube,
            config.pairs_per_distance.unwrap_or(DEFAULT_PAIRS_PER_DISTANCE),
            seed,
        )),
    }
}

/// One row; never fails.
pub fn run_row(config: &ExperimentConfig, d: u32, seed: u64) -> ExperimentRow {
    let start = Instant::now();
    let deadline = config.timeout_secs.map(|t| start + Duration::from_secs_f64(t));
    let mut row = ExperimentRow {
        d,
        distribution: config.distribution.to_string(),
        seed,
        mode: config.mode,
        status: RowStatus::Ok,
        c_av: None,
        upper_bound: None,
        phi_constructive: None,
        phi_raw: None,
        audit_ratio: None,
        audit_passed: None,
        commodities: None,
        commodity_failures: None,
        phi_oracle: None,
        oracle_dual_bound: None,
        oracle_certified: None,
        oracle_passes: None,
        consistent: true,
        wall_time_secs: 0.0,
        message: None,
    };
    if let Err(e) = fill_row(config, &mut row, deadline) {
        row.status = if matches!(e, Error::Timeout) { RowStatus::Timeout } else { RowStatus::Error };
        row.message = Some(e.to_string());
    }
    row.consistent = is_consistent(&row, config.omega);
    row.wall_time_secs = start.elapsed().as_secs_f64();
    row
}

fn fill_row(config: &ExperimentConfig, row: &mut ExperimentRow, deadline: Option<Instant>) -> Result<()> {
    let cube = Cube::new(row.d)?;
    let base = CapacityNetwork::sample(&config.distribution, cube, row.seed)?;
    let pairs = routed_pairs(config, cube, row.seed);
    let bounds = upper_bounds(&base, &pairs)?;
    row.c_av = Some(bounds.c_av);
    row.upper_bound = Some(bounds.bound);

    if config.constructive {
        let options = SolveOptions { deadline, ..config.solve_options() };
        let sol = solve_uniform(&base, config.mode, &config.pipeline_params(row.seed), &options)?;
        row.phi_constructive = Some(sol.phi);
        row.phi_raw = Some(sol.phi_raw);
        row.audit_ratio = Some(sol.audit_ratio);
        row.audit_passed = Some(sol.audit_passed);
        row.commodities = Some(sol.commodity_count);
        row.commodity_failures = Some(sol.failures.len());
        if !sol.failures.is_empty() {
            row.status = RowStatus::Failed;
            let first = &sol.failures[0];
            row.message = Some(format!(
                "{} of {} commodities failed; first ({}, {}): {}",
                sol.failures.len(),
                sol.commodity_count,
                first.u,
                first.v,
                first.message
            ));
        }
    }
    if config.oracle {
        let params = ConcurrentParams { deadline, ..config.oracle_params() };
        let oracle_pairs = match config.mode {
            UniformMode::Opp => PairSet::Opp,
            UniformMode::All => PairSet::All,
        };
        let r = max_concurrent_value(&base, &oracle_pairs, &params)?;
        row.phi_oracle = Some(r.phi_hat);
        row.oracle_dual_bound = Some(r.dual_bound);
        row.oracle_certified = Some(r.certified);
        row.oracle_passes = Some(r.passes);
    }
    Ok(())
}

/// The ordering φ_constructive ≤ φ_oracle/(1−ω) + tol ≤ upperBound·(1+tol), on the values present.
/// An uncertified oracle run contributes its dual bound instead of φ̂/(1−ω).
pub fn is_consistent(row: &ExperimentRow, omega: f64) -> bool {
    let tol = CONSISTENCY_TOL;
    let oracle_cap = match (row.phi_oracle, row.oracle_certified, row.oracle_dual_bound) {
        (Some(p), Some(true), _) => Some(p / (1.0 - omega)),
        (Some(_), _, Some(b)) => Some(b),
        _ => None,
    };
    // The oracle always routes the full pair set; the sampled constructive set has its own bound.
    let same_pairs = row.mode == UniformMode::Opp || row.d <= ALL_PAIRS_EXHAUSTIVE_MAX_D;
    let mut ok = true;
    if let (Some(c), Some(cap)) = (row.phi_constructive, oracle_cap) {
        if same_pairs {
            ok &= c <= cap + tol;
        }
    }
    if let Some(ub) = row.upper_bound {
        let ceiling = ub * (1.0 + tol) + tol;
        if let Some(p) = row.phi_oracle {
            ok &= !same_pairs || p <= ceiling;
        }
        if let Some(c) = row.phi_constructive {
            ok &= c <= ceiling;
        }
    }
    ok
}

fn median(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(median_sorted(&v))
}

pub fn summarize(rows: &[ExperimentRow]) -> Vec<DimensionSummary> {
    let mut dims: Vec<u32> = rows.iter().map(|r| r.d).collect();
    dims.dedup();
    dims.into_iter()
        .map(|d| {
            let group: Vec<&ExperimentRow> = rows.iter().filter(|r| r.d == d).collect();
            let count = |s: RowStatus| group.iter().filter(|r| r.status == s).count();
            let runs = group.len();
            let ok = count(RowStatus::Ok);
            DimensionSummary {
                d,
                runs,
                ok,
                failed: count(RowStatus::Failed),
                timeouts: count(RowStatus::Timeout),
                errors: count(RowStatus::Error),
                failure_rate: (runs - ok) as f64 / runs as f64,
                median_c_av: median(group.iter().filter_map(|r| r.c_av)),
                median_upper_bound: median(group.iter().filter_map(|r| r.upper_bound)),
                median_phi_constructive: median(group.iter().filter_map(|r| r.phi_constructive)),
                median_phi_oracle: median(group.iter().filter_map(|r| r.phi_oracle)),
                median_scaled_constructive: median(group.iter().filter_map(|r| r.phi_constructive.map(|p| p * r.scale()))),
                median_scaled_oracle: median(group.iter().filter_map(|r| r.phi_oracle.map(|p| p * r.scale()))),
                median_wall_time_secs: median(group.iter().map(|r| r.wall_time_secs)).unwrap_or(0.0),
                inconsistent_rows: group.iter().filter(|r| !r.consistent).count(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text)
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = config(r#"{"dims":[4],"distribution":"bernoulli:1","seeds":[1],"colour":"red"}"#).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
    }

    #[test]
    fn config_defaults_and_caps() {
        let c = config(r#"{"dims":[4],"distribution":"bernoulli:0.75"}"#).unwrap();
        assert_eq!(c.mode, UniformMode::Opp);
        assert!(c.seeds.is_empty() && c.constructive && c.oracle);
        assert!(matches!(
            config(r#"{"dims":[12],"distribution":"bernoulli:0.75","seeds":[1]}"#),
            Err(Error::DimensionOutOfRange { max: 11, .. })
        ));
        let c = config(r#"{"dims":[12],"distribution":"bernoulli:0.75","oracle":false,"M":7}"#).unwrap();
        assert_eq!(c.pipeline_params(3).scaling.m, 7.0);
        assert!(config(r#"{"dims":[4],"distribution":"bernoulli:0.75","omega":1.5}"#).is_err());
        assert!(config(r#"{"dims":[4],"distribution":"bernoulli:1.5"}"#).is_err());
    }

    #[test]
    fn empty_seed_list_gives_empty_report() {
        let c = ExperimentConfig::new(vec![5, 6], "bernoulli:0.75".parse().unwrap(), vec![], UniformMode::Opp);
        let r = run_experiment(&c).unwrap();
        assert!(r.rows.is_empty() && r.summary.is_empty());
        assert_eq!(r.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn rows_are_ordered_and_consistent() {
        let c = ExperimentConfig::new(vec![5, 4], "bernoulli:1".parse().unwrap(), vec![2, 1], UniformMode::Opp);
        let r = run_experiment(&c).unwrap();
        let keys: Vec<(u32, u64)> = r.rows.iter().map(|r| (r.d, r.seed)).collect();
        assert_eq!(keys, vec![(4, 1), (4, 2), (5, 1), (5, 2)]);
        for row in &r.rows {
            assert_eq!(row.status, RowStatus::Ok, "{row:?}");
            assert!(row.consistent);
            assert_eq!(row.upper_bound, Some(1.0));
        }
        assert_eq!(r.summary.len(), 2);
    }

    #[test]
    fn tiny_timeout_marks_rows() {
        let mut c = ExperimentConfig::new(vec![9], "bernoulli:0.75".parse().unwrap(), vec![1], UniformMode::Opp);
        c.timeout_secs = Some(1e-9);
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.rows[0].status, RowStatus::Timeout);
        assert_eq!(r.summary[0].timeouts, 1);
    }
}
