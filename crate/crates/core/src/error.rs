use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure originated in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Escape,
    Split,
    Middle,
    Stitch,
    Near,
    Audit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Escape => "escape",
            Stage::Split => "split",
            Stage::Middle => "middle",
            Stage::Stitch => "stitch",
            Stage::Near => "near",
            Stage::Audit => "audit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {d} outside supported range 1..={max}")]
    DimensionOutOfRange { d: u32, max: u32 },
    #[error("vertex {vertex} out of range for d = {d}")]
    VertexOutOfRange { vertex: u64, d: u32 },
    #[error("vertices {u} and {v} are not adjacent")]
    NotAdjacent { u: u32, v: u32 },
    #[error("pair endpoints must differ (got {0} twice)")]
    SameVertex(u32),
    #[error("layer {m} out of range for dimension {d}")]
    LayerOutOfRange { m: u32, d: u32 },
    #[error("edge index {index} out of range ({count} edges)")]
    EdgeOutOfRange { index: usize, count: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("condition violated: Pr[C > 0] = {prob} must exceed 1/2")]
    ConditionViolated { prob: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate layering: d = {d}, ell = {ell} violates {constraint}")]
    DegenerateLayering { d: u32, ell: u32, constraint: &'static str },
    #[error("source and sink sets must be disjoint and nonempty")]
    BadTerminals,
    #[error("flow is not proper: interior imbalance {imbalance:e} exceeds tolerance (stitch it first)")]
    ImproperFlow { imbalance: f64 },
    #[error("stitch hypothesis violated: interior/size = {interior_ratio:.6}, deviation/size = {deviation_ratio:.6}, theta = {theta:.6}")]
    StitchHypothesis { interior_ratio: f64, deviation_ratio: f64, theta: f64 },
    #[error("vertex {vertex} is poorly connected at alpha = {alpha} (failed criteria {criteria:?})")]
    PoorlyConnected { vertex: u32, alpha: f64, criteria: Vec<u8> },
    #[error("poorly connected vertices inside the escape ball of {center}: {vertices:?}")]
    PoorBall { center: u32, vertices: Vec<u32> },
    #[error("no route from {from} to neighbour {to}")]
    NoRoute { from: u32, to: u32 },
    #[error("plan is not balanced (mu = {mu:e})")]
    Unbalanced { mu: f64 },
    #[error("shell allocation {allocation} exceeds 1/|V_ell| = {limit}")]
    Allocation { allocation: f64, limit: f64 },
    #[error("no capacity in layer {m}")]
    NoCapacity { m: u32 },
    #[error("pair ({u}, {v}) at distance {dist} is not {expected}")]
    PairKind { u: u32, v: u32, dist: u32, expected: &'static str },
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("deadline exceeded")]
    Timeout,
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            Error::Timeout => Error::Timeout,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// Stage tag, if the error was raised inside a pipeline stage.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
