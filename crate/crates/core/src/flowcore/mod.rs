//! Flow calculus: directed flows, balance metrics, decomposition and stitching.

mod decompose;
mod flow;
mod stitch;

pub use decompose::{decompose, CycleFlow, Decomposition, PathFlow};
pub use flow::{
    balance_report, balance_report_with, check_feasible, compensated_sum, BalanceReport, DirectedFlow,
    FeasibilityReport, Terminals, WorstEdge,
};
pub use stitch::{stitch, stitch_auto, StitchChecks, StitchOutcome, THETA_LIMIT};
