//! Multicommodity flows on hypercubes with random edge capacities.
//!
//! The crate samples capacity networks, builds explicit constructive flows (escape
//! flows, layer crossings, stitching), and checks them against an approximate
//! concurrent-flow oracle and exact small-instance solvers.

pub mod assemble;
pub mod capacities;
pub mod error;
pub mod escape;
pub mod flowcore;
pub mod harness;
pub mod hypercube;
pub mod layercross;
pub mod netscale;
pub mod oracle;
pub mod rng;

pub use capacities::{CapacityDistribution, CapacityModel, CapacityNetwork};
pub use error::{Error, Result, Stage};
pub use hypercube::{Cube, EdgeId, Subcube, Vertex};
