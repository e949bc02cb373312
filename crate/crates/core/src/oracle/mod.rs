//! Independent reference solvers and upper bounds.

pub mod bounds;
pub mod concurrent;
pub mod lp;
pub mod maxflow;
