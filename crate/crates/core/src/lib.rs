//! Demand-capacity balancing planner core.

pub mod baselines;
pub mod community;
pub mod error;
pub mod eval;
pub mod flows;
pub mod fpfs;
pub mod generator;
pub mod heuristics;
pub mod io;
pub mod metrics;
pub mod mcts;
pub mod proposal;
pub mod regpolicy;
pub mod runlog;
pub mod study;
pub mod traffic;

pub use error::{Error, Result};
