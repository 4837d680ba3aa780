//! Bayesian model-based active exploration.
//!
//! A probabilistic dynamics network is fitted to a replay buffer, its weight
//! uncertainty is captured by one of three approximate posteriors (deep
//! ensembles, MC-dropout, subnetwork Laplace), and exploration is driven by
//! information measures computed from that posterior. Downstream tasks are
//! then solved by planning inside the learned model.

pub mod cli;
pub mod dyn_model;
pub mod envs;
pub mod error;
pub mod infogain;
pub mod metrics;
pub mod numkit;
pub mod pipeline;
pub mod planner;
pub mod posterior;

pub use error::{Error, Result};
