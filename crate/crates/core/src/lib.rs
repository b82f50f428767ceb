//! Simulation laboratory for fractional and mixed fractional Black–Scholes
//! markets: samplers, pathwise calculus, trading strategies, transaction
//! costs, binary tree approximations and aggregation models.

pub mod aggregation;
pub mod costs;
pub mod error;
pub mod fbm;
pub mod market;
pub mod pathwise;
pub mod quad;
pub mod rng;
pub mod stats;
pub mod strategies;
pub mod tree;

pub use error::{Error, Result};
