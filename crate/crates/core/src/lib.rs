//! Simulation, accounting and auditing for functionally generated portfolios
//! under stochastic transaction costs.

pub mod audit;
pub mod backtest;
pub mod config;
pub mod cost;
pub mod error;
pub mod export;
pub mod ledger;
pub mod mc;
pub mod portfolio;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
