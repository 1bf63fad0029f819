//! Optimal decumulation for a retiree holding a stock index and a bond index.
//!
//! The crate provides a jump-diffusion market simulator, a stationary block
//! bootstrap over historical monthly returns, a pair of small feedforward
//! networks parameterising withdrawal and allocation controls, a pathwise
//! trainer for the expected-withdrawal / expected-shortfall objective, and a
//! dynamic-programming reference solver on a Fourier grid.

pub mod data;
pub mod error;
pub mod hjb;
pub mod market;
pub mod objective;
pub mod paths;
pub mod policy;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
pub use market::{AssetJumpParams, MarketParams};
pub use paths::PathSet;
pub use scenario::{Kappa, ScenarioConfig};
