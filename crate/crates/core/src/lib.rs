//! Equilibrium prices and portfolios for a speculative market where agents
//! disagree about the drift and volatility of a state process and pay
//! quadratic costs to carry long or short positions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clearing;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod market;
pub mod mc;
pub mod oracles;
pub mod solver;
pub mod static_market;
pub mod sweep;
pub mod verify;

pub use clearing::{AgentSet, ClearingKernel, ClearingResult, LocalValuations, Mode, Partition, SubsetCoefficients};
pub use error::{Error, Result};
pub use grid::{GridSpec, Scheme};
pub use market::{BeliefSpec, CoefficientField, CostStructure, MarketSpec, PayoffSpec, ValidationReport};
pub use sweep::SweepParam;
pub use verify::{VerifyOptions, VerifyReport};
