//! Market primitives: price dynamics, temporary impact cost, utility
//! functions with bounded absolute risk aversion, and realized revenues of
//! discretized trading paths.

mod impact;
mod market;
mod strategy;
mod utility;

pub use impact::{ImpactError, ImpactFunction};
pub use market::{DiagnosticsReport, InvariantCheck, MarketModel, ModelError};
pub use strategy::{revenues, StrategyError, StrategyPath};
pub use utility::{ara_bounds, sandwich_utilities, SandwichPair, Utility, UtilityError};
