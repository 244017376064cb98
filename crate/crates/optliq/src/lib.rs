//! Solver and verification suite for optimal liquidation under nonlinear
//! temporary price impact with a hard terminal constraint (inventory must
//! reach zero at the horizon).
//!
//! The crate is organized around the pipeline
//!
//! 1. [`model`] — market primitives: drift/volatility, the impact cost
//!    function and its convex conjugate, utility functions with bounded
//!    absolute risk aversion, and exact evaluation of realized revenues on
//!    discretized trading paths.
//! 2. [`cara`] — deterministic variational solver for the exponential-utility
//!    benchmark: the unique optimal strategy and value for CARA investors,
//!    which sandwich the general value function from both sides.
//! 3. [`dp`] — backward-induction value surface on a
//!    (time x inventory x revenue) grid for general bounded-ARA utilities,
//!    with feedback-policy extraction.
//! 4. [`mc`] — reproducible Monte Carlo simulation of the controlled system
//!    under a policy, with expected-utility estimators and budget/moment
//!    diagnostics.
//! 5. [`verify`] — each structural property of the value function restated
//!    as a pass/fail numerical check over solver outputs.

pub mod cara;
pub mod dp;
pub mod mc;
pub mod model;
pub mod numerics;
pub mod verify;
