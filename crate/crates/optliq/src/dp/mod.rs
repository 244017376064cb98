//! Backward-induction value surface for bounded-ARA utilities on a
//! (time x inventory x revenue) grid, with feedback-policy extraction.

mod grid;
mod policy;
mod step;
mod surface;

pub use grid::{Axis, GridError, SolverGrid};
pub use policy::{extract_policy, FeedbackPolicy, PolicyError};
pub use step::{
    backward_step, bellman_residual, solve_surface, solve_value, surface_offset, terminal_layer,
    DpError, StepContext, StepStats, StreamOutcome,
};
pub use surface::{content_hash, Layer, ValueSurface, POLICY_INFEASIBLE};
