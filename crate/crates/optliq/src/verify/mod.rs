//! Every structural property of the value function restated as an
//! executable pass/fail check, plus the suite runner that produces the
//! scoreboard.

mod checks;
mod report;
mod suite;
pub mod tolerances;

pub use checks::{
    check_bellman, check_bellman_refinement, check_concavity, check_continuity,
    check_initial_condition, check_partial_derivative_r, check_sandwich, fenchel_drift_integral,
};
pub use report::{CheckReport, Verdict};
pub use suite::{run_suite, Scenario, SuiteConfig, SuiteError};
