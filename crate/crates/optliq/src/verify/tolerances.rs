//! Central tolerance constants for the property checks, with their origin.

/// Scheme tolerance in `ln(offset - V)` units (approximately relative value
/// error). Calibrated by the exponential-utility consistency run on the
/// production grid, whose ceiling is 5% relative; every surface-based
/// inequality check inherits this budget.
pub const SCHEME_TOL_LOG: f64 = 0.05;

/// Tolerance for identities that hold exactly in the scheme (resting line,
/// single-candidate nodes, stationarity at zero): a few hundred ulps of
/// accumulated f64 rounding.
pub const EXACT_TOL: f64 = 1e-10;

/// Relative slack for inequalities that are monotone in exact arithmetic
/// and only perturbed by floating-point rounding of large magnitudes.
pub const FP_REL_TOL: f64 = 1e-12;

/// Absolute slack (scaled by the integrand size) for the pathwise
/// drift/impact integral bounds.
pub const PATHWISE_TOL: f64 = 1e-8;

/// Multiplier on Monte Carlo standard errors wherever a statistical budget
/// enters a tolerance sum.
pub const STAT_SIGMAS: f64 = 3.0;

/// Relative agreement required between the finite-difference revenue
/// derivative and its Monte Carlo counterpart (unless the statistical
/// budget is larger).
pub const DERIVATIVE_REL_TOL: f64 = 0.05;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_ordering() {
        assert!(FP_REL_TOL < EXACT_TOL);
        assert!(EXACT_TOL < PATHWISE_TOL);
        assert!(PATHWISE_TOL < SCHEME_TOL_LOG);
        assert!(DERIVATIVE_REL_TOL <= SCHEME_TOL_LOG + f64::EPSILON);
    }
}
