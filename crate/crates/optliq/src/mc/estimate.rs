//! Expected-utility estimation and the budget / exponential-moment
//! diagnostics evaluated on simulation output.

use crate::model::Utility;

use super::sim::{SimError, SimResult};

/// Sample estimate of `E[u(R_T)]` with jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci99: (f64, f64),
}

/// Mean utility with delete-one jackknife standard error and a 99%
/// confidence interval.
pub fn estimate_value(result: &SimResult, utility: &Utility) -> Result<ValueEstimate, SimError> {
    let n = result.n();
    if n == 0 {
        return Err(SimError::Empty);
    }
    let mut vals = Vec::with_capacity(n);
    for (path, s) in result.samples.iter().enumerate() {
        let v = utility.value(s.terminal_revenue);
        if !v.is_finite() {
            return Err(SimError::NonFiniteUtility {
                path,
                revenue: s.terminal_revenue,
            });
        }
        vals.push(v);
    }
    // Antithetic pairs are dependent; fold them into their averages so the
    // jackknife runs over independent units.
    if result.config.antithetic && vals.len() >= 4 && vals.len() % 2 == 0 {
        vals = vals.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    }
    let n = vals.len();
    let sum: f64 = vals.iter().sum();
    let mean = sum / n as f64;
    let stderr = if n == 1 {
        0.0
    } else {
        // Delete-one jackknife of the sample mean.
        let mut ss = 0.0;
        for &v in &vals {
            let loo = (sum - v) / (n - 1) as f64;
            ss += (loo - mean) * (loo - mean);
        }
        ((n - 1) as f64 / n as f64 * ss).sqrt()
    };
    let z99 = 2.575_829_303_548_901;
    Ok(ValueEstimate {
        mean,
        stderr,
        ci99: (mean - z99 * stderr, mean + z99 * stderr),
    })
}

/// Verdict of the impact-budget bound for (near-)optimal policies:
///
/// ```text
/// E[int f(-xi) dt]  <=  4/3 ((-V2)/A1 + R0 + N_b) + 3 stderr,
/// N_b = |b| C T^2,
/// ```
///
/// with `C` the superlinearity threshold constant. For `b = 0` the drift
/// term degenerates and `N_b = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetCheck {
    pub sample_mean: f64,
    pub stderr: f64,
    pub bound: f64,
    /// `bound - sample_mean`; nonnegative means pass.
    pub margin: f64,
    pub passed: bool,
}

/// The closed-form threshold constant for the power-law impact used in the
/// budget bound: `C = (4 |b| T lambda)^(-1/(p-1))`.
pub fn budget_threshold_constant(b_norm: f64, horizon: f64, lambda: f64, p: f64) -> f64 {
    if b_norm == 0.0 {
        return 0.0;
    }
    (4.0 * b_norm * horizon * lambda).powf(-1.0 / (p - 1.0))
}

pub fn budget_check(
    result: &SimResult,
    a1: f64,
    v2: f64,
    r0: f64,
    b_norm: f64,
    horizon: f64,
    threshold_c: f64,
) -> BudgetCheck {
    let (sample_mean, stderr) = result.mean_budget();
    let n_b = b_norm * threshold_c * horizon * horizon;
    let bound = 4.0 / 3.0 * ((-v2) / a1 + r0 + n_b) + 3.0 * stderr;
    let margin = bound - sample_mean;
    BudgetCheck {
        sample_mean,
        stderr,
        bound,
        margin,
        passed: margin >= 0.0,
    }
}

/// Sample estimate of the exponential moment `E[exp(-a R_T)]` with a
/// heavy-tail concentration flag: suspicion is raised when the largest 0.1%
/// of the summands carry more than half of the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub order: f64,
    pub estimate: f64,
    pub finite: bool,
    /// Share of the sum carried by the top 0.1% of terms.
    pub top_share: f64,
    pub heavy_tail: bool,
}

pub fn moment_check(result: &SimResult, a2: f64) -> MomentCheck {
    let order = 2.0 * a2;
    let mut terms: Vec<f64> = result
        .samples
        .iter()
        .map(|s| (-order * s.terminal_revenue).exp())
        .collect();
    let sum: f64 = terms.iter().sum();
    let finite = sum.is_finite();
    let estimate = sum / terms.len() as f64;
    let k = (terms.len() / 1000).max(1);
    terms.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let top: f64 = terms[..k].iter().sum();
    let top_share = if sum > 0.0 && finite { top / sum } else { 1.0 };
    MomentCheck {
        order,
        estimate,
        finite,
        top_share,
        heavy_tail: !finite || top_share > 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::sim::{PathSample, SimConfig, SimResult};
    use approx::assert_relative_eq;

    fn result_from_revenues(revenues: &[f64]) -> SimResult {
        SimResult {
            config: SimConfig {
                n_paths: revenues.len(),
                steps: 1,
                seed: 0,
                antithetic: false,
            },
            horizon: 1.0,
            samples: revenues
                .iter()
                .map(|&r| PathSample {
                    terminal_revenue: r,
                    budget: 0.0,
                    fuel_residual: 0.0,
                    windows: vec![],
                })
                .collect(),
            windows: vec![],
        }
    }

    #[test]
    fn constant_samples_have_zero_error() {
        let u = Utility::cara(1.0).unwrap();
        let res = result_from_revenues(&[1.7; 50]);
        let est = estimate_value(&res, &u).unwrap();
        assert_relative_eq!(est.mean, u.value(1.7));
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn two_samples_average() {
        let u = Utility::cara(1.0).unwrap();
        let res = result_from_revenues(&[0.0, 2.0]);
        let est = estimate_value(&res, &u).unwrap();
        assert_relative_eq!(est.mean, 0.5 * (u.value(0.0) + u.value(2.0)));
    }

    #[test]
    fn standard_normal_revenues_match_lognormal_moment() {
        // E[-exp(-Z)] = -exp(1/2) for Z ~ N(0,1).
        let u = Utility::cara(1.0).unwrap();
        let revenues: Vec<f64> = (0..100_000)
            .map(|i| crate::mc::rng::normal(9, i as u64, 0, 0))
            .collect();
        let res = result_from_revenues(&revenues);
        let est = estimate_value(&res, &u).unwrap();
        let expect = -(0.5f64).exp();
        assert!(
            (est.mean - expect).abs() <= 3.0 * est.stderr,
            "{} vs {} (stderr {})",
            est.mean,
            expect,
            est.stderr
        );
    }

    #[test]
    fn overflowing_utility_is_reported() {
        let u = Utility::cara(2.0).unwrap();
        let res = result_from_revenues(&[0.0, -400.0]);
        assert!(matches!(
            estimate_value(&res, &u),
            Err(SimError::NonFiniteUtility { path: 1, .. })
        ));
    }

    #[test]
    fn moment_check_constant_samples() {
        let res = result_from_revenues(&[0.3; 10]);
        let m = moment_check(&res, 2.0);
        assert_relative_eq!(m.estimate, (-4.0f64 * 0.3).exp(), epsilon = 1e-12);
        assert!(m.finite && !m.heavy_tail);
    }

    #[test]
    fn moment_check_flags_enormous_exposure() {
        // Extremely wide revenue spread concentrates the exponential sum in
        // a handful of paths.
        let revenues: Vec<f64> = (0..10_000)
            .map(|i| 40.0 * crate::mc::rng::normal(11, i as u64, 0, 0))
            .collect();
        let res = result_from_revenues(&revenues);
        let m = moment_check(&res, 2.0);
        assert!(m.heavy_tail, "top share {}", m.top_share);
    }

    #[test]
    fn budget_threshold_matches_hand_value() {
        // (4 * 0.1 * 1 * 0.5)^(-1) = 5 for the quadratic impact.
        assert_relative_eq!(budget_threshold_constant(0.1, 1.0, 0.5, 2.0), 5.0);
        assert_eq!(budget_threshold_constant(0.0, 1.0, 0.5, 2.0), 0.0);
    }

    #[test]
    fn zero_inventory_budget_passes_degenerate_bound() {
        let res = result_from_revenues(&[0.0; 4]);
        // b = 0: bound = 4/3 ((-V2)/A1 + R0); V2 = u2(0) = -1 at rest.
        let check = budget_check(&res, 0.5, -1.0, 0.0, 0.0, 1.0, 0.0);
        assert!(check.passed);
        assert_relative_eq!(check.bound, 4.0 / 3.0 * 2.0, epsilon = 1e-12);
    }
}
