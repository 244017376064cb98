//! Deterministic variational solver for the exponential-utility benchmark.
//!
//! For an exponential investor with risk aversion `A`, conditioning on a
//! deterministic path and taking the Gaussian moment of the stochastic
//! integral collapses the stochastic problem to minimizing
//!
//! ```text
//! J(X) = int_0^T  (A/2) X^T Sigma X  -  b . X  +  f(-xi)  dt,
//! ```
//!
//! over absolutely continuous paths with `X(0) = X0`, `X(T) = 0`; the value
//! is `-exp(-A R0 + A inf J)`. The running cost is jointly convex and
//! strictly convex in the rate, so the discretized problem has a unique
//! minimizer found by damped Newton.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{ImpactFunction, MarketModel, StrategyPath, Utility};
use crate::numerics::tridiag::solve_block_tridiag;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SolveError {
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("need at least one step, got {0}")]
    NoSteps(usize),
    #[error("risk aversion must be nonnegative, got {0}")]
    NegativeRiskAversion(f64),
    #[error("inventory dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("Newton iteration failed to reach residual 1e-9 after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("non-finite objective encountered")]
    NonFinite,
}

/// Running cost `L(x, xi) = (A/2) x^T Sigma x - b.x + f(-xi)`.
#[derive(Debug, Clone)]
pub struct CaraLagrangian<'a> {
    pub a: f64,
    pub model: &'a MarketModel,
    pub impact: &'a ImpactFunction,
}

impl<'a> CaraLagrangian<'a> {
    pub fn new(a: f64, model: &'a MarketModel, impact: &'a ImpactFunction) -> Self {
        Self { a, model, impact }
    }

    pub fn eval(&self, x: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        0.5 * self.a * self.model.variance_rate(x) - self.model.b.dot(x) + self.impact.cost(&(-xi))
    }
}

/// Minimizer of the discretized exponential-utility cost.
#[derive(Debug, Clone)]
pub struct CaraSolution {
    pub strategy: StrategyPath,
    /// `inf int L dt` on the piecewise-constant-rate grid.
    pub cost: f64,
    /// `-exp(-A R0 + A cost)`; underflows to `-inf` for extreme parameters.
    pub value: f64,
    /// `A (cost - R0) = ln(-value)`, always finite.
    pub log_neg_value: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Trapezoidal-in-inventory, exact-in-rate quadrature of `int L dt` along a
/// piecewise-constant-rate path.
pub fn cara_cost(
    a: f64,
    model: &MarketModel,
    impact: &ImpactFunction,
    strategy: &StrategyPath,
) -> f64 {
    let lag = CaraLagrangian::new(a, model, impact);
    let mut total = 0.0;
    for i in 0..strategy.n_steps() {
        let dt = strategy.dt(i);
        let quad = |x: &DVector<f64>| 0.5 * lag.a * model.variance_rate(x) - model.b.dot(x);
        let x_part = 0.5 * (quad(strategy.x_node(i)) + quad(strategy.x_node(i + 1)));
        total += dt * (x_part + impact.cost(&(-&strategy.rates()[i])));
    }
    total
}

/// Solves for the unique optimal deterministic strategy on a uniform
/// `n`-step grid, starting from linear liquidation.
pub fn solve_cara(
    a: f64,
    model: &MarketModel,
    impact: &ImpactFunction,
    t: f64,
    x0: &DVector<f64>,
    r0: f64,
    n: usize,
) -> Result<CaraSolution, SolveError> {
    let init = initial_interior(x0, n);
    solve_cara_from(a, model, impact, t, x0, r0, n, init)
}

/// Same as [`solve_cara`] but from a caller-supplied interior iterate
/// (inventory at the `n - 1` interior grid nodes). Used to confirm that the
/// minimizer is independent of the starting point.
#[allow(clippy::too_many_arguments)]
pub fn solve_cara_from(
    a: f64,
    model: &MarketModel,
    impact: &ImpactFunction,
    t: f64,
    x0: &DVector<f64>,
    r0: f64,
    n: usize,
    mut interior: Vec<DVector<f64>>,
) -> Result<CaraSolution, SolveError> {
    if !(t > 0.0) {
        return Err(SolveError::NonPositiveHorizon(t));
    }
    if n == 0 {
        return Err(SolveError::NoSteps(0));
    }
    if !(a >= 0.0) {
        return Err(SolveError::NegativeRiskAversion(a));
    }
    if x0.len() != model.d {
        return Err(SolveError::Dimension {
            expected: model.d,
            got: x0.len(),
        });
    }
    assert_eq!(interior.len(), n - 1);

    let d = model.d;
    let dt = t / n as f64;
    // Curvature floor keeps the Hessian finite when p < 2 and a rate
    // crosses zero mid-iteration.
    let rate_floor = 1e-9 * (1.0 + x0.amax() / t);

    let objective = |nodes: &[DVector<f64>]| -> f64 {
        let mut total = 0.0;
        let quad = |x: &DVector<f64>| 0.5 * a * model.variance_rate(x) - model.b.dot(x);
        for i in 0..n {
            let xl = if i == 0 { x0 } else { &nodes[i - 1] };
            let zero = DVector::zeros(d);
            let xr = if i == n - 1 { &zero } else { &nodes[i] };
            let v = (xr - xl) / dt; // equals -xi on this interval
            total += dt * (0.5 * (quad(xl) + quad(xr)) + impact.cost(&v));
        }
        total
    };

    let mut obj = objective(&interior);
    if !obj.is_finite() {
        return Err(SolveError::NonFinite);
    }
    let max_iter = 200;
    let tol = 1e-9;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        // Interval slopes v_i = (X_{i+1} - X_i)/dt (the argument of f).
        let zero = DVector::zeros(d);
        let mut slopes: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let xl = if i == 0 { x0 } else { &interior[i - 1] };
            let xr = if i == n - 1 { &zero } else { &interior[i] };
            slopes.push((xr - xl) / dt);
        }

        // Gradient per interior node.
        let mut grad: Vec<DVector<f64>> = Vec::with_capacity(n.saturating_sub(1));
        for j in 0..n - 1 {
            let xj = &interior[j];
            let mut g = (&model.covariance * xj) * (a * dt) - &model.b * dt;
            g += impact.grad(&slopes[j]);
            g -= impact.grad(&slopes[j + 1]);
            grad.push(g);
        }
        residual = grad
            .iter()
            .map(|g| g.amax())
            .fold(0.0f64, f64::max);
        if residual <= tol {
            break;
        }
        if n == 1 {
            break; // single forced step, nothing to optimize
        }

        // Newton step with Levenberg damping on Cholesky failure.
        let mut damping = 0.0;
        let step = loop {
            let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(n - 1);
            for j in 0..n - 1 {
                let mut h = &model.covariance * (a * dt);
                h += (impact.hessian(&slopes[j], rate_floor)
                    + impact.hessian(&slopes[j + 1], rate_floor))
                    / dt;
                h += DMatrix::identity(d, d) * damping;
                diag.push(h);
            }
            let lower: Vec<DMatrix<f64>> = (0..n - 2)
                .map(|j| impact.hessian(&slopes[j + 1], rate_floor) * (-1.0 / dt))
                .collect();
            let rhs: Vec<DVector<f64>> = grad.iter().map(|g| -g).collect();
            match solve_block_tridiag(diag, &lower, rhs) {
                Some(s) => break s,
                None => {
                    damping = if damping == 0.0 { 1e-10 } else { damping * 100.0 };
                    if damping > 1e6 {
                        return Err(SolveError::NonConvergence {
                            iterations,
                            residual,
                        });
                    }
                }
            }
        };

        // Backtracking line search on the strictly convex objective.
        let gdot: f64 = grad.iter().zip(&step).map(|(g, s)| g.dot(s)).sum();
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<DVector<f64>> = interior
                .iter()
                .zip(&step)
                .map(|(x, s)| x + s * alpha)
                .collect();
            let trial_obj = objective(&trial);
            if trial_obj.is_finite() && trial_obj <= obj + 1e-4 * alpha * gdot {
                interior = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Gradient direction cannot decrease a convex objective here
            // either; report the residual honestly.
            return Err(SolveError::NonConvergence {
                iterations,
                residual,
            });
        }
    }

    if residual > tol && n > 1 {
        return Err(SolveError::NonConvergence {
            iterations,
            residual,
        });
    }

    // Assemble the strategy from the node values.
    let grid: Vec<f64> = (0..=n).map(|i| t * i as f64 / n as f64).collect();
    let mut rates = Vec::with_capacity(n);
    let zero = DVector::zeros(d);
    for i in 0..n {
        let xl = if i == 0 { x0 } else { &interior[i - 1] };
        let xr = if i == n - 1 { &zero } else { &interior[i] };
        rates.push((xl - xr) / dt);
    }
    let strategy = StrategyPath::new(grid, rates, x0.clone())
        .expect("node-based construction closes the fuel constraint");
    let cost = cara_cost(a, model, impact, &strategy);
    let log_neg_value = a * (cost - r0);
    Ok(CaraSolution {
        strategy,
        cost,
        value: -log_neg_value.exp(),
        log_neg_value,
        iterations,
        residual,
    })
}

fn initial_interior(x0: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    (1..n)
        .map(|i| x0 * (1.0 - i as f64 / n as f64))
        .collect()
}

/// The two exponential benchmark values bracketing the general problem.
#[derive(Debug, Clone)]
pub struct CaraValuePair {
    pub a1: f64,
    pub a2: f64,
    pub cost1: f64,
    pub cost2: f64,
    /// `ln(exp-moment)` terms: `q_i = A_i (cost_i - R0)`.
    pub q1: f64,
    pub q2: f64,
    /// `V1 = 1/A1 - exp(q1)` (upper), `V2 = -exp(q2)` (lower).
    pub v1: f64,
    pub v2: f64,
}

/// Solves both envelope problems for the utility's cached ARA bounds.
pub fn cara_value_pair(
    utility: &Utility,
    model: &MarketModel,
    impact: &ImpactFunction,
    t: f64,
    x0: &DVector<f64>,
    r0: f64,
    n: usize,
) -> Result<CaraValuePair, SolveError> {
    let (a1, a2) = utility.ara();
    let s1 = solve_cara(a1, model, impact, t, x0, r0, n)?;
    let s2 = solve_cara(a2, model, impact, t, x0, r0, n)?;
    let q1 = a1 * (s1.cost - r0);
    let q2 = a2 * (s2.cost - r0);
    Ok(CaraValuePair {
        a1,
        a2,
        cost1: s1.cost,
        cost2: s2.cost,
        q1,
        q2,
        v1: 1.0 / a1 - q1.exp(),
        v2: -q2.exp(),
    })
}

/// Closed-form benchmark for `d = 1`, `b = 0`, quadratic impact:
/// optimal path `X0 sinh(kappa (T - t)) / sinh(kappa T)` with
/// `kappa = sigma sqrt(A / (2 lambda))` and cost
/// `lambda kappa X0^2 coth(kappa T)`.
pub fn quadratic_closed_form_cost(a: f64, sigma: f64, lambda: f64, t: f64, x0: f64) -> f64 {
    let kappa = sigma * (a / (2.0 * lambda)).sqrt();
    lambda * kappa * x0 * x0 * (kappa * t).cosh() / (kappa * t).sinh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sandwich_utilities;
    use crate::numerics::normal::inv_std_normal_cdf;
    use approx::assert_relative_eq;

    fn scalar_setup(b: f64, sigma: f64) -> (MarketModel, ImpactFunction) {
        (
            MarketModel::scalar(b, sigma, 4.0).unwrap(),
            ImpactFunction::quadratic(0.5).unwrap(),
        )
    }

    #[test]
    fn cost_of_doing_nothing_is_zero() {
        let (model, impact) = scalar_setup(0.0, 0.2);
        let strat = StrategyPath::new(
            vec![0.0, 0.5, 1.0],
            vec![DVector::zeros(1); 2],
            DVector::zeros(1),
        )
        .unwrap();
        assert_eq!(cara_cost(1.0, &model, &impact, &strat), 0.0);
    }

    #[test]
    fn linear_liquidation_cost_matches_exact_integral() {
        // (A sigma^2 / 2) X0^2 T/3 + lambda X0^2 / T with A=1, sigma=0.2,
        // lambda=0.5, X0=10, T=1: 2/3 + 50.
        let (model, impact) = scalar_setup(0.0, 0.2);
        let exact = 0.02 * 100.0 / 3.0 + 50.0;
        let n = 2000;
        let strat = StrategyPath::linear_liquidation(DVector::from_element(1, 10.0), 1.0, n);
        let got = cara_cost(1.0, &model, &impact, &strat);
        // Trapezoid error on the quadratic inventory term is O(1/n^2).
        assert_relative_eq!(got, exact, max_relative = 1e-6);
    }

    #[test]
    fn zero_risk_aversion_reduces_to_drift_and_impact() {
        let (model, impact) = scalar_setup(0.3, 0.2);
        let strat = StrategyPath::linear_liquidation(DVector::from_element(1, 4.0), 2.0, 8);
        let got = cara_cost(0.0, &model, &impact, &strat);
        // -b int X dt + int f dt = -0.3 * (4 * 2/2) + 0.5 * 4 * 2
        assert_relative_eq!(got, -0.3 * 4.0 + 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_inventory_without_drift_stays_at_rest() {
        let (model, impact) = scalar_setup(0.0, 0.3);
        let sol = solve_cara(1.0, &model, &impact, 1.0, &DVector::zeros(1), 2.0, 16).unwrap();
        assert!(sol.cost.abs() < 1e-18);
        for xi in sol.strategy.rates() {
            assert!(xi.amax() < 1e-12);
        }
        assert_relative_eq!(sol.value, -(-1.0f64 * 2.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn matches_hyperbolic_closed_form() {
        // d=1, b=0, quadratic impact: the Euler-Lagrange equation
        // 2 lambda X'' = A sigma^2 X has the sinh solution; its cost is the
        // independent oracle for the discretized solver.
        let (model, impact) = scalar_setup(0.0, 0.3);
        let x0 = DVector::from_element(1, 10.0);
        let exact = quadratic_closed_form_cost(1.0, 0.3, 0.5, 1.0, 10.0);
        let sol = solve_cara(1.0, &model, &impact, 1.0, &x0, 0.0, 512).unwrap();
        assert_relative_eq!(sol.cost, exact, max_relative = 1e-4);

        // Optimal path tracks the sinh profile.
        let kappa = 0.3 * (1.0f64 / 1.0).sqrt();
        for i in 0..=512 {
            let t = i as f64 / 512.0;
            let expect = 10.0 * (kappa * (1.0 - t)).sinh() / kappa.sinh();
            let got = sol.strategy.inventory_at(t)[0];
            assert!((got - expect).abs() < 2e-3, "at t={t}: {got} vs {expect}");
        }
    }

    #[test]
    fn drift_round_trip_profits_within_fenchel_bound() {
        // X0 = 0 with positive drift: the optimum is a nontrivial round trip
        // with negative cost, bounded below by -int_0^T f*(-bt) dt.
        let model = MarketModel::scalar(0.4, 0.1, 2.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let t = 2.0;
        let sol = solve_cara(0.5, &model, &impact, t, &DVector::zeros(1), 0.0, 64).unwrap();
        assert!(sol.cost < -1e-6, "drift must be exploitable, cost = {}", sol.cost);
        // int_0^T (bt)^2/(4 lambda) dt = b^2 T^3 / (12 lambda)
        let fenchel = 0.4f64.powi(2) * t.powi(3) / (12.0 * 0.5);
        assert!(sol.cost >= -fenchel - 1e-9, "{} vs {}", sol.cost, -fenchel);
    }

    #[test]
    fn minimizer_does_not_depend_on_initialization() {
        let (model, impact) = scalar_setup(0.1, 0.3);
        let x0 = DVector::from_element(1, 5.0);
        let n = 64;
        let mut s = 77u64;
        let mut rnd = move || {
            s = s.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        };
        let init_a: Vec<DVector<f64>> = (1..n)
            .map(|_| DVector::from_element(1, 10.0 * rnd() - 5.0))
            .collect();
        let init_b: Vec<DVector<f64>> = (1..n)
            .map(|_| DVector::from_element(1, 10.0 * rnd() - 5.0))
            .collect();
        let sa = solve_cara_from(1.0, &model, &impact, 1.0, &x0, 0.0, n, init_a).unwrap();
        let sb = solve_cara_from(1.0, &model, &impact, 1.0, &x0, 0.0, n, init_b).unwrap();
        let max_gap = sa
            .strategy
            .rates()
            .iter()
            .zip(sb.strategy.rates())
            .map(|(a, b)| (a - b).amax())
            .fold(0.0f64, f64::max);
        assert!(max_gap <= 1e-6, "strategies differ by {max_gap}");
    }

    #[test]
    fn refinement_is_monotone_with_first_order_gain() {
        let (model, impact) = scalar_setup(0.1, 0.3);
        let x0 = DVector::from_element(1, 10.0);
        let costs: Vec<f64> = [16usize, 32, 64, 128]
            .iter()
            .map(|&n| {
                solve_cara(1.0, &model, &impact, 1.0, &x0, 0.0, n)
                    .unwrap()
                    .cost
            })
            .collect();
        for w in costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{costs:?}");
        }
        let d1 = costs[0] - costs[1];
        let d2 = costs[1] - costs[2];
        let d3 = costs[2] - costs[3];
        assert!(d2 > 0.0 && d3 > 0.0);
        assert!(d1 / d2 >= 1.9 && d2 / d3 >= 1.9, "{costs:?}");
    }

    #[test]
    fn revenue_level_enters_only_through_the_prefactor() {
        let (model, impact) = scalar_setup(0.1, 0.3);
        let x0 = DVector::from_element(1, 3.0);
        let a = 0.8;
        let va = solve_cara(a, &model, &impact, 1.0, &x0, 1.5, 32).unwrap();
        let vb = solve_cara(a, &model, &impact, 1.0, &x0, -0.5, 32).unwrap();
        let expect = -(-a * (1.5 - (-0.5))).exp() * (-vb.value);
        assert_relative_eq!(va.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn nonnegative_cost_without_drift() {
        let (model, impact) = scalar_setup(0.0, 0.3);
        for &x0v in &[0.0, 0.5, 7.0] {
            let sol = solve_cara(
                1.2,
                &model,
                &impact,
                1.0,
                &DVector::from_element(1, x0v),
                0.0,
                32,
            )
            .unwrap();
            assert!(sol.cost >= -1e-15);
            if x0v == 0.0 {
                assert!(sol.cost.abs() < 1e-15);
            } else {
                assert!(sol.cost > 0.0);
            }
        }
    }

    #[test]
    fn gaussian_moment_identity_monte_carlo() {
        // The reduction from expected exponential utility to the quadratic
        // running cost rests on E[exp(-A sum_i X_i s dB_i)] =
        // exp(A^2/2 sum_i X_i^2 s^2 dt) for a fixed path; check it by
        // direct simulation.
        let a = 0.7;
        let sigma = 0.4;
        let steps = 32;
        let dt = 1.0 / steps as f64;
        let x_path: Vec<f64> = (0..steps)
            .map(|i| 10.0 * (1.0 - i as f64 / steps as f64))
            .collect();
        let exact_log: f64 =
            0.5 * a * a * sigma * sigma * x_path.iter().map(|x| x * x * dt).sum::<f64>();

        let n_paths = 40_000;
        let mut state = 12345u64;
        let mut rnd = move || {
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            (((z ^ (z >> 31)) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        };
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n_paths {
            let mut expo = 0.0;
            for x in &x_path {
                let z = inv_std_normal_cdf(rnd());
                expo += -a * x * sigma * dt.sqrt() * z;
            }
            let v = expo.exp();
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n_paths as f64;
        let var = (sumsq / n_paths as f64 - mean * mean).max(0.0);
        let stderr = (var / n_paths as f64).sqrt();
        let expect = exact_log.exp();
        assert!(
            (mean - expect).abs() <= 3.0 * stderr + 1e-12,
            "mean {mean} vs {expect} (stderr {stderr})"
        );
    }

    #[test]
    fn value_pair_trivial_and_ordering() {
        let (model, impact) = scalar_setup(0.0, 0.3);
        let u = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
        // X0 = 0, b = 0: zero cost, so the pair equals the envelopes at R0.
        let pair =
            cara_value_pair(&u, &model, &impact, 1.0, &DVector::zeros(1), 0.7, 16).unwrap();
        let s = sandwich_utilities(0.5, 2.0);
        assert_relative_eq!(pair.v1, s.u1(0.7), epsilon = 1e-12);
        assert_relative_eq!(pair.v2, s.u2(0.7), epsilon = 1e-12);
        assert!(pair.v1 >= pair.v2);

        // A1 = A2 = A: identical optimizations up to the vertical shift.
        let uc = Utility::cara(1.1).unwrap();
        let x0 = DVector::from_element(1, 2.0);
        let p = cara_value_pair(&uc, &model, &impact, 1.0, &x0, 0.0, 64).unwrap();
        assert_relative_eq!(p.v1 - 1.0 / 1.1, p.v2, max_relative = 1e-10);

        // Quadratic closed form drives both envelope values.
        let um = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
        let x0 = DVector::from_element(1, 10.0);
        let p = cara_value_pair(&um, &model, &impact, 1.0, &x0, 0.0, 512).unwrap();
        for (a, cost) in [(0.5, p.cost1), (2.0, p.cost2)] {
            let exact = quadratic_closed_form_cost(a, 0.3, 0.5, 1.0, 10.0);
            assert_relative_eq!(cost, exact, max_relative = 1e-4);
        }
    }
}
