//! Reproducible Monte Carlo simulation of the controlled system and the
//! estimators built on it.

pub mod estimate;
pub mod rng;
pub mod sim;

pub use estimate::{
    budget_check, budget_threshold_constant, estimate_value, moment_check, BudgetCheck,
    MomentCheck, ValueEstimate,
};
pub use sim::{
    simulate, ControlLaw, PathSample, SimConfig, SimError, SimResult, WindowIntegrals,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cara::{cara_cost, solve_cara};
    use crate::model::{ImpactFunction, MarketModel, StrategyPath, Utility};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn config(n_paths: usize, steps: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_paths,
            steps,
            seed,
            antithetic: false,
        }
    }

    #[test]
    fn resting_round_trip_is_noiseless() {
        let model = MarketModel::scalar(0.2, 0.5, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let strat = StrategyPath::new(
            vec![0.0, 0.5, 1.0],
            vec![DVector::zeros(1); 2],
            DVector::zeros(1),
        )
        .unwrap();
        let res = simulate(
            &model,
            &impact,
            ControlLaw::Deterministic(&strat),
            &DVector::zeros(1),
            1.25,
            config(64, 16, 3),
            &[],
        )
        .unwrap();
        for s in &res.samples {
            assert_eq!(s.terminal_revenue, 1.25);
            assert_eq!(s.budget, 0.0);
        }
    }

    #[test]
    fn zero_volatility_reduces_to_deterministic_arithmetic() {
        let model = MarketModel::scalar(0.2, 0.0, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let x0 = DVector::from_element(1, 10.0);
        let strat = StrategyPath::linear_liquidation(x0.clone(), 1.0, 32);
        let res = simulate(
            &model,
            &impact,
            ControlLaw::Deterministic(&strat),
            &x0,
            0.0,
            config(4, 32, 7),
            &[],
        )
        .unwrap();
        // R_T = R0 - int(-b X + f) dt = -cost at zero risk aversion, with
        // the same midpoint quadrature on the same grid.
        let expect = -cara_cost(0.0, &model, &impact, &strat);
        for s in &res.samples {
            assert_relative_eq!(s.terminal_revenue, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical_across_thread_counts() {
        let model = MarketModel::scalar(0.1, 0.3, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let x0 = DVector::from_element(1, 5.0);
        let strat = StrategyPath::linear_liquidation(x0.clone(), 1.0, 16);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                simulate(
                    &model,
                    &impact,
                    ControlLaw::Deterministic(&strat),
                    &x0,
                    0.0,
                    config(512, 16, 42),
                    &[(2, 9)],
                )
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
    }

    #[test]
    fn mean_utility_matches_variational_benchmark() {
        let model = MarketModel::scalar(0.0, 0.3, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let u = Utility::cara(1.0).unwrap();
        let x0 = DVector::from_element(1, 4.0);
        let bench = solve_cara(1.0, &model, &impact, 1.0, &x0, 0.0, 64).unwrap();
        let res = simulate(
            &model,
            &impact,
            ControlLaw::Deterministic(&bench.strategy),
            &x0,
            0.0,
            config(60_000, 64, 2024),
            &[],
        )
        .unwrap();
        let est = estimate_value(&res, &u).unwrap();
        assert!(
            (est.mean - bench.value).abs() <= 3.0 * est.stderr,
            "{} vs {} (stderr {})",
            est.mean,
            bench.value,
            est.stderr
        );
    }

    #[test]
    fn antithetic_does_not_hurt_linear_estimators() {
        let model = MarketModel::scalar(0.1, 0.4, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let x0 = DVector::from_element(1, 5.0);
        let strat = StrategyPath::linear_liquidation(x0.clone(), 1.0, 16);
        let run = |antithetic: bool| {
            let cfg = SimConfig {
                n_paths: 4096,
                steps: 16,
                seed: 5,
                antithetic,
            };
            simulate(
                &model,
                &impact,
                ControlLaw::Deterministic(&strat),
                &x0,
                0.0,
                cfg,
                &[],
            )
            .unwrap()
        };
        let plain = run(false);
        let anti = run(true);
        let stderr_of = |res: &SimResult| res.mean_stderr_of(|s| s.terminal_revenue).1;
        // Terminal revenue is linear in the noise for a deterministic
        // strategy, so pairing cancels it outright.
        assert!(stderr_of(&anti) <= stderr_of(&plain));
        assert!(stderr_of(&anti) < 1e-10 * stderr_of(&plain).max(1.0));
    }

    #[test]
    fn window_integrals_match_direct_quadrature() {
        let model = MarketModel::scalar(0.2, 0.3, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let x0 = DVector::from_element(1, 6.0);
        let strat = StrategyPath::linear_liquidation(x0.clone(), 1.0, 16);
        let res = simulate(
            &model,
            &impact,
            ControlLaw::Deterministic(&strat),
            &x0,
            0.0,
            config(2, 16, 1),
            &[(4, 12), (0, 16)],
        )
        .unwrap();
        let dt = 1.0 / 16.0;
        let s = &res.samples[0];
        // Direct midpoint-rule evaluation over the window.
        let mut expect_dc = 0.0;
        let mut expect_cost = 0.0;
        for i in 4..12 {
            let t = i as f64 * dt;
            let xbar = 6.0 * (1.0 - (t + 0.5 * dt));
            expect_dc += 0.2 * xbar * dt - 0.5 * 36.0 * dt;
            expect_cost += 0.5 * 36.0 * dt;
        }
        assert_relative_eq!(s.windows[0].drift_minus_cost, expect_dc, epsilon = 1e-12);
        assert_relative_eq!(s.windows[0].cost, expect_cost, epsilon = 1e-12);
        // Boundary term: b (t1 X(t1) - t2 X(t2)).
        let x_at = |t: f64| 6.0 * (1.0 - t);
        let expect_boundary = 0.2 * (0.25 * x_at(0.25) - 0.75 * x_at(0.75));
        assert_relative_eq!(s.windows[0].boundary, expect_boundary, epsilon = 1e-12);
        // Full-horizon window: boundary vanishes by the fuel constraint.
        assert!(s.windows[1].boundary.abs() < 1e-12);
    }
}
