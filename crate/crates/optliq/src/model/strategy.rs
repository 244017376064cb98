//! Piecewise-constant trading-rate paths and the realized revenues of a
//! discretized path.

use nalgebra::DVector;
use thiserror::Error;

use super::{ImpactFunction, MarketModel, ModelError};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StrategyError {
    #[error("time grid must start at 0 and strictly increase")]
    BadTimeGrid,
    #[error("need one rate vector per interval: {intervals} intervals, {rates} rates")]
    RateCount { intervals: usize, rates: usize },
    #[error("rate dimension {got} does not match inventory dimension {expected}")]
    RateDimension { expected: usize, got: usize },
    #[error("terminal inventory residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    FuelViolation { residual: f64, tol: f64 },
    #[error("non-finite rate entry")]
    NonFinite,
}

/// Deterministic liquidation path: piecewise-constant rates `xi_i` on a
/// strictly increasing time grid, with inventory forced to zero at the end.
///
/// The induced inventory `X(t)` is continuous and piecewise linear with
/// `X(t_{i+1}) = X(t_i) - xi_i (t_{i+1} - t_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPath {
    t_grid: Vec<f64>,
    rates: Vec<DVector<f64>>,
    x0: DVector<f64>,
    /// Inventory at each grid node (cached at construction).
    x_nodes: Vec<DVector<f64>>,
}

impl StrategyPath {
    pub fn new(
        t_grid: Vec<f64>,
        rates: Vec<DVector<f64>>,
        x0: DVector<f64>,
    ) -> Result<Self, StrategyError> {
        if t_grid.len() < 2 || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(StrategyError::BadTimeGrid);
        }
        if rates.len() + 1 != t_grid.len() {
            return Err(StrategyError::RateCount {
                intervals: t_grid.len() - 1,
                rates: rates.len(),
            });
        }
        let d = x0.len();
        for xi in &rates {
            if xi.len() != d {
                return Err(StrategyError::RateDimension {
                    expected: d,
                    got: xi.len(),
                });
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(StrategyError::NonFinite);
            }
        }
        let mut x_nodes = Vec::with_capacity(t_grid.len());
        let mut x = x0.clone();
        x_nodes.push(x.clone());
        for (i, xi) in rates.iter().enumerate() {
            let dt = t_grid[i + 1] - t_grid[i];
            x -= xi * dt;
            x_nodes.push(x.clone());
        }
        let residual = x_nodes.last().unwrap().amax();
        // Relative to the inventory scale, with an absolute floor so that
        // round trips starting from zero are admitted.
        let tol = 1e-12 * (1.0 + x0.amax());
        if residual > tol {
            return Err(StrategyError::FuelViolation { residual, tol });
        }
        Ok(Self {
            t_grid,
            rates,
            x0,
            x_nodes,
        })
    }

    /// Uniform-grid constant-rate liquidation `xi = X0 / T`.
    pub fn linear_liquidation(x0: DVector<f64>, t: f64, n: usize) -> Self {
        assert!(n >= 1 && t > 0.0);
        let grid: Vec<f64> = (0..=n).map(|i| t * i as f64 / n as f64).collect();
        let rate = &x0 / t;
        Self::new(grid, vec![rate; n], x0).expect("linear liquidation is always feasible")
    }

    pub fn n_steps(&self) -> usize {
        self.rates.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.t_grid.last().unwrap()
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn rates(&self) -> &[DVector<f64>] {
        &self.rates
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.t_grid[i + 1] - self.t_grid[i]
    }

    /// Inventory at grid node `i`.
    pub fn x_node(&self, i: usize) -> &DVector<f64> {
        &self.x_nodes[i]
    }

    /// Inventory at an arbitrary time (piecewise linear, clamped to the grid).
    pub fn inventory_at(&self, t: f64) -> DVector<f64> {
        if t <= 0.0 {
            return self.x0.clone();
        }
        if t >= self.horizon() {
            return self.x_nodes.last().unwrap().clone();
        }
        let i = match self
            .t_grid
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(k) => return self.x_nodes[k].clone(),
            Err(k) => k - 1,
        };
        let frac = t - self.t_grid[i];
        &self.x_nodes[i] - &self.rates[i] * frac
    }

    /// Piecewise-constant rate at time `t` (right-continuous lookup).
    pub fn rate_at(&self, t: f64) -> &DVector<f64> {
        if t <= 0.0 {
            return &self.rates[0];
        }
        if t >= self.horizon() {
            return self.rates.last().unwrap();
        }
        let i = match self
            .t_grid
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(k) => k.min(self.rates.len() - 1),
            Err(k) => k - 1,
        };
        &self.rates[i]
    }

    /// Running impact budget `int f(-xi) dt`, exact for piecewise-constant rates.
    pub fn impact_budget(&self, impact: &ImpactFunction) -> f64 {
        self.rates
            .iter()
            .enumerate()
            .map(|(i, xi)| impact.cost(&(-xi)) * self.dt(i))
            .sum()
    }
}

/// Realized terminal revenue of a path against one noise realization:
///
/// ```text
/// R0 + sum_i X_i^T sigma dB_i + sum_i b . Xbar_i dt_i - sum_i f(-xi_i) dt_i
/// ```
///
/// The stochastic term uses the left endpoint `X_i` (Ito convention); the
/// drift term uses the interval midpoint `Xbar_i = (X_i + X_{i+1})/2`, which
/// integrates the piecewise-linear inventory exactly.
pub fn revenues(
    model: &MarketModel,
    impact: &ImpactFunction,
    strategy: &StrategyPath,
    r0: f64,
    noise: &[DVector<f64>],
) -> Result<f64, ModelError> {
    let n = strategy.n_steps();
    if noise.len() != n || noise.iter().any(|db| db.len() != model.m) {
        return Err(ModelError::NoiseShape {
            expected: n,
            dim: model.m,
            got: noise.len(),
        });
    }
    if !r0.is_finite() || noise.iter().any(|db| db.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::NonFinite("revenues input"));
    }
    let mut r = r0;
    for i in 0..n {
        let dt = strategy.dt(i);
        let x_left = strategy.x_node(i);
        let x_mid = (x_left + strategy.x_node(i + 1)) * 0.5;
        r += (x_left.transpose() * &model.sigma * &noise[i])[(0, 0)];
        r += model.b.dot(&x_mid) * dt;
        r -= impact.cost(&(-&strategy.rates()[i])) * dt;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn fuel_constraint_is_enforced() {
        let grid = vec![0.0, 0.5, 1.0];
        let bad = StrategyPath::new(
            grid.clone(),
            vec![DVector::from_element(1, 1.0); 2],
            DVector::from_element(1, 10.0),
        );
        assert!(matches!(bad, Err(StrategyError::FuelViolation { .. })));
        let good = StrategyPath::new(
            grid,
            vec![DVector::from_element(1, 10.0); 2],
            DVector::from_element(1, 10.0),
        );
        assert!(good.is_ok());
    }

    #[test]
    fn empty_round_trip_returns_r0_for_any_noise() {
        let model = MarketModel::scalar(0.3, 0.7, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let strat = StrategyPath::new(
            (0..=8).map(|i| i as f64 / 8.0).collect(),
            vec![DVector::zeros(1); 8],
            DVector::zeros(1),
        )
        .unwrap();
        let mut s = 5u64;
        for _ in 0..50 {
            let noise: Vec<DVector<f64>> = (0..8)
                .map(|_| DVector::from_element(1, splitmix(&mut s) - 0.5))
                .collect();
            let r = revenues(&model, &impact, &strat, 3.25, &noise).unwrap();
            assert_eq!(r, 3.25);
        }
    }

    #[test]
    fn linear_liquidation_zero_noise_matches_hand_value() {
        // d=1, X0=10, T=1, xi = 10, b=0.2, f = 0.5 x^2, zero noise:
        // R0 + 0.2 * 10 * 1/2 - 0.5 * 100 * 1 = R0 - 49.
        let model = MarketModel::scalar(0.2, 0.3, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        for n in [1usize, 4, 64] {
            let strat =
                StrategyPath::linear_liquidation(DVector::from_element(1, 10.0), 1.0, n);
            let noise = vec![DVector::zeros(1); n];
            let r = revenues(&model, &impact, &strat, 2.0, &noise).unwrap();
            assert_relative_eq!(r, 2.0 - 49.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_step_stochastic_term_is_additive() {
        // X0=1, one step, sigma=1, dB=0.5: the stochastic term contributes 0.5.
        let model = MarketModel::scalar(0.0, 1.0, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let strat = StrategyPath::linear_liquidation(DVector::from_element(1, 1.0), 1.0, 1);
        let base = revenues(&model, &impact, &strat, 0.0, &[DVector::zeros(1)]).unwrap();
        let with_noise =
            revenues(&model, &impact, &strat, 0.0, &[DVector::from_element(1, 0.5)]).unwrap();
        assert_relative_eq!(with_noise - base, 1.0 * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn noise_length_mismatch_is_an_error() {
        let model = MarketModel::scalar(0.0, 1.0, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let strat = StrategyPath::linear_liquidation(DVector::from_element(1, 1.0), 1.0, 4);
        let r = revenues(&model, &impact, &strat, 0.0, &vec![DVector::zeros(1); 3]);
        assert!(matches!(r, Err(ModelError::NoiseShape { .. })));
    }

    #[test]
    fn revenues_concave_in_rates_for_fixed_noise() {
        let model = MarketModel::scalar(0.15, 0.4, 1.0).unwrap();
        let impact = ImpactFunction::power_law(0.5, 1.7).unwrap();
        let n = 6;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mut s = 29u64;
        for _ in 0..100 {
            // Two random round trips from the same inventory, fuel-closed on
            // the last step.
            let mk = |seed: &mut u64| {
                let mut rates: Vec<f64> = (0..n).map(|_| 4.0 * splitmix(seed) - 2.0).collect();
                let partial: f64 = rates[..n - 1].iter().sum::<f64>() / n as f64;
                rates[n - 1] = (1.0 - partial) * n as f64; // X0 = 1
                rates
            };
            let ra = mk(&mut s);
            let rb = mk(&mut s);
            let lam = splitmix(&mut s);
            let noise: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_element(1, 0.3 * (splitmix(&mut s) - 0.5)))
                .collect();
            let x0 = DVector::from_element(1, 1.0);
            let to_path = |r: &[f64]| {
                StrategyPath::new(
                    grid.clone(),
                    r.iter().map(|&v| DVector::from_element(1, v)).collect(),
                    x0.clone(),
                )
                .unwrap()
            };
            let mix: Vec<f64> = ra
                .iter()
                .zip(&rb)
                .map(|(&a, &b)| lam * a + (1.0 - lam) * b)
                .collect();
            let va = revenues(&model, &impact, &to_path(&ra), 0.0, &noise).unwrap();
            let vb = revenues(&model, &impact, &to_path(&rb), 0.0, &noise).unwrap();
            let vm = revenues(&model, &impact, &to_path(&mix), 0.0, &noise).unwrap();
            assert!(vm >= lam * va + (1.0 - lam) * vb - 1e-10);
        }
    }
}
