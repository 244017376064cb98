//! Path simulation of the controlled inventory/revenue system.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::dp::{FeedbackPolicy, PolicyError};
use crate::model::{ImpactFunction, MarketModel, StrategyPath};

use super::rng;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    #[error("need at least 2 paths and 1 step, got {n_paths} paths, {steps} steps")]
    Config { n_paths: usize, steps: usize },
    #[error("inventory dimension {got} does not match the model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("non-finite utility value at path {path} (terminal revenue {revenue})")]
    NonFiniteUtility { path: usize, revenue: f64 },
    #[error("empty sample set")]
    Empty,
}

/// Simulation configuration. The seed fully determines every Gaussian
/// increment; with `antithetic` set, odd paths negate the draws of the
/// preceding even path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_paths < 2 || self.steps == 0 {
            return Err(SimError::Config {
                n_paths: self.n_paths,
                steps: self.steps,
            });
        }
        Ok(())
    }
}

/// Control source for the simulation.
#[derive(Clone, Copy)]
pub enum ControlLaw<'a> {
    Feedback(&'a FeedbackPolicy<'a>),
    Deterministic(&'a StrategyPath),
}

impl<'a> ControlLaw<'a> {
    pub fn horizon(&self) -> f64 {
        match self {
            ControlLaw::Feedback(p) => p.surface().grid.horizon,
            ControlLaw::Deterministic(s) => s.horizon(),
        }
    }
}

/// Integrals of one path over a requested step window `[i1, i2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowIntegrals {
    /// `int (b . X - f(-xi)) dt` over the window (midpoint drift rule).
    pub drift_minus_cost: f64,
    /// `int f(-xi) dt` over the window.
    pub cost: f64,
    /// `b . (t1 X(t1) - t2 X(t2))`.
    pub boundary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub terminal_revenue: f64,
    /// Realized impact budget `int f(-xi) dt`.
    pub budget: f64,
    /// `max_k |X_T^k|`.
    pub fuel_residual: f64,
    pub windows: Vec<WindowIntegrals>,
}

/// Samples plus the configuration that produced them. Aggregation helpers
/// reduce in path order so results do not depend on the thread count.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub config: SimConfig,
    pub horizon: f64,
    pub samples: Vec<PathSample>,
    /// Step-index windows `[i1, i2)` whose integrals were recorded.
    pub windows: Vec<(usize, usize)>,
}

impl SimResult {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn max_fuel_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.fuel_residual)
            .fold(0.0, f64::max)
    }

    pub fn mean_budget(&self) -> (f64, f64) {
        self.mean_stderr_of(|s| s.budget)
    }

    /// Mean and standard error of a per-path statistic. Under antithetic
    /// sampling consecutive paths are dependent, so the independent units
    /// are the pair averages.
    pub fn mean_stderr_of(&self, f: impl Fn(&PathSample) -> f64) -> (f64, f64) {
        if self.config.antithetic && self.samples.len() >= 4 {
            let pairs = self.samples.chunks_exact(2);
            mean_and_stderr(pairs.map(|p| 0.5 * (f(&p[0]) + f(&p[1]))))
        } else {
            mean_and_stderr(self.samples.iter().map(f))
        }
    }

    /// Sample mean of `exp(-a R_T)`.
    pub fn exp_moment(&self, a: f64) -> f64 {
        let sum: f64 = self
            .samples
            .iter()
            .map(|s| (-a * s.terminal_revenue).exp())
            .sum();
        sum / self.n() as f64
    }
}

pub(crate) fn mean_and_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let vals: Vec<f64> = values.collect();
    let n = vals.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n as f64 * (n - 1) as f64)).sqrt())
}

/// Simulates `config.n_paths` paths of the controlled system under the law,
/// recording terminal revenue, impact budget, terminal inventory residual,
/// and optional window integrals.
///
/// The revenue update matches the discrete revenues functional: stochastic
/// term at the left endpoint, drift at the interval midpoint, so a zero-noise
/// run reproduces the deterministic arithmetic exactly.
pub fn simulate(
    model: &MarketModel,
    impact: &ImpactFunction,
    law: ControlLaw<'_>,
    x0: &DVector<f64>,
    r0: f64,
    config: SimConfig,
    windows: &[(usize, usize)],
) -> Result<SimResult, SimError> {
    config.validate()?;
    if x0.len() != model.d {
        return Err(SimError::Dimension {
            expected: model.d,
            got: x0.len(),
        });
    }
    let horizon = law.horizon();
    let steps = config.steps;
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();

    let run_path = |p: usize| -> Result<PathSample, SimError> {
        let (draw_path, sign) = if config.antithetic {
            ((p / 2) as u64, if p % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (p as u64, 1.0)
        };
        let mut x = x0.clone();
        let mut r = r0;
        let mut budget = 0.0;
        let mut acc = vec![WindowIntegrals::default(); windows.len()];
        for i in 0..steps {
            let t = i as f64 * dt;
            // Window boundary terms use the inventory entering the step.
            for (w, &(i1, i2)) in acc.iter_mut().zip(windows) {
                if i == i1 {
                    w.boundary += model.b.dot(&x) * (i1 as f64 * dt);
                }
                if i == i2 {
                    w.boundary -= model.b.dot(&x) * (i2 as f64 * dt);
                }
            }
            let t_rem = horizon - t;
            let xi = match law {
                ControlLaw::Feedback(policy) => policy.rate(t_rem, &x, r)?,
                ControlLaw::Deterministic(strategy) => strategy.rate_at(t + 0.5 * dt).clone(),
            };
            let mut stoch = 0.0;
            for k in 0..model.m {
                let z = sign * rng::normal(config.seed, draw_path, i as u64, k as u64);
                let db = sqrt_dt * z;
                // X^T sigma dB, left endpoint.
                for a in 0..model.d {
                    stoch += x[a] * model.sigma[(a, k)] * db;
                }
            }
            let xbar = &x - &xi * (0.5 * dt);
            let drift = model.b.dot(&xbar) * dt;
            let cost_rate = impact.cost(&(-&xi));
            r += stoch + drift - cost_rate * dt;
            budget += cost_rate * dt;
            for (w, &(i1, i2)) in acc.iter_mut().zip(windows) {
                if i >= i1 && i < i2 {
                    w.drift_minus_cost += drift - cost_rate * dt;
                    w.cost += cost_rate * dt;
                }
            }
            x -= xi * dt;
        }
        for (w, &(_, i2)) in acc.iter_mut().zip(windows) {
            if i2 == steps {
                w.boundary -= model.b.dot(&x) * horizon;
            }
        }
        Ok(PathSample {
            terminal_revenue: r,
            budget,
            fuel_residual: x.amax(),
            windows: acc,
        })
    };

    let samples: Result<Vec<PathSample>, SimError> =
        (0..config.n_paths).into_par_iter().map(run_path).collect();
    Ok(SimResult {
        config,
        horizon,
        samples: samples?,
        windows: windows.to_vec(),
    })
}
