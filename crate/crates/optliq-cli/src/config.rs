//! Scenario configuration document and its translation into solver types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use optliq::dp::{Axis, SolverGrid};
use optliq::mc::SimConfig;
use optliq::model::{ImpactFunction, MarketModel, Utility};

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("configuration parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.to_string(),
    }
}

/// Top-level configuration document. Unknown keys are rejected so typos
/// surface as errors with the offending field named.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelBlock,
    pub impact: ImpactBlock,
    pub utility: UtilityBlock,
    #[serde(default)]
    pub grid: GridBlock,
    pub sim: SimBlock,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub d: usize,
    pub m: usize,
    /// Volatility rows, d rows of m entries.
    pub sigma: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Liquidation horizon.
    pub t: f64,
    /// Initial inventory, one entry per asset.
    pub x0: Vec<f64>,
    /// Initial revenue level (face value).
    pub r0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ImpactBlock {
    PowerLaw { lambda: f64, p: f64 },
    Quadratic { lambda: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum UtilityBlock {
    Cara { a: f64 },
    ExpMixture { weights: Vec<f64>, rates: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Dyadic level: 2^level time steps (default 7).
    pub level: Option<u32>,
    /// Per-asset inventory bounds; derived from x0 when omitted.
    pub x_box: Option<Vec<[f64; 2]>>,
    /// Inventory node spacing; derived from xi_max when omitted.
    pub x_spacing: Option<f64>,
    /// Revenue truncation radius (default 16).
    pub r_radius: Option<f64>,
    /// Control magnitudes per axis direction (default 12).
    pub j_controls: Option<usize>,
    /// Gauss-Hermite nodes per step (default 7).
    pub quad_order: Option<usize>,
    /// Largest control magnitude; default 4 |x0|_inf / T.
    pub xi_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

/// Fully constructed scenario: model, impact, utility, grid, start state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: MarketModel,
    pub impact: ImpactFunction,
    pub utility: Utility,
    pub grid: SolverGrid,
    pub x0: DVector<f64>,
    pub r0: f64,
    pub sim: SimConfig,
    pub output_dir: String,
}

impl ScenarioConfig {
    pub fn from_path(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds the solver types, attributing every rejection to its field.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let mb = &self.model;
        if mb.sigma.len() != mb.d || mb.sigma.iter().any(|row| row.len() != mb.m) {
            return Err(invalid(
                "model.sigma",
                format!("expected {} rows of {} entries", mb.d, mb.m),
            ));
        }
        if mb.b.len() != mb.d {
            return Err(invalid("model.b", format!("expected {} entries", mb.d)));
        }
        if mb.x0.len() != mb.d {
            return Err(invalid("model.x0", format!("expected {} entries", mb.d)));
        }
        if !(mb.t > 0.0) {
            return Err(invalid("model.t", "horizon must be positive"));
        }
        let sigma = DMatrix::from_fn(mb.d, mb.m, |i, j| mb.sigma[i][j]);
        let b = DVector::from_vec(mb.b.clone());
        let model = MarketModel::new(b, sigma, mb.t)
            .map_err(|e| invalid("model", e.to_string()))?;

        let impact = match self.impact {
            ImpactBlock::PowerLaw { lambda, p } => ImpactFunction::power_law(lambda, p)
                .map_err(|e| invalid("impact", e.to_string()))?,
            ImpactBlock::Quadratic { lambda } => {
                ImpactFunction::quadratic(lambda).map_err(|e| invalid("impact", e.to_string()))?
            }
        };

        let utility = match &self.utility {
            UtilityBlock::Cara { a } => {
                Utility::cara(*a).map_err(|e| invalid("utility.a", e.to_string()))?
            }
            UtilityBlock::ExpMixture { weights, rates } => Utility::exp_mixture(weights, rates)
                .map_err(|e| invalid("utility", e.to_string()))?,
        };

        let x0 = DVector::from_vec(mb.x0.clone());
        let grid = self.build_grid(&x0, mb.t)?;

        if self.sim.n_paths < 2 || self.sim.steps == 0 {
            return Err(invalid("sim", "need n_paths >= 2 and steps >= 1"));
        }
        let sim = SimConfig {
            n_paths: self.sim.n_paths,
            steps: self.sim.steps,
            seed: self.sim.seed,
            antithetic: self.sim.antithetic,
        };

        // The start state must be resolvable on the grid.
        for (k, ax) in grid.x_axes.iter().enumerate() {
            if ax.index_of(x0[k]).is_none() {
                return Err(invalid(
                    "model.x0",
                    format!(
                        "component {k} = {} is not a node of the inventory axis (spacing {})",
                        x0[k], ax.step
                    ),
                ));
            }
        }
        if grid.r_axis().index_of(mb.r0).is_none() {
            return Err(invalid(
                "model.r0",
                format!(
                    "{} is not a node of the revenue axis (spacing {})",
                    mb.r0,
                    grid.r_axis().step
                ),
            ));
        }

        Ok(Scenario {
            model,
            impact,
            utility,
            grid,
            x0,
            r0: mb.r0,
            sim,
            output_dir: self.output_dir.clone(),
        })
    }

    fn build_grid(&self, x0: &DVector<f64>, t: f64) -> Result<SolverGrid, ConfigError> {
        let g = &self.grid;
        let level = g.level.unwrap_or(7);
        let xi_max = g.xi_max.unwrap_or_else(|| 4.0 * x0.amax() / t);
        if !(xi_max > 0.0) {
            return Err(invalid("grid.xi_max", "must be positive"));
        }
        // Spacing rule calibrated against the exponential benchmark: about
        // eight nodes per largest one-step displacement at level 7.
        let spacing = g.x_spacing.unwrap_or(xi_max * t / 1024.0);
        if !(spacing > 0.0) {
            return Err(invalid("grid.x_spacing", "must be positive"));
        }
        let boxes: Vec<[f64; 2]> = match &g.x_box {
            Some(b) => {
                if b.len() != x0.len() {
                    return Err(invalid(
                        "grid.x_box",
                        format!("expected {} per-asset bounds", x0.len()),
                    ));
                }
                b.clone()
            }
            None => x0
                .iter()
                .map(|&v| {
                    let lo = v.min(0.0);
                    let hi = v.max(0.0);
                    let pad = 0.05 * (hi - lo).max(1.0);
                    [lo - pad, hi + pad]
                })
                .collect(),
        };
        let axes: Result<Vec<Axis>, ConfigError> = boxes
            .iter()
            .enumerate()
            .map(|(k, bounds)| {
                Axis::spanning(bounds[0], bounds[1], spacing)
                    .map_err(|e| invalid(&format!("grid.x_box[{k}]"), e))
            })
            .collect();
        SolverGrid::new(
            level,
            t,
            axes?,
            g.r_radius.unwrap_or(16.0),
            g.j_controls.unwrap_or(12),
            xi_max,
            2.0,
            g.quad_order.unwrap_or(7),
        )
        .map_err(|e| invalid("grid", e.to_string()))
    }
}

/// Maps a failed model invariant to the configuration field that drives it.
pub fn invariant_field(name: &str) -> &'static str {
    match name {
        "covariance_psd" => "model.sigma",
        "drift_in_covariance_range" => "model.b",
        _ => "model",
    }
}
