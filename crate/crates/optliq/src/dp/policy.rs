//! Feedback policy extracted from a solved value surface.

use nalgebra::DVector;
use thiserror::Error;

use super::surface::{ValueSurface, POLICY_INFEASIBLE};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy lookup outside the surface domain at x = {x:?}, r = {r}, t_remaining = {t_remaining}")]
    OutOfDomain {
        x: Vec<f64>,
        r: f64,
        t_remaining: f64,
    },
}

/// State-feedback rate lookup: nearest time layer, multilinear blend of the
/// stored argmax rates over the surrounding `(x, r)` nodes, with a forced
/// proportional liquidation `xi = x / t_remaining` whenever reachability
/// would otherwise fail (no remaining layer, rate bound exceeded, or every
/// stencil corner infeasible).
#[derive(Debug, Clone)]
pub struct FeedbackPolicy<'a> {
    surface: &'a ValueSurface,
    controls: Vec<DVector<f64>>,
}

/// Builds the lookup table companion of a solved surface.
pub fn extract_policy(surface: &ValueSurface) -> FeedbackPolicy<'_> {
    FeedbackPolicy {
        surface,
        controls: surface.grid.base_controls(),
    }
}

impl<'a> FeedbackPolicy<'a> {
    pub fn surface(&self) -> &ValueSurface {
        self.surface
    }

    fn corner_rate(&self, layer: usize, x_flat: usize, ir: usize) -> Option<DVector<f64>> {
        let code = self.surface.policy_at(layer, x_flat, ir);
        if code == POLICY_INFEASIBLE {
            return None;
        }
        let idx = code as usize;
        if idx < self.controls.len() {
            Some(self.controls[idx].clone())
        } else {
            // Proportional candidate, evaluated at the corner's inventory.
            let t_rem = layer as f64 * self.surface.grid.dt();
            Some(self.surface.grid.x_node(x_flat) / t_rem)
        }
    }

    /// Trading rate for the state `(t_remaining, x, r)`.
    pub fn rate(
        &self,
        t_remaining: f64,
        x: &DVector<f64>,
        r: f64,
    ) -> Result<DVector<f64>, PolicyError> {
        let grid = &self.surface.grid;
        let d = grid.d();
        let proportional = |t: f64| x / t.max(f64::MIN_POSITIVE);
        if t_remaining <= 0.0 {
            return Ok(DVector::zeros(d));
        }
        let mut cell = [0usize; 4];
        let mut frac = [0.0f64; 4];
        for k in 0..d {
            let Some((i, f)) = grid.x_axes[k].locate(x[k]) else {
                return Err(PolicyError::OutOfDomain {
                    x: x.iter().cloned().collect(),
                    r,
                    t_remaining,
                });
            };
            cell[k] = i;
            frac[k] = f;
        }
        // Reachability override: the bounded control set cannot close the
        // position in the time left.
        if x.amax() / t_remaining > grid.xi_max {
            return Ok(proportional(t_remaining));
        }
        let dt = grid.dt();
        let layer = ((t_remaining / dt).round() as usize).clamp(1, grid.n_steps());
        if layer == 1 {
            // Final stretch: land exactly on zero inventory.
            return Ok(proportional(t_remaining));
        }
        let (jr, fr, _) = grid.r_axis().locate_clamped(r);
        let strides = grid.x_strides();

        let mut blended = DVector::zeros(d);
        let mut total = 0.0;
        for mask in 0..(1usize << d) {
            let mut wx = 1.0;
            let mut x_flat = 0usize;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    wx *= frac[k];
                    x_flat += (cell[k] + 1) * strides[k];
                } else {
                    wx *= 1.0 - frac[k];
                    x_flat += cell[k] * strides[k];
                }
            }
            if wx == 0.0 {
                continue;
            }
            for (jj, wr) in [(jr, 1.0 - fr), (jr + 1, fr)] {
                let weight = wx * wr;
                if weight == 0.0 {
                    continue;
                }
                if let Some(rate) = self.corner_rate(layer, x_flat, jj) {
                    blended += rate * weight;
                    total += weight;
                }
            }
        }
        if total == 0.0 {
            // Every usable corner infeasible: liquidate proportionally.
            return Ok(proportional(t_remaining));
        }
        Ok(blended / total)
    }
}
