//! The backward-induction value surface in log-gap form.
//!
//! Raw values span many thousands of orders of magnitude (down to
//! `-exp(A lambda x^2 / dt)` just before the horizon), so each node stores
//!
//! ```text
//! w = ln(offset - V),      offset = 1 + max(0, sup u),
//! ```
//!
//! which is finite wherever the node is feasible and `+inf` where it is not.
//! Multilinear interpolation happens in `w`; expectations are taken in value
//! space through a stabilized log-sum-exp. Smaller `w` means larger value.

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use super::grid::SolverGrid;

/// Policy code marking an infeasible node.
pub const POLICY_INFEASIBLE: u16 = u16::MAX;

/// One time layer: `w` and argmax control code per `(inventory, revenue)`
/// node, revenue index fastest.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Vec<f64>,
    pub policy: Vec<u16>,
}

impl Layer {
    pub fn infeasible(n: usize) -> Self {
        Self {
            w: vec![f64::INFINITY; n],
            policy: vec![POLICY_INFEASIBLE; n],
        }
    }
}

/// Value surface over all time layers, plus solve diagnostics.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub grid: SolverGrid,
    pub offset: f64,
    pub layers: Vec<Layer>,
    /// Max sampled one-step residual per layer, in `ln(offset - V)` units.
    pub layer_residuals: Vec<f64>,
    /// Wall time per layer in seconds (in-memory diagnostic, never serialized).
    pub layer_seconds: Vec<f64>,
    /// Quadrature points of the selected controls that fell outside the
    /// revenue range (truncation monitor), interior-origin nodes only.
    pub clamp_count: u64,
    /// Quadrature points of the selected controls, interior-origin nodes.
    pub eval_count: u64,
    pub model_hash: String,
    pub utility_hash: String,
    pub grid_hash: String,
}

pub fn content_hash(description: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(description.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ValueSurface {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn nr(&self) -> usize {
        self.grid.r_axis().count
    }

    pub fn node_index(&self, x_flat: usize, ir: usize) -> usize {
        x_flat * self.nr() + ir
    }

    pub fn w_at(&self, layer: usize, x_flat: usize, ir: usize) -> f64 {
        self.layers[layer].w[self.node_index(x_flat, ir)]
    }

    pub fn policy_at(&self, layer: usize, x_flat: usize, ir: usize) -> u16 {
        self.layers[layer].policy[self.node_index(x_flat, ir)]
    }

    pub fn is_feasible(&self, layer: usize, x_flat: usize, ir: usize) -> bool {
        self.w_at(layer, x_flat, ir).is_finite()
    }

    /// Node value `offset - exp(w)`; underflows to `-inf` where the gap
    /// exceeds the f64 exponent range.
    pub fn value_at(&self, layer: usize, x_flat: usize, ir: usize) -> f64 {
        self.offset - self.w_at(layer, x_flat, ir).exp()
    }

    /// Fraction of interpolation queries that clamped the revenue coordinate.
    pub fn clamp_share(&self) -> f64 {
        if self.eval_count == 0 {
            0.0
        } else {
            self.clamp_count as f64 / self.eval_count as f64
        }
    }

    /// Multilinear interpolation of `w` at an off-grid `(x, r)` point of a
    /// layer. Returns `None` outside the inventory box; the revenue
    /// coordinate clamps to the boundary. Any touched infeasible corner with
    /// positive weight makes the result `+inf`.
    pub fn interp_w(&self, layer: usize, x: &DVector<f64>, r: f64) -> Option<f64> {
        let d = self.grid.d();
        let strides = self.grid.x_strides();
        let mut cell = [0usize; 4];
        let mut frac = [0.0f64; 4];
        for k in 0..d {
            let (i, f) = self.grid.x_axes[k].locate(x[k])?;
            cell[k] = i;
            frac[k] = f;
        }
        // Below-grid revenues extrapolate linearly from the bottom cell
        // (matching the backward-step rule); above-grid clamps.
        let r_axis = self.grid.r_axis();
        let t = (r - r_axis.min) / r_axis.step;
        let (jr, fr) = if t < 0.0 {
            (0usize, t)
        } else if t >= (r_axis.count - 1) as f64 {
            (r_axis.count - 2, 1.0)
        } else {
            let j = (t as usize).min(r_axis.count - 2);
            (j, t - j as f64)
        };
        let nr = self.nr();
        let w = &self.layers[layer].w;
        let mut acc = 0.0;
        for mask in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    weight *= frac[k];
                    flat += (cell[k] + 1) * strides[k];
                } else {
                    weight *= 1.0 - frac[k];
                    flat += cell[k] * strides[k];
                }
            }
            if weight == 0.0 {
                continue;
            }
            let base = flat * nr;
            let lo = w[base + jr];
            let v = if fr == 0.0 {
                lo
            } else if fr < 0.0 {
                let hi = w[base + jr + 1];
                if lo == f64::INFINITY || hi == f64::INFINITY {
                    f64::INFINITY
                } else {
                    (1.0 - fr) * lo + fr * hi
                }
            } else if fr == 1.0 {
                w[base + jr + 1]
            } else {
                (1.0 - fr) * lo + fr * w[base + jr + 1]
            };
            acc += weight * v;
        }
        Some(acc)
    }

    /// `w` at the top layer for the problem's starting point.
    pub fn top_w(&self, x0: &DVector<f64>, r0: f64) -> Option<f64> {
        self.interp_w(self.n_layers() - 1, x0, r0)
    }

    /// Value at the top layer for the starting point (may be `-inf` in
    /// extreme parameter regimes; prefer [`ValueSurface::top_w`]).
    pub fn top_value(&self, x0: &DVector<f64>, r0: f64) -> Option<f64> {
        self.top_w(x0, r0).map(|w| self.offset - w.exp())
    }
}
