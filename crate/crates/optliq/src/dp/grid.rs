//! Discretization grid for the backward-induction solver.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GridError {
    #[error("dyadic level must be between 1 and 20, got {0}")]
    BadLevel(u32),
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("inventory axis {axis}: {reason}")]
    BadAxis { axis: usize, reason: String },
    #[error("at most 4 inventory dimensions are supported, got {0}")]
    TooManyDimensions(usize),
    #[error("revenue radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("control parameters must satisfy J >= 1, xi_max > 0, K >= 1")]
    BadControls,
}

/// Uniform axis with `count` nodes at `min + i * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    /// Axis covering `[min, max]` with the given spacing, with node positions
    /// snapped to integer multiples of `step` so that zero is a grid node.
    pub fn spanning(min: f64, max: f64, step: f64) -> Result<Self, String> {
        if !(step > 0.0) || !min.is_finite() || !max.is_finite() || max <= min {
            return Err(format!("invalid bounds [{min}, {max}] with step {step}"));
        }
        let lo = (min / step).floor();
        let hi = (max / step).ceil();
        if lo > 0.0 || hi < 0.0 {
            return Err("axis must contain zero".into());
        }
        let count = (hi - lo) as usize + 1;
        if count < 2 {
            return Err("axis needs at least two nodes".into());
        }
        Ok(Self {
            min: lo * step,
            step,
            count,
        })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + self.step * i as f64
    }

    pub fn max(&self) -> f64 {
        self.value(self.count - 1)
    }

    /// Cell index and in-cell fraction for an interior query; `None` outside.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !x.is_finite() || x < self.min || x > self.max() {
            return None;
        }
        let t = (x - self.min) / self.step;
        let mut i = t.floor() as usize;
        if i >= self.count - 1 {
            i = self.count - 2;
        }
        Some((i, (t - i as f64).clamp(0.0, 1.0)))
    }

    /// Like [`Axis::locate`] but clamps out-of-range queries to the nearest
    /// boundary node, reporting whether clamping occurred.
    pub fn locate_clamped(&self, x: f64) -> (usize, f64, bool) {
        if x < self.min {
            return (0, 0.0, true);
        }
        if x > self.max() {
            return (self.count - 2, 1.0, true);
        }
        let (i, f) = self.locate(x).unwrap();
        (i, f, false)
    }

    /// Index of an exact node within `1e-9 * step`, if any.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let t = (x - self.min) / self.step;
        let i = t.round();
        if i >= 0.0 && (i as usize) < self.count && (t - i).abs() <= 1e-9 {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Grid for the (time, inventory, revenue) value surface.
///
/// Time is dyadic with `2^level` uniform steps; the revenue axis has
/// `2^(level+1) + 1` nodes spanning `[-r_radius, r_radius]` (spacing
/// `r_radius / 2^level`); inventory axes are uniform per component and must
/// contain zero as an exact node. The finite control set holds the zero
/// rate plus `j_controls` magnitudes per axis direction, clustered toward
/// zero by the exponent `q_cluster`, and every node additionally offers the
/// exact proportional rate `x / t_remaining`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    pub level: u32,
    pub horizon: f64,
    pub x_axes: Vec<Axis>,
    pub r_radius: f64,
    pub j_controls: usize,
    pub xi_max: f64,
    pub q_cluster: f64,
    pub quad_order: usize,
}

impl SolverGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        level: u32,
        horizon: f64,
        x_axes: Vec<Axis>,
        r_radius: f64,
        j_controls: usize,
        xi_max: f64,
        q_cluster: f64,
        quad_order: usize,
    ) -> Result<Self, GridError> {
        if !(1..=20).contains(&level) {
            return Err(GridError::BadLevel(level));
        }
        if !(horizon > 0.0) {
            return Err(GridError::BadHorizon(horizon));
        }
        if x_axes.is_empty() || x_axes.len() > 4 {
            return Err(GridError::TooManyDimensions(x_axes.len()));
        }
        for (k, ax) in x_axes.iter().enumerate() {
            if ax.count < 2 || !(ax.step > 0.0) {
                return Err(GridError::BadAxis {
                    axis: k,
                    reason: "need at least two nodes with positive spacing".into(),
                });
            }
            if ax.index_of(0.0).is_none() {
                return Err(GridError::BadAxis {
                    axis: k,
                    reason: "zero inventory must be a grid node".into(),
                });
            }
        }
        if !(r_radius > 0.0) {
            return Err(GridError::BadRadius(r_radius));
        }
        if j_controls == 0 || !(xi_max > 0.0) || quad_order == 0 || !(q_cluster > 0.0) {
            return Err(GridError::BadControls);
        }
        Ok(Self {
            level,
            horizon,
            x_axes,
            r_radius,
            j_controls,
            xi_max,
            q_cluster,
            quad_order,
        })
    }

    pub fn n_steps(&self) -> usize {
        1usize << self.level
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    pub fn d(&self) -> usize {
        self.x_axes.len()
    }

    pub fn r_axis(&self) -> Axis {
        Axis {
            min: -self.r_radius,
            step: self.r_radius / self.n_steps() as f64,
            count: 2 * self.n_steps() + 1,
        }
    }

    pub fn n_x_nodes(&self) -> usize {
        self.x_axes.iter().map(|a| a.count).product()
    }

    /// Strides for flattening the inventory lattice (last axis fastest).
    pub fn x_strides(&self) -> Vec<usize> {
        let d = self.d();
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.x_axes[k + 1].count;
        }
        strides
    }

    pub fn x_node(&self, flat: usize) -> DVector<f64> {
        let strides = self.x_strides();
        DVector::from_fn(self.d(), |k, _| {
            let i = (flat / strides[k]) % self.x_axes[k].count;
            self.x_axes[k].value(i)
        })
    }

    pub fn x_flat_of_indices(&self, idx: &[usize]) -> usize {
        let strides = self.x_strides();
        idx.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    /// Flat index of the exact-zero inventory node.
    pub fn zero_x_flat(&self) -> usize {
        let idx: Vec<usize> = self
            .x_axes
            .iter()
            .map(|a| a.index_of(0.0).expect("validated at construction"))
            .collect();
        self.x_flat_of_indices(&idx)
    }

    /// The base (node-independent) control list: zero plus per-axis rates
    /// `+/- xi_max (j/J)^q`, sorted by magnitude with zero first.
    pub fn base_controls(&self) -> Vec<DVector<f64>> {
        let d = self.d();
        let mut out = vec![DVector::zeros(d)];
        for j in 1..=self.j_controls {
            let mag = self.xi_max * ((j as f64) / (self.j_controls as f64)).powf(self.q_cluster);
            for k in 0..d {
                for sign in [1.0, -1.0] {
                    let mut v = DVector::zeros(d);
                    v[k] = sign * mag;
                    out.push(v);
                }
            }
        }
        out
    }

    /// A copy with `factor`-times more time layers, control magnitudes and
    /// quadrature nodes (used for refinement studies).
    pub fn refined(&self, factor: u32) -> Self {
        let mut g = self.clone();
        g.level += factor.trailing_zeros();
        g.j_controls *= factor as usize;
        g.quad_order *= factor as usize;
        g
    }

    pub fn describe(&self) -> String {
        format!(
            "grid(level={},horizon={:?},axes={:?},r_radius={:?},j={},xi_max={:?},q={:?},quad={})",
            self.level,
            self.horizon,
            self.x_axes
                .iter()
                .map(|a| (a.min, a.step, a.count))
                .collect::<Vec<_>>(),
            self.r_radius,
            self.j_controls,
            self.xi_max,
            self.q_cluster,
            self.quad_order
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn axis_contains_zero_and_locates() {
        let ax = Axis::spanning(-0.7, 10.3, 0.25).unwrap();
        assert!(ax.index_of(0.0).is_some());
        assert!(ax.min <= -0.7 && ax.max() >= 10.3);
        let (i, f) = ax.locate(0.37).unwrap();
        assert_relative_eq!(ax.value(i) + f * ax.step, 0.37, epsilon = 1e-12);
        assert!(ax.locate(ax.max() + 0.01).is_none());
        let (i, f, clamped) = ax.locate_clamped(-5.0);
        assert!(clamped && i == 0 && f == 0.0);
    }

    #[test]
    fn axis_without_zero_is_rejected() {
        assert!(Axis::spanning(1.0, 4.0, 0.5).is_err());
    }

    #[test]
    fn revenue_axis_shape_follows_level() {
        let grid = SolverGrid::new(
            3,
            1.0,
            vec![Axis::spanning(-1.0, 4.0, 0.5).unwrap()],
            16.0,
            4,
            8.0,
            2.0,
            5,
        )
        .unwrap();
        let r = grid.r_axis();
        assert_eq!(r.count, 2 * 8 + 1);
        assert_relative_eq!(r.step, 16.0 / 8.0);
        assert_relative_eq!(r.min, -16.0);
        assert_relative_eq!(r.max(), 16.0);
        assert!(r.index_of(0.0).is_some());
    }

    #[test]
    fn base_controls_contain_zero_and_are_sorted() {
        let grid = SolverGrid::new(
            2,
            1.0,
            vec![Axis::spanning(0.0, 2.0, 0.5).unwrap()],
            4.0,
            3,
            6.0,
            2.0,
            3,
        )
        .unwrap();
        let ctrl = grid.base_controls();
        assert_eq!(ctrl.len(), 1 + 2 * 3);
        assert_eq!(ctrl[0].amax(), 0.0);
        let mags: Vec<f64> = ctrl.iter().map(|c| c.norm()).collect();
        for w in mags.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_relative_eq!(mags[5], 6.0);
    }

    #[test]
    fn two_dimensional_flattening_round_trips() {
        let grid = SolverGrid::new(
            2,
            1.0,
            vec![
                Axis::spanning(-1.0, 2.0, 0.5).unwrap(),
                Axis::spanning(0.0, 1.0, 0.25).unwrap(),
            ],
            4.0,
            2,
            4.0,
            2.0,
            3,
        )
        .unwrap();
        for flat in 0..grid.n_x_nodes() {
            let x = grid.x_node(flat);
            let idx: Vec<usize> = (0..2)
                .map(|k| grid.x_axes[k].index_of(x[k]).unwrap())
                .collect();
            assert_eq!(grid.x_flat_of_indices(&idx), flat);
        }
        let zero = grid.x_node(grid.zero_x_flat());
        assert_eq!(zero.amax(), 0.0);
    }
}
