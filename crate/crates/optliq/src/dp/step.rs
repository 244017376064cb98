//! Terminal condition, one-step backward recursion and surface assembly.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ImpactFunction, MarketModel, Utility};
use crate::numerics::quad::GaussHermite;

use super::grid::{Axis, SolverGrid};
use super::surface::{content_hash, Layer, ValueSurface, POLICY_INFEASIBLE};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DpError {
    #[error("grid has {grid} inventory dimensions but the model has {model}")]
    DimensionMismatch { grid: usize, model: usize },
    #[error("control set has {0} entries, exceeding the policy code range")]
    TooManyControls(usize),
    #[error("starting point ({0:?}, {1}) lies outside the grid")]
    StartOutsideGrid(Vec<f64>, f64),
}

/// Shared read-only inputs of one backward sweep.
pub struct StepContext<'a> {
    pub model: &'a MarketModel,
    pub impact: &'a ImpactFunction,
    pub grid: &'a SolverGrid,
    pub gh: GaussHermite,
    pub r_axis: Axis,
    pub x_strides: Vec<usize>,
    pub dt: f64,
    pub offset: f64,
    pub controls: Vec<DVector<f64>>,
    pub control_norms: Vec<f64>,
    /// Floating-point sum of the quadrature weights in evaluation order.
    pub gh_weight_total: f64,
    /// `ln(w_k / total)`, used for the lazy-evaluation lower bounds.
    pub gh_log_weights: Vec<f64>,
    /// Quadrature point indices in descending-weight order (center first),
    /// so partial sums give the tightest early bounds.
    pub gh_eval_order: Vec<usize>,
}

impl<'a> StepContext<'a> {
    pub fn new(
        model: &'a MarketModel,
        impact: &'a ImpactFunction,
        grid: &'a SolverGrid,
        offset: f64,
        control_refinement: usize,
    ) -> Result<Self, DpError> {
        if grid.d() != model.d {
            return Err(DpError::DimensionMismatch {
                grid: grid.d(),
                model: model.d,
            });
        }
        let controls = if control_refinement <= 1 {
            grid.base_controls()
        } else {
            let mut g = grid.clone();
            g.j_controls *= control_refinement;
            g.base_controls()
        };
        if controls.len() + 1 >= POLICY_INFEASIBLE as usize {
            return Err(DpError::TooManyControls(controls.len()));
        }
        let control_norms = controls.iter().map(|c| c.norm()).collect();
        let gh = GaussHermite::new(grid.quad_order);
        let gh_weight_total: f64 = gh.weights.iter().sum();
        let gh_log_weights = gh
            .weights
            .iter()
            .map(|w| (w / gh_weight_total).ln())
            .collect();
        let mut gh_eval_order: Vec<usize> = (0..gh.len()).collect();
        gh_eval_order.sort_by(|&a, &b| {
            gh.weights[b]
                .partial_cmp(&gh.weights[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        Ok(Self {
            model,
            impact,
            grid,
            gh,
            r_axis: grid.r_axis(),
            x_strides: grid.x_strides(),
            dt: grid.dt(),
            offset,
            controls,
            control_norms,
            gh_weight_total,
            gh_log_weights,
            gh_eval_order,
        })
    }

    /// Policy code of the node-dependent proportional-liquidation candidate.
    pub fn proportional_code(&self) -> u16 {
        self.controls.len() as u16
    }

    /// Rate vector for a stored policy code at a given node and layer.
    pub fn decode_control(&self, code: u16, x: &DVector<f64>, layer: usize) -> Option<DVector<f64>> {
        if code == POLICY_INFEASIBLE {
            return None;
        }
        let idx = code as usize;
        if idx < self.controls.len() {
            Some(self.controls[idx].clone())
        } else {
            Some(x / (layer as f64 * self.dt))
        }
    }
}

/// One precomputed candidate at a fixed inventory node.
struct Candidate {
    code: u16,
    norm: f64,
    /// Deterministic revenue shift `b . xbar dt - f(-xi) dt`.
    shift: f64,
    /// Noise scale `sqrt(xbar^T Sigma xbar dt)`.
    sd: f64,
    corner_start: usize,
    corner_len: usize,
}

/// Reusable per-worker buffers.
#[derive(Default)]
pub struct Scratch {
    cands: Vec<Candidate>,
    corners: Vec<(u32, f64)>,
    /// Quadrature interpolations of the candidate being evaluated.
    wq: Vec<f64>,
    /// Warm-start candidate slot carried along a revenue scan.
    hint: usize,
    local_clamps: u64,
    local_evals: u64,
}

/// Log-gap offset for a utility: barely above `sup u`, so that the stored
/// `ln(offset - V)` stays exactly linear in revenue wherever the value is
/// exponential-dominated. A wider margin would bend the stored field near
/// `V ~ sup u - margin` and linear interpolation across that bend costs
/// O(spacing) accuracy; the tiny margin pushes the bend far outside any
/// region the recursion can reach. The margin is kept above one ulp of
/// `sup` so the offset is strictly larger.
pub fn surface_offset(utility: &Utility) -> f64 {
    let sup = utility.sup_bound();
    sup + (1e-12f64).max(sup.abs() * 1e-9)
}

/// Terminal layer: `u(r)` exactly on the zero-inventory line, infeasible
/// everywhere else.
pub fn terminal_layer(utility: &Utility, grid: &SolverGrid, offset: f64) -> Layer {
    let nr = grid.r_axis().count;
    let r_axis = grid.r_axis();
    let mut layer = Layer::infeasible(grid.n_x_nodes() * nr);
    let zero_flat = grid.zero_x_flat();
    for ir in 0..nr {
        let idx = zero_flat * nr + ir;
        layer.w[idx] = utility.log_gap(r_axis.value(ir), offset);
        layer.policy[idx] = 0; // rest
    }
    layer
}

fn locate_x(axes: &[Axis], x: &DVector<f64>) -> Option<([usize; 4], [f64; 4])> {
    let mut cell = [0usize; 4];
    let mut frac = [0.0f64; 4];
    for k in 0..axes.len() {
        let (i, f) = axes[k].locate(x[k])?;
        cell[k] = i;
        frac[k] = f;
    }
    Some((cell, frac))
}

/// Fills the per-node candidate list for one inventory node. `layer_next`
/// is the number of remaining steps after the step being computed.
fn precompute_candidates(ctx: &StepContext, layer_next: usize, x: &DVector<f64>, scratch: &mut Scratch) {
    scratch.cands.clear();
    scratch.corners.clear();
    let d = ctx.grid.d();
    let dt = ctx.dt;

    let push = |ctx: &StepContext, scratch: &mut Scratch, code: u16, xi: &DVector<f64>, norm: f64, x_next: &DVector<f64>| {
        let Some((cell, frac)) = locate_x(&ctx.grid.x_axes, x_next) else {
            return; // leaves the inventory box: excluded
        };
        let start = scratch.corners.len();
        for mask in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0usize;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    weight *= frac[k];
                    flat += (cell[k] + 1) * ctx.x_strides[k];
                } else {
                    weight *= 1.0 - frac[k];
                    flat += cell[k] * ctx.x_strides[k];
                }
            }
            if weight > 0.0 {
                scratch.corners.push((flat as u32, weight));
            }
        }
        let xbar = x - xi * (0.5 * dt);
        let shift = ctx.model.b.dot(&xbar) * dt - ctx.impact.cost(&(-xi)) * dt;
        let var = ctx.model.variance_rate(&xbar).max(0.0);
        scratch.cands.push(Candidate {
            code,
            norm,
            shift,
            sd: (var * dt).sqrt(),
            corner_start: start,
            corner_len: scratch.corners.len() - start,
        });
    };

    for (idx, xi) in ctx.controls.iter().enumerate() {
        let x_next = x - xi * dt;
        push(ctx, scratch, idx as u16, xi, ctx.control_norms[idx], &x_next);
    }
    // Exact proportional liquidation xi = x / t_remaining; computing the
    // landing point as x (l-1)/l puts it exactly on the zero node when one
    // step remains.
    let l = layer_next as f64;
    let xi_prop = x / (l * dt);
    let x_next = x * ((l - 1.0) / l);
    push(
        ctx,
        scratch,
        ctx.proportional_code(),
        &xi_prop,
        xi_prop.norm(),
        &x_next,
    );
}

#[inline]
fn r_interp(w: &[f64], base: usize, jr: usize, fr: f64) -> f64 {
    // Branches keep 0 * inf out of the stencil: zero-weight corners do not
    // participate in the infeasibility absorption rule.
    if fr == 0.0 {
        w[base + jr]
    } else if fr == 1.0 {
        w[base + jr + 1]
    } else {
        (1.0 - fr) * w[base + jr] + fr * w[base + jr + 1]
    }
}

/// Evaluates one `(x, r)` node against the prepared candidates, returning
/// the log-gap value and argmax code. Ties break toward the smaller control
/// norm, then the smaller code.
///
/// Candidates are probed at their central quadrature point first; the
/// single-term bound `v0 + ln(w_mid / total) <= exact` prunes strictly
/// dominated candidates after one interpolation. The scan starts from the
/// argmax of the previously evaluated node of the row, which is almost
/// always competitive.
fn evaluate_node(ctx: &StepContext, prev_w: &[f64], r: f64, scratch: &mut Scratch) -> (f64, u16) {
    let k_quad = ctx.gh.len();
    let mid = k_quad / 2;
    let nr = ctx.r_axis.count;
    let r_min = ctx.r_axis.min;
    let r_inv_step = 1.0 / ctx.r_axis.step;

    #[inline(always)]
    fn interp(
        prev_w: &[f64],
        corners: &[(u32, f64)],
        nr: usize,
        r_min: f64,
        r_inv_step: f64,
        rq: f64,
        outside: &mut u64,
    ) -> f64 {
        let t = (rq - r_min) * r_inv_step;
        // Below the grid the log-gap slope has saturated at the steep tail
        // coefficient, so linear extrapolation from the bottom cell is the
        // exact continuation; above the grid the boundary value is kept
        // (conservative, the value barely moves there).
        let (jr, fr) = if t < 0.0 {
            *outside += 1;
            (0usize, t)
        } else {
            let max_t = (nr - 1) as f64;
            if t >= max_t {
                *outside += (t > max_t) as u64;
                (nr - 2, 1.0)
            } else {
                let j = t as usize;
                (j, t - j as f64)
            }
        };
        let mut v = 0.0;
        if fr < 0.0 {
            for &(flat, weight) in corners {
                let base = flat as usize * nr;
                let (lo, hi) = (prev_w[base], prev_w[base + 1]);
                if lo == f64::INFINITY || hi == f64::INFINITY {
                    return f64::INFINITY;
                }
                v += weight * ((1.0 - fr) * lo + fr * hi);
            }
        } else {
            for &(flat, weight) in corners {
                let base = flat as usize * nr;
                v += weight * r_interp(prev_w, base, jr, fr);
            }
        }
        v
    }

    let mut best_w = f64::INFINITY;
    let mut best_norm = f64::INFINITY;
    let mut best_code = POLICY_INFEASIBLE;
    let mut best_slot = scratch.hint;
    // Truncation monitor: out-of-range quadrature points and point count of
    // the control that ends up selected.
    let mut best_outside = 0u64;
    let mut best_points = 0u64;

    let n = scratch.cands.len();
    let hint = scratch.hint.min(n.saturating_sub(1));
    let order = std::iter::once(hint).chain((0..n).filter(|&x| x != hint));
    for slot in order {
        let cand = &scratch.cands[slot];
        if cand.corner_len == 0 {
            continue;
        }
        let corners = &scratch.corners[cand.corner_start..cand.corner_start + cand.corner_len];
        let base_r = r + cand.shift;
        let mut cand_outside = 0u64;
        let mut cand_points = 1u64;
        // Central probe and rigorous single-term lower bound.
        let rq0 = if cand.sd == 0.0 {
            base_r
        } else {
            base_r + ctx.gh.nodes[mid] * cand.sd
        };
        let v0 = interp(prev_w, corners, nr, r_min, r_inv_step, rq0, &mut cand_outside);
        if v0 == f64::INFINITY {
            continue; // touches an infeasible region: candidate excluded
        }
        let exact = if cand.sd == 0.0 {
            v0
        } else {
            if v0 + ctx.gh_log_weights[mid] > best_w {
                continue; // provably worse than the incumbent
            }
            // Accumulate the log-sum-exp in descending-weight order; the
            // partial sum of positive terms already bounds the final value
            // from below, so a candidate can bail as soon as that bound
            // passes the incumbent. Summation order is fixed by the
            // context, independent of where the bail happens.
            let mut excluded = false;
            let mut bailed = false;
            let mut m = f64::NEG_INFINITY;
            let mut sum = 0.0;
            // Bail threshold in sum space: partial log-sum-exp exceeds the
            // incumbent iff sum > total * exp(best_w - m).
            let mut thresh = f64::INFINITY;
            for (pos, &k) in ctx.gh_eval_order.iter().enumerate() {
                let v = if k == mid {
                    v0
                } else {
                    cand_points += 1;
                    interp(
                        prev_w,
                        corners,
                        nr,
                        r_min,
                        r_inv_step,
                        base_r + ctx.gh.nodes[k] * cand.sd,
                        &mut cand_outside,
                    )
                };
                if v == f64::INFINITY {
                    excluded = true;
                    break;
                }
                if v > m {
                    sum *= (m - v).exp();
                    m = v;
                    thresh = ctx.gh_weight_total * (best_w - m).exp();
                }
                sum += ctx.gh.weights[k] * (v - m).exp();
                if pos + 1 < k_quad && sum > thresh {
                    bailed = true;
                    break;
                }
            }
            if excluded || bailed {
                continue;
            }
            // Normalizing by the same-ordered weight sum keeps a candidate
            // whose quadrature points all see one value exactly tied with
            // that value, so boundary clamps cannot win by a rounding ulp.
            m + (sum / ctx.gh_weight_total).ln()
        };
        let better = exact < best_w
            || (exact == best_w
                && (cand.norm < best_norm || (cand.norm == best_norm && cand.code < best_code)));
        if better {
            best_w = exact;
            best_norm = cand.norm;
            best_code = cand.code;
            best_slot = slot;
            best_outside = cand_outside;
            best_points = cand_points;
        }
    }
    scratch.hint = best_slot;
    scratch.local_clamps += best_outside;
    scratch.local_evals += best_points;
    (best_w, best_code)
}

/// Statistics of one backward step.
#[derive(Debug, Default, Clone, Copy)]
pub struct StepStats {
    pub clamps: u64,
    pub evals: u64,
}

/// Computes the layer with `layer_next` remaining steps from the layer below.
pub fn backward_step(ctx: &StepContext, prev: &Layer, layer_next: usize) -> (Layer, StepStats) {
    let nr = ctx.r_axis.count;
    let n_x = ctx.grid.n_x_nodes();
    let mut w = vec![f64::INFINITY; n_x * nr];
    let mut policy = vec![POLICY_INFEASIBLE; n_x * nr];
    let clamps = AtomicU64::new(0);
    let evals = AtomicU64::new(0);

    w.par_chunks_mut(nr)
        .zip(policy.par_chunks_mut(nr))
        .enumerate()
        .for_each_init(Scratch::default, |scratch, (x_flat, (w_row, p_row))| {
            scratch.local_clamps = 0;
            scratch.local_evals = 0;
            let x = ctx.grid.x_node(x_flat);
            precompute_candidates(ctx, layer_next, &x, scratch);
            for ir in 0..nr {
                let r = ctx.r_axis.value(ir);
                let before = (scratch.local_clamps, scratch.local_evals);
                let (wv, code) = evaluate_node(ctx, &prev.w, r, scratch);
                if ir == 0 || ir == nr - 1 {
                    // Queries issued by the truncation rows themselves leave
                    // the grid by construction; the clamp statistic monitors
                    // whether the interior solution needs values beyond the
                    // truncation, so boundary-row queries are not counted.
                    scratch.local_clamps = before.0;
                    scratch.local_evals = before.1;
                }
                w_row[ir] = wv;
                p_row[ir] = code;
            }
            clamps.fetch_add(scratch.local_clamps, Ordering::Relaxed);
            evals.fetch_add(scratch.local_evals, Ordering::Relaxed);
        });

    (
        Layer { w, policy },
        StepStats {
            clamps: clamps.into_inner(),
            evals: evals.into_inner(),
        },
    )
}

/// One-step consistency residual at a node against a control set refined
/// `refine` times, in `ln(offset - V)` units. Zero by convention on
/// infeasible and terminal nodes.
pub fn bellman_residual(
    surface: &ValueSurface,
    model: &MarketModel,
    impact: &ImpactFunction,
    layer: usize,
    x_flat: usize,
    ir: usize,
    refine: usize,
) -> f64 {
    if layer == 0 || !surface.is_feasible(layer, x_flat, ir) {
        return 0.0;
    }
    let ctx = StepContext::new(model, impact, &surface.grid, surface.offset, refine)
        .expect("surface grid is consistent with its model");
    let mut scratch = Scratch::default();
    let x = surface.grid.x_node(x_flat);
    precompute_candidates(&ctx, layer, &x, &mut scratch);
    let r = ctx.r_axis.value(ir);
    let (w_ref, _) = evaluate_node(&ctx, &surface.layers[layer - 1].w, r, &mut scratch);
    let w_node = surface.w_at(layer, x_flat, ir);
    if !w_ref.is_finite() || !w_node.is_finite() {
        return 0.0;
    }
    (w_node - w_ref).abs()
}

fn sampled_residual(
    ctx_refined: &StepContext,
    prev: &Layer,
    current: &Layer,
    layer_next: usize,
    samples: usize,
) -> f64 {
    let nr = ctx_refined.r_axis.count;
    let total = current.w.len();
    let stride = (total / samples.max(1)).max(1);
    let mut scratch = Scratch::default();
    let mut worst = 0.0f64;
    let mut last_x = usize::MAX;
    let mut idx = 0;
    while idx < total {
        let x_flat = idx / nr;
        let ir = idx % nr;
        if current.w[idx].is_finite() {
            if x_flat != last_x {
                let x = ctx_refined.grid.x_node(x_flat);
                precompute_candidates(ctx_refined, layer_next, &x, &mut scratch);
                last_x = x_flat;
            }
            let r = ctx_refined.r_axis.value(ir);
            let (w_ref, _) = evaluate_node(ctx_refined, &prev.w, r, &mut scratch);
            if w_ref.is_finite() {
                worst = worst.max((current.w[idx] - w_ref).abs());
            }
        }
        idx += stride;
    }
    worst
}

/// Full backward induction: terminal layer plus `2^level` steps, recording
/// per-layer timing and a sampled one-step residual against a doubled
/// control set.
pub fn solve_surface(
    model: &MarketModel,
    impact: &ImpactFunction,
    utility: &Utility,
    grid: &SolverGrid,
) -> Result<ValueSurface, DpError> {
    let offset = surface_offset(utility);
    let ctx = StepContext::new(model, impact, grid, offset, 1)?;
    let ctx_refined = StepContext::new(model, impact, grid, offset, 2)?;
    let n = grid.n_steps();
    let mut layers = Vec::with_capacity(n + 1);
    layers.push(terminal_layer(utility, grid, offset));
    let mut layer_residuals = vec![0.0];
    let mut layer_seconds = vec![0.0];
    let mut clamp_count = 0u64;
    let mut eval_count = 0u64;
    for l in 1..=n {
        let started = Instant::now();
        let (layer, stats) = backward_step(&ctx, &layers[l - 1], l);
        clamp_count += stats.clamps;
        eval_count += stats.evals;
        layer_residuals.push(sampled_residual(&ctx_refined, &layers[l - 1], &layer, l, 48));
        layer_seconds.push(started.elapsed().as_secs_f64());
        layers.push(layer);
    }
    Ok(ValueSurface {
        grid: grid.clone(),
        offset,
        layers,
        layer_residuals,
        layer_seconds,
        clamp_count,
        eval_count,
        model_hash: content_hash(&model.describe()),
        utility_hash: content_hash(&utility.describe()),
        grid_hash: content_hash(&grid.describe()),
    })
}

/// Outcome of a streaming (two rolling layers) solve.
#[derive(Debug, Clone, Copy)]
pub struct StreamOutcome {
    /// `ln(offset - V)` interpolated at the starting point on the top layer.
    pub w_top: f64,
    pub offset: f64,
    pub max_sampled_residual: f64,
    pub clamp_share: f64,
}

/// Memory-light solve that only retains the value at `(x0, r0)` on the top
/// layer, for refinement studies on grids too large to store.
pub fn solve_value(
    model: &MarketModel,
    impact: &ImpactFunction,
    utility: &Utility,
    grid: &SolverGrid,
    x0: &DVector<f64>,
    r0: f64,
) -> Result<StreamOutcome, DpError> {
    let offset = surface_offset(utility);
    let ctx = StepContext::new(model, impact, grid, offset, 1)?;
    let ctx_refined = StepContext::new(model, impact, grid, offset, 2)?;
    let n = grid.n_steps();
    let mut prev = terminal_layer(utility, grid, offset);
    let mut clamps = 0u64;
    let mut evals = 0u64;
    let mut max_resid = 0.0f64;
    for l in 1..=n {
        let (layer, stats) = backward_step(&ctx, &prev, l);
        clamps += stats.clamps;
        evals += stats.evals;
        max_resid = max_resid.max(sampled_residual(&ctx_refined, &prev, &layer, l, 48));
        prev = layer;
    }
    // Interpolate at the starting point on the final layer.
    let nr = ctx.r_axis.count;
    let probe = ValueSurface {
        grid: grid.clone(),
        offset,
        layers: vec![prev],
        layer_residuals: vec![],
        layer_seconds: vec![],
        clamp_count: clamps,
        eval_count: evals,
        model_hash: String::new(),
        utility_hash: String::new(),
        grid_hash: String::new(),
    };
    let _ = nr;
    let w_top = probe
        .interp_w(0, x0, r0)
        .ok_or_else(|| DpError::StartOutsideGrid(x0.iter().cloned().collect(), r0))?;
    Ok(StreamOutcome {
        w_top,
        offset,
        max_sampled_residual: max_resid,
        clamp_share: if evals == 0 {
            0.0
        } else {
            clamps as f64 / evals as f64
        },
    })
}
