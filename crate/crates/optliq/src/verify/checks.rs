//! The structural properties of the value function, each restated as a
//! numerical pass/fail check over solver outputs.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cara::{solve_cara, SolveError};
use crate::dp::{
    bellman_residual, extract_policy, solve_surface, solve_value, DpError, SolverGrid,
    ValueSurface,
};
use crate::mc::{rng, simulate, ControlLaw, SimConfig, SimError};
use crate::model::{sandwich_utilities, ImpactFunction, MarketModel, Utility};
use crate::numerics::log_add_exp;

use super::report::{CheckReport, Verdict};
use super::tolerances::{
    DERIVATIVE_REL_TOL, EXACT_TOL, FP_REL_TOL, SCHEME_TOL_LOG, STAT_SIGMAS,
};

/// `ln(offset - V1)` for the upper envelope `V1 = 1/a1 - exp(q1)`;
/// `None` when `V1 >= offset` makes the bound vacuous.
fn log_gap_of_upper(offset: f64, a1: f64, q1: f64) -> Option<f64> {
    let t = offset - 1.0 / a1;
    if t >= 0.0 {
        if t == 0.0 {
            Some(q1)
        } else {
            Some(log_add_exp(t.ln(), q1))
        }
    } else {
        // offset - V1 = exp(q1) - |t|
        let ratio = (-t).ln() - q1;
        if ratio >= 0.0 {
            None
        } else {
            Some(q1 + (-(ratio.exp())).ln_1p())
        }
    }
}

/// `ln(offset - V2)` for the lower envelope `V2 = -exp(q2)`.
fn log_gap_of_lower(offset: f64, q2: f64) -> f64 {
    log_add_exp(offset.ln(), q2)
}

/// Joint concavity of `(x, r) -> V` within each time layer, tested on
/// random grid-exact midpoint triples. The margin is the log-space slack of
/// `V(mid) >= (V(a) + V(b)) / 2`; interior nodes only, so revenue-truncation
/// boundary artifacts are not sampled.
pub fn check_concavity(surface: &ValueSurface, n_segments: usize, seed: u64) -> CheckReport {
    let grid = &surface.grid;
    let nr = grid.r_axis().count;
    let nx = grid.n_x_nodes();
    let n_layers = surface.n_layers();
    // One-dimensional inventory walk over the flattened lattice is exact
    // for d = 1; for d > 1 segments are sampled per axis.
    let d = grid.d();
    let strides = grid.x_strides();

    let mut tested = 0usize;
    let mut worst = f64::INFINITY;
    let mut draw = 0u64;
    let mut attempts = 0usize;
    while tested < n_segments && attempts < n_segments * 200 {
        attempts += 1;
        let mut next = || {
            draw += 1;
            rng::uniform(seed, draw, 0, 0)
        };
        let layer = (next() * n_layers as f64) as usize % n_layers;
        // Midpoint node and integer half-offsets, per axis and in revenue.
        let mut mid_idx = [0usize; 4];
        let mut delta = [0i64; 4];
        let mut ok = true;
        for k in 0..d {
            let count = grid.x_axes[k].count;
            if count < 3 {
                ok = false;
                break;
            }
            let m = 1 + (next() * (count - 2) as f64) as usize % (count - 2);
            let max_step = m.min(count - 1 - m);
            let s = (next() * (max_step + 1) as f64) as i64 % (max_step as i64 + 1);
            mid_idx[k] = m;
            delta[k] = s;
        }
        if !ok {
            continue;
        }
        let rm = 1 + (next() * (nr - 2) as f64) as usize % (nr - 2);
        let r_step_max = rm.min(nr - 1 - rm);
        let rs = (next() * (r_step_max + 1) as f64) as i64 % (r_step_max as i64 + 1);
        if delta[..d].iter().all(|&s| s == 0) && rs == 0 {
            continue;
        }

        let flat_of = |signs: i64| -> usize {
            // signs = +1 endpoint, -1 endpoint, 0 midpoint
            let mut flat = 0usize;
            for k in 0..d {
                flat += ((mid_idx[k] as i64 + signs * delta[k]) as usize) * strides[k];
            }
            flat
        };
        let ira = (rm as i64 + rs) as usize;
        let irb = (rm as i64 - rs) as usize;
        let wa = surface.w_at(layer, flat_of(1), ira);
        let wb = surface.w_at(layer, flat_of(-1), irb);
        let wm = surface.w_at(layer, flat_of(0), rm);
        if !wa.is_finite() || !wb.is_finite() || !wm.is_finite() {
            continue;
        }
        let _ = nx;
        // e^{wm} <= (e^{wa} + e^{wb})/2 in log space.
        let rhs = log_add_exp(wa, wb) - std::f64::consts::LN_2;
        worst = worst.min(rhs - wm);
        tested += 1;
    }
    CheckReport::conclude(
        "concavity",
        "V is jointly concave in (inventory, revenue) at fixed horizon",
        tested,
        if tested == 0 { 0.0 } else { worst },
        SCHEME_TOL_LOG,
        0.0,
    )
}

/// The exponential envelopes re-solved at every node's remaining horizon
/// and inventory bracket the surface: `V2 - tol <= V <= V1 + tol` at each
/// finite node. Margins are log-space slacks.
pub fn check_sandwich(
    surface: &ValueSurface,
    model: &MarketModel,
    impact: &ImpactFunction,
    utility: &Utility,
    cara_steps: usize,
) -> Result<CheckReport, SolveError> {
    let grid = &surface.grid;
    let (a1, a2) = utility.ara();
    let nr = grid.r_axis().count;
    let nx = grid.n_x_nodes();
    let n_layers = surface.n_layers();
    let dt = grid.dt();
    let offset = surface.offset;
    let r_axis = grid.r_axis();

    // Envelope costs per (layer >= 1, inventory node).
    let costs: Result<Vec<(f64, f64)>, SolveError> = (0..(n_layers - 1) * nx)
        .into_par_iter()
        .map(|pair| {
            let layer = pair / nx + 1;
            let x_flat = pair % nx;
            let t_rem = layer as f64 * dt;
            let x = grid.x_node(x_flat);
            let c1 = solve_cara(a1, model, impact, t_rem, &x, 0.0, cara_steps)?.cost;
            let c2 = solve_cara(a2, model, impact, t_rem, &x, 0.0, cara_steps)?.cost;
            Ok((c1, c2))
        })
        .collect();
    let costs = costs?;

    let node_margin = |layer: usize, x_flat: usize, ir: usize| -> Option<f64> {
        let w = surface.w_at(layer, x_flat, ir);
        if !w.is_finite() {
            return None;
        }
        let r = r_axis.value(ir);
        let (c1, c2) = if layer == 0 {
            (0.0, 0.0)
        } else {
            costs[(layer - 1) * nx + x_flat]
        };
        let q1 = a1 * (c1 - r);
        let q2 = a2 * (c2 - r);
        let lower = log_gap_of_lower(offset, q2) - w; // V >= V2
        let upper = match log_gap_of_upper(offset, a1, q1) {
            Some(w1) => w - w1, // V <= V1
            None => f64::INFINITY,
        };
        Some(lower.min(upper))
    };

    let worst = (0..n_layers * nx * nr)
        .into_par_iter()
        .map(|idx| {
            let layer = idx / (nx * nr);
            let rem = idx % (nx * nr);
            node_margin(layer, rem / nr, rem % nr).unwrap_or(f64::INFINITY)
        })
        .reduce(|| f64::INFINITY, f64::min);
    let tested = (0..n_layers * nx * nr)
        .into_par_iter()
        .filter(|&idx| {
            let layer = idx / (nx * nr);
            let rem = idx % (nx * nr);
            surface.is_feasible(layer, rem / nr, rem % nr)
        })
        .count();

    Ok(CheckReport::conclude(
        "sandwich",
        "exponential envelope values bracket the surface at every finite node",
        tested,
        worst,
        SCHEME_TOL_LOG,
        0.0,
    ))
}

/// Closed-form-free evaluation of `int_0^t f*(-|b| s) ds` by Simpson's rule.
pub fn fenchel_drift_integral(impact: &ImpactFunction, b_norm: f64, t: f64) -> f64 {
    if b_norm == 0.0 || t == 0.0 {
        return 0.0;
    }
    let n = 256usize; // even
    let h = t / n as f64;
    let g = |s: f64| impact.conjugate_norm(b_norm * s);
    let mut acc = g(0.0) + g(t);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(i as f64 * h);
    }
    acc * h / 3.0
}

/// Short-horizon behavior on a family of surfaces with halving horizons:
/// on the zero-inventory line the value sits between `u(R)` and
/// `u(R + int f*(-bs) ds)` with a shrinking gap; with inventory left the
/// value dives below the terminal utility level and keeps falling.
pub fn check_initial_condition(
    family: &[(f64, ValueSurface)],
    impact: &ImpactFunction,
    utility: &Utility,
    b_norm: f64,
    x0: &DVector<f64>,
    r0: f64,
) -> CheckReport {
    assert!(family.len() >= 2, "need at least two horizons");
    let offset = family[0].1.offset;
    let (_, a2) = utility.ara();
    let u2_level = sandwich_utilities(a2, a2).u2(r0);

    let mut worst = f64::INFINITY;
    let mut tested = 0usize;
    let zero = DVector::zeros(x0.len());
    let w_rest = utility.log_gap(r0, offset);

    let mut gaps = Vec::new();
    let mut w_with_inventory = Vec::new();
    for (t_k, surface) in family {
        let w0 = surface
            .top_w(&zero, r0)
            .expect("zero inventory is on every grid");
        // Lower bound: V(T, 0, R) >= u(R), exact through the resting control.
        worst = worst.min(w_rest - w0);
        // Upper bound: V(T, 0, R) <= u(R + int_0^T f*(-bs) ds).
        let j_t = fenchel_drift_integral(impact, b_norm, *t_k);
        let w_up = utility.log_gap(r0 + j_t, offset);
        worst = worst.min(w0 - w_up);
        tested += 2;
        gaps.push(w_rest.exp() - w0.exp()); // V - u(R) in value space
        let wx = surface
            .top_w(x0, r0)
            .expect("starting inventory is on every grid");
        // Below the terminal utility level once inventory is stranded.
        worst = worst.min(wx - (offset - u2_level).ln());
        tested += 1;
        w_with_inventory.push(wx);
    }
    // Gap at the zero line shrinks as the horizon halves.
    for pair in gaps.windows(2) {
        worst = worst.min(pair[0] - pair[1]);
        tested += 1;
    }
    // With inventory the value keeps falling (log-gap keeps rising).
    for pair in w_with_inventory.windows(2) {
        worst = worst.min(pair[1] - pair[0]);
        tested += 1;
    }
    CheckReport::conclude(
        "initial_condition",
        "short-horizon limit: u(R) on the zero line, blow-up with inventory",
        tested,
        worst,
        SCHEME_TOL_LOG,
        0.0,
    )
}

/// Central-difference revenue derivative of the surface against the Monte
/// Carlo estimate of `E[u'(R_T)]` under the extracted policy, and the
/// second-order analogue when the marginal utility is convex decreasing.
///
/// Derivatives are formed through the stored log-gap: `V_r = -e^w w_r`,
/// `V_rr = -e^w (w_rr + w_r^2)`.
pub fn check_partial_derivative_r(
    surface: &ValueSurface,
    model: &MarketModel,
    impact: &ImpactFunction,
    utility: &Utility,
    x0: &DVector<f64>,
    r0: f64,
    sim: SimConfig,
) -> Result<CheckReport, SimError> {
    let grid = &surface.grid;
    let r_axis = grid.r_axis();
    let ir = r_axis
        .index_of(r0)
        .expect("starting revenue must be a grid node for the derivative check");
    assert!(ir > 0 && ir + 1 < r_axis.count);
    let top = surface.n_layers() - 1;
    let x_idx: Vec<usize> = (0..grid.d())
        .map(|k| grid.x_axes[k].index_of(x0[k]).expect("x0 on grid"))
        .collect();
    let x_flat = grid.x_flat_of_indices(&x_idx);
    let h = r_axis.step;
    let w0 = surface.w_at(top, x_flat, ir);
    let w_plus = surface.w_at(top, x_flat, ir + 1);
    let w_minus = surface.w_at(top, x_flat, ir - 1);
    let w_r = (w_plus - w_minus) / (2.0 * h);
    let w_rr = (w_plus - 2.0 * w0 + w_minus) / (h * h);
    let v_r_fd = -w0.exp() * w_r;
    let v_rr_fd = -w0.exp() * (w_rr + w_r * w_r);

    let policy = extract_policy(surface);
    let res = simulate(
        model,
        impact,
        ControlLaw::Feedback(&policy),
        x0,
        r0,
        sim,
        &[],
    )?;
    let du: Vec<f64> = res
        .samples
        .iter()
        .map(|s| utility.derivative(s.terminal_revenue))
        .collect();
    let (mc_mean, mc_err) = crate::mc::sim::mean_and_stderr(du.into_iter());

    let mut worst = f64::INFINITY;
    let mut scheme = 0.0f64;
    let mut stat = 0.0f64;
    let mut stat_dominates = false;
    {
        let diff = (v_r_fd - mc_mean).abs();
        let rel = DERIVATIVE_REL_TOL * v_r_fd.abs().max(mc_mean.abs());
        let sig = STAT_SIGMAS * mc_err;
        let allowed = rel.max(sig);
        worst = worst.min(allowed - diff);
        scheme = scheme.max(rel);
        stat = stat.max(sig);
        if diff > allowed {
            stat_dominates = sig >= rel;
        }
    }
    if utility.has_convex_decreasing_marginal() {
        let d2: Vec<f64> = res
            .samples
            .iter()
            .map(|s| utility.second_derivative(s.terminal_revenue))
            .collect();
        let (mc2, mc2_err) = crate::mc::sim::mean_and_stderr(d2.into_iter());
        let diff = (v_rr_fd - mc2).abs();
        let rel = DERIVATIVE_REL_TOL * v_rr_fd.abs().max(mc2.abs());
        let sig = STAT_SIGMAS * mc2_err;
        let allowed = rel.max(sig);
        worst = worst.min(allowed - diff);
        if diff > allowed {
            stat_dominates = stat_dominates || sig >= rel;
        }
    }

    // Margin already carries the allowance, so the budget fields are
    // informational here.
    let mut report = CheckReport::conclude(
        "revenue_derivative",
        "dV/dR equals E[u'(R_T)] under the optimal policy (and d2V/dR2 = E[u''])",
        res.n(),
        worst,
        scheme,
        stat,
    );
    report.verdict = if worst >= 0.0 {
        Verdict::Pass
    } else if stat_dominates {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    Ok(report)
}

/// One-step optimality of the stored surface against a doubled control set
/// at seeded sample nodes.
pub fn check_bellman(
    surface: &ValueSurface,
    model: &MarketModel,
    impact: &ImpactFunction,
    n_samples: usize,
    seed: u64,
) -> CheckReport {
    let grid = &surface.grid;
    let nr = grid.r_axis().count;
    let nx = grid.n_x_nodes();
    let n_layers = surface.n_layers();
    let mut worst_resid = 0.0f64;
    let mut tested = 0usize;
    let mut draw = 0u64;
    let mut attempts = 0;
    while tested < n_samples && attempts < n_samples * 50 {
        attempts += 1;
        let mut next = || {
            draw += 1;
            rng::uniform(seed ^ 0xb5, draw, 1, 0)
        };
        let layer = 1 + (next() * (n_layers - 1) as f64) as usize % (n_layers - 1);
        let x_flat = (next() * nx as f64) as usize % nx;
        let ir = (next() * nr as f64) as usize % nr;
        if !surface.is_feasible(layer, x_flat, ir) {
            continue;
        }
        let resid = bellman_residual(surface, model, impact, layer, x_flat, ir, 2);
        worst_resid = worst_resid.max(resid);
        tested += 1;
    }
    CheckReport::conclude(
        "bellman_residual",
        "one-step dynamic programming identity at sampled nodes",
        tested,
        -worst_resid,
        SCHEME_TOL_LOG,
        0.0,
    )
}

/// Residual ratio under a joint (time, control, quadrature) refinement:
/// doubling all three strictly reduces the solver's sampled residual.
pub fn check_bellman_refinement(
    model: &MarketModel,
    impact: &ImpactFunction,
    utility: &Utility,
    base: &SolverGrid,
    x0: &DVector<f64>,
    r0: f64,
) -> Result<CheckReport, DpError> {
    let coarse = solve_value(model, impact, utility, base, x0, r0)?;
    let fine_grid = base.refined(2);
    let fine = solve_value(model, impact, utility, &fine_grid, x0, r0)?;
    let margin = coarse.max_sampled_residual - fine.max_sampled_residual;
    Ok(CheckReport::conclude(
        "bellman_refinement",
        "doubling (time layers, controls, quadrature) shrinks the residual",
        2,
        margin,
        0.0,
        0.0,
    ))
}

/// Continuity of `(T, X0, R0) -> V` probed along converging sequences:
/// horizons from above and below via fresh solves on a probe grid, and the
/// revenue direction via the concavity-based mean-value bound.
pub fn check_continuity(
    model: &MarketModel,
    impact: &ImpactFunction,
    utility: &Utility,
    probe: &SolverGrid,
    x0: &DVector<f64>,
    r0: f64,
) -> Result<CheckReport, DpError> {
    let n_seq = 6;
    let w_limit = solve_value(model, impact, utility, probe, x0, r0)?.w_top;
    let mut worst = f64::INFINITY;
    let mut tested = 0usize;

    for dir in [1.0, -1.0] {
        let mut gaps = Vec::new();
        for n in 1..=n_seq {
            let t_n = probe.horizon * (1.0 + dir * 0.5f64.powi(n));
            let mut g = probe.clone();
            g.horizon = t_n;
            let w_n = solve_value(model, impact, utility, &g, x0, r0)?.w_top;
            gaps.push((w_n - w_limit).abs());
        }
        // Monotone decay within the scheme budget, and the final gap is
        // dominated by the dyadic modulus fitted from the first term.
        for pair in gaps.windows(2) {
            worst = worst.min(pair[0] - pair[1]);
            tested += 1;
        }
        let modulus = 2.0 * gaps[0];
        worst = worst.min(modulus * 0.5f64.powi(n_seq - 1) + 2.0 * SCHEME_TOL_LOG - gaps[n_seq as usize - 1]);
        tested += 1;
    }

    // Revenue direction on a stored probe surface: the log-gap slope bounds
    // the increments along r_n = r0 + 2^-n (mean-value with a concave V).
    let probe_surface = solve_surface(model, impact, utility, probe)?;
    let top = probe_surface.n_layers() - 1;
    let r_axis = probe.r_axis();
    let ir = r_axis.index_of(r0).expect("r0 on the probe grid");
    let x_idx: Vec<usize> = (0..probe.d())
        .map(|k| probe.x_axes[k].index_of(x0[k]).expect("x0 on the probe grid"))
        .collect();
    let x_flat = probe.x_flat_of_indices(&x_idx);
    let w_at_r0 = probe_surface.w_at(top, x_flat, ir);
    let slope = (probe_surface.w_at(top, x_flat, ir + 1) - probe_surface.w_at(top, x_flat, ir - 1))
        / (2.0 * r_axis.step);
    for n in 1..=n_seq {
        let h = 0.5f64.powi(n);
        let w_n = probe_surface
            .interp_w(top, x0, r0 + h)
            .expect("within the revenue range");
        let gap = (w_n - w_at_r0).abs();
        let bound = slope.abs() * h * (1.0 + 1e-6) + FP_REL_TOL * w_at_r0.abs();
        worst = worst.min(bound - gap);
        tested += 1;
    }

    Ok(CheckReport::conclude(
        "continuity",
        "V is continuous along horizon and revenue sequences",
        tested,
        worst,
        EXACT_TOL.max(0.0),
        0.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::Axis;
    use approx::assert_relative_eq;

    fn scenario() -> (MarketModel, ImpactFunction, Utility, SolverGrid, DVector<f64>) {
        let model = MarketModel::scalar(0.1, 0.3, 1.0).unwrap();
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        let utility = Utility::exp_mixture(&[0.5, 0.5], &[0.5, 2.0]).unwrap();
        let grid = SolverGrid::new(
            4,
            1.0,
            vec![Axis::spanning(-0.25, 2.25, 0.025).unwrap()],
            6.0,
            8,
            8.0,
            2.0,
            7,
        )
        .unwrap();
        (model, impact, utility, grid, DVector::from_element(1, 2.0))
    }

    #[test]
    fn fenchel_integral_matches_quadratic_closed_form() {
        let impact = ImpactFunction::quadratic(0.5).unwrap();
        // int_0^T (b t)^2 / (4 lambda) dt = b^2 T^3 / (12 lambda)
        for &(b, t) in &[(0.2, 1.0), (0.2, 0.5), (0.4, 2.0)] {
            let expect = b * b * t * t * t / (12.0 * 0.5);
            assert_relative_eq!(
                fenchel_drift_integral(&impact, b, t),
                expect,
                max_relative = 1e-9
            );
        }
        assert_eq!(fenchel_drift_integral(&impact, 0.0, 1.0), 0.0);
    }

    #[test]
    fn concavity_holds_on_a_small_surface() {
        let (model, impact, utility, grid, _) = scenario();
        let surface = solve_surface(&model, &impact, &utility, &grid).unwrap();
        let report = check_concavity(&surface, 500, 17);
        assert!(report.passed(), "{report}");
        assert!(report.tested_points >= 400);
        // Degenerate segments (a = b) are filtered, so every tested triple
        // is informative; rerun with another seed for determinism coverage.
        let again = check_concavity(&surface, 500, 17);
        assert_eq!(report, again);
    }

    #[test]
    fn sandwich_brackets_the_small_surface() {
        let (model, impact, utility, grid, _) = scenario();
        let surface = solve_surface(&model, &impact, &utility, &grid).unwrap();
        let report = check_sandwich(&surface, &model, &impact, &utility, 24).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn initial_condition_family_behaves() {
        let (model, impact, utility, grid, x0) = scenario();
        let mut family = Vec::new();
        for k in 0..4 {
            let mut g = grid.clone();
            g.horizon = 1.0 / (1 << k) as f64;
            let s = solve_surface(&model, &impact, &utility, &g).unwrap();
            family.push((g.horizon, s));
        }
        let report = check_initial_condition(&family, &impact, &utility, 0.1, &x0, 0.0);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn bellman_residual_within_budget_and_refinement_improves() {
        let (model, impact, utility, grid, x0) = scenario();
        let surface = solve_surface(&model, &impact, &utility, &grid).unwrap();
        let report = check_bellman(&surface, &model, &impact, 200, 3);
        assert!(report.passed(), "{report}");

        let mut base = grid.clone();
        base.level = 3;
        base.quad_order = 5;
        let refine = check_bellman_refinement(&model, &impact, &utility, &base, &x0, 0.0).unwrap();
        assert!(refine.passed(), "{refine}");
    }

    #[test]
    fn derivative_check_agrees_on_small_scenario() {
        let (model, impact, utility, grid, x0) = scenario();
        let surface = solve_surface(&model, &impact, &utility, &grid).unwrap();
        let sim = SimConfig {
            n_paths: 20_000,
            steps: 16,
            seed: 99,
            antithetic: false,
        };
        let report =
            check_partial_derivative_r(&surface, &model, &impact, &utility, &x0, 0.0, sim)
                .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn continuity_probe_passes() {
        let (model, impact, utility, _, x0) = scenario();
        let probe = SolverGrid::new(
            3,
            1.0,
            vec![Axis::spanning(-0.25, 2.25, 0.05).unwrap()],
            4.0,
            6,
            8.0,
            2.0,
            5,
        )
        .unwrap();
        let report = check_continuity(&model, &impact, &utility, &probe, &x0, 0.0).unwrap();
        assert!(report.passed(), "{report}");
    }
}
