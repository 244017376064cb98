//! Subcommand implementations.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use thiserror::Error;

use optliq::cara::{cara_value_pair, solve_cara, SolveError};
use optliq::dp::{extract_policy, solve_surface, solve_value, DpError, ValueSurface};
use optliq::mc::{
    budget_check, budget_threshold_constant, estimate_value, moment_check, simulate, ControlLaw,
    SimError,
};
use optliq::verify::{run_suite, Scenario as SuiteScenario, SuiteConfig, SuiteError, Verdict};

use crate::artifacts::{self, ArtifactError};
use crate::config::{invariant_field, ConfigError, Scenario};
use crate::svg;

#[derive(Error, Debug)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{0} checks failed; see the scoreboard")]
    ChecksFailed(usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("usage: {0}")]
    Usage(String),
}

impl From<SuiteError> for CliError {
    fn from(e: SuiteError) -> Self {
        match e {
            SuiteError::Solve(e) => CliError::Solve(e),
            SuiteError::Dp(e) => CliError::Dp(e),
            SuiteError::Sim(e) => CliError::Sim(e),
        }
    }
}

impl CliError {
    /// Process exit code: 1 usage/config, 2 check failure, 3 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 2,
            CliError::Solve(SolveError::NonConvergence { .. }) => 3,
            CliError::Solve(_) | CliError::Dp(_) | CliError::Sim(_) => 3,
            _ => 1,
        }
    }
}

pub enum Format {
    Csv,
    Json,
}

/// Validates model invariants, rejecting with the configuration field named.
pub fn validate(sc: &Scenario, format: &Format) -> Result<(), CliError> {
    let report = sc.model.validate();
    match format {
        Format::Json => {
            let rows: Vec<serde_json::Value> = report
                .checks
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "name": c.name,
                        "passed": c.passed,
                        "residual": c.residual,
                        "detail": c.detail,
                    })
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows).unwrap());
        }
        Format::Csv => {
            for c in &report.checks {
                println!(
                    "{:<28} {:<6} residual {:.3e}  {}",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.residual,
                    c.detail
                );
            }
        }
    }
    if let Some(fail) = report.first_failure() {
        return Err(ConfigError::Invalid {
            field: invariant_field(fail.name).to_string(),
            message: format!("{} failed: {}", fail.name, fail.detail),
        }
        .into());
    }
    Ok(())
}

/// Guard used by every solving command.
fn ensure_valid(sc: &Scenario) -> Result<(), CliError> {
    let report = sc.model.validate();
    if let Some(fail) = report.first_failure() {
        return Err(ConfigError::Invalid {
            field: invariant_field(fail.name).to_string(),
            message: format!("{} failed: {}", fail.name, fail.detail),
        }
        .into());
    }
    Ok(())
}

/// Solves both exponential benchmark problems and writes the strategies.
pub fn solve_cara_cmd(sc: &Scenario, steps: usize, out: &Path) -> Result<(), CliError> {
    ensure_valid(sc)?;
    let (a1, a2) = sc.utility.ara();
    let pair = cara_value_pair(
        &sc.utility,
        &sc.model,
        &sc.impact,
        sc.grid.horizon,
        &sc.x0,
        sc.r0,
        steps,
    )?;
    println!("risk aversion bounds: A1 = {a1}, A2 = {a2}");
    println!("cost(A1) = {:.9}  V1 = {:.6e}", pair.cost1, pair.v1);
    println!("cost(A2) = {:.9}  V2 = {:.6e}", pair.cost2, pair.v2);

    let mut rows = Vec::new();
    let sol1 = solve_cara(a1, &sc.model, &sc.impact, sc.grid.horizon, &sc.x0, sc.r0, steps)?;
    let sol2 = solve_cara(a2, &sc.model, &sc.impact, sc.grid.horizon, &sc.x0, sc.r0, steps)?;
    for i in 0..steps {
        let t = sol1.strategy.t_grid()[i];
        let mut row = vec![t];
        row.extend(sol1.strategy.x_node(i).iter().cloned());
        row.extend(sol1.strategy.rates()[i].iter().cloned());
        row.extend(sol2.strategy.x_node(i).iter().cloned());
        row.extend(sol2.strategy.rates()[i].iter().cloned());
        rows.push(row);
    }
    let d = sc.model.d;
    let mut header = vec!["t".to_string()];
    for tag in ["x_a1", "rate_a1", "x_a2", "rate_a2"] {
        for k in 0..d {
            header.push(format!("{tag}_{k}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    artifacts::write_table(out, "cara_strategy.csv", &header_refs, &rows)?;
    println!("strategies written to {}", out.join("cara_strategy.csv").display());
    Ok(())
}

/// Runs the backward induction and dumps the surface.
pub fn solve_dp_cmd(sc: &Scenario, out: &Path) -> Result<ValueSurface, CliError> {
    ensure_valid(sc)?;
    let surface = solve_surface(&sc.model, &sc.impact, &sc.utility, &sc.grid)?;
    let w_top = surface
        .top_w(&sc.x0, sc.r0)
        .ok_or_else(|| CliError::Usage("starting point outside the grid".into()))?;
    println!(
        "V(T, X0, R0) = {:.6e}   (log-gap {:.9}, offset {:.3e})",
        surface.offset - w_top.exp(),
        w_top,
        surface.offset
    );
    println!(
        "truncation monitor: {:.4}% of selected-control quadrature out of range",
        surface.clamp_share() * 100.0
    );
    artifacts::write_surface(out, &surface)?;
    artifacts::write_layer_stats(out, &surface)?;
    println!("surface dump written to {}", out.join("surface.csv").display());
    Ok(surface)
}

/// Simulates either the feedback policy of a stored surface or the
/// lower-envelope exponential benchmark strategy.
pub fn simulate_cmd(
    sc: &Scenario,
    source: &str,
    surface_dir: Option<&Path>,
    out: &Path,
    format: &Format,
) -> Result<(), CliError> {
    ensure_valid(sc)?;
    let result = match source {
        "surface" => {
            let dir = surface_dir
                .map(PathBuf::from)
                .unwrap_or_else(|| out.to_path_buf());
            let surface = artifacts::read_surface(&dir)?;
            let policy = extract_policy(&surface);
            simulate(
                &sc.model,
                &sc.impact,
                ControlLaw::Feedback(&policy),
                &sc.x0,
                sc.r0,
                sc.sim,
                &[],
            )?
        }
        "cara" => {
            let (_, a2) = sc.utility.ara();
            let bench = solve_cara(
                a2,
                &sc.model,
                &sc.impact,
                sc.grid.horizon,
                &sc.x0,
                sc.r0,
                sc.sim.steps,
            )?;
            simulate(
                &sc.model,
                &sc.impact,
                ControlLaw::Deterministic(&bench.strategy),
                &sc.x0,
                sc.r0,
                sc.sim,
                &[],
            )?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown simulation source '{other}' (expected surface|cara)"
            )))
        }
    };
    artifacts::write_samples(out, &result)?;
    let est = estimate_value(&result, &sc.utility)?;
    let (a1, a2) = sc.utility.ara();
    let pair = cara_value_pair(
        &sc.utility,
        &sc.model,
        &sc.impact,
        sc.grid.horizon,
        &sc.x0,
        sc.r0,
        256,
    )?;
    let c = budget_threshold_constant(
        sc.model.b.norm(),
        sc.grid.horizon,
        sc.impact.lambda(),
        sc.impact.exponent(),
    );
    let budget = budget_check(
        &result,
        a1,
        pair.v2,
        sc.r0,
        sc.model.b.norm(),
        sc.grid.horizon,
        c,
    );
    let moment = moment_check(&result, a2);
    match format {
        Format::Json => {
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "paths": result.n(),
                    "mean_utility": est.mean,
                    "stderr": est.stderr,
                    "ci99": [est.ci99.0, est.ci99.1],
                    "mean_budget": budget.sample_mean,
                    "budget_bound": budget.bound,
                    "budget_pass": budget.passed,
                    "exp_moment_2a2": moment.estimate,
                    "exp_moment_finite": moment.finite,
                    "heavy_tail": moment.heavy_tail,
                    "max_fuel_residual": result.max_fuel_residual(),
                }))
                .unwrap()
            );
        }
        Format::Csv => {
            println!("paths: {}", result.n());
            println!("mean utility: {:.9e} +- {:.3e} (99% CI [{:.6e}, {:.6e}])", est.mean, est.stderr, est.ci99.0, est.ci99.1);
            println!("impact budget: {:.6} (bound {:.6e}, {})", budget.sample_mean, budget.bound, if budget.passed { "pass" } else { "FAIL" });
            println!("exp moment at 2 A2: {:.6e} (finite: {}, heavy tail: {})", moment.estimate, moment.finite, moment.heavy_tail);
            println!("max fuel residual: {:.3e}", result.max_fuel_residual());
        }
    }
    println!("samples written to {}", out.join("samples.csv").display());
    Ok(())
}

/// Runs the full scoreboard; exit code 2 when a check fails.
pub fn verify_cmd(sc: &Scenario, out: &Path, format: &Format) -> Result<(), CliError> {
    ensure_valid(sc)?;
    let suite_sc = SuiteScenario {
        model: sc.model.clone(),
        impact: sc.impact.clone(),
        utility: sc.utility.clone(),
        grid: sc.grid.clone(),
        x0: sc.x0.clone(),
        r0: sc.r0,
        sim: sc.sim,
    };
    let cfg = SuiteConfig::for_grid(&sc.grid);
    let reports = run_suite(&suite_sc, &cfg)?;
    for r in &reports {
        println!("{r}");
    }
    artifacts::write_scoreboard(out, &reports)?;
    artifacts::write_scoreboard_text(out, &reports)?;
    if matches!(format, Format::Json) {
        artifacts::write_scoreboard_json(out, &reports)?;
    }
    let failures = reports.iter().filter(|r| r.verdict == Verdict::Fail).count();
    if failures > 0 {
        return Err(CliError::ChecksFailed(failures));
    }
    Ok(())
}

/// Re-solves the scenario while varying one parameter; writes V against it.
pub fn sweep_cmd(
    sc: &Scenario,
    param: &str,
    values: &[f64],
    out: &Path,
) -> Result<(), CliError> {
    ensure_valid(sc)?;
    let mut rows = Vec::new();
    for &v in values {
        let mut model = sc.model.clone();
        let mut impact = sc.impact.clone();
        let mut utility = sc.utility.clone();
        let mut grid = sc.grid.clone();
        match param {
            "model.t" => {
                if !(v > 0.0) {
                    return Err(CliError::Usage("model.t values must be positive".into()));
                }
                grid.horizon = v;
                model.t_max = v.max(model.t_max);
            }
            "model.b" => {
                if sc.model.d != 1 {
                    return Err(CliError::Usage("model.b sweep needs d = 1".into()));
                }
                model = optliq::model::MarketModel::scalar(v, sc.model.sigma[(0, 0)], sc.model.t_max)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            "model.sigma" => {
                if sc.model.d != 1 {
                    return Err(CliError::Usage("model.sigma sweep needs d = 1".into()));
                }
                model = optliq::model::MarketModel::scalar(sc.model.b[0], v, sc.model.t_max)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            "impact.lambda" => {
                impact = match sc.impact.exponent() {
                    p if p == 2.0 => optliq::model::ImpactFunction::quadratic(v),
                    p => optliq::model::ImpactFunction::power_law(v, p),
                }
                .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            "impact.p" => {
                impact = optliq::model::ImpactFunction::power_law(sc.impact.lambda(), v)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
            }
            "utility.a" => {
                utility =
                    optliq::model::Utility::cara(v).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unsupported sweep parameter '{other}' (expected one of \
                     model.t, model.b, model.sigma, impact.lambda, impact.p, utility.a)"
                )))
            }
        }
        let stream = solve_value(&model, &impact, &utility, &grid, &sc.x0, sc.r0)?;
        let pair = cara_value_pair(&utility, &model, &impact, grid.horizon, &sc.x0, sc.r0, 256)?;
        let v_dp = stream.offset - stream.w_top.exp();
        rows.push(vec![v, v_dp, stream.w_top, pair.v1, pair.v2]);
        println!("{param} = {v}: V = {v_dp:.6e} (log-gap {:.6})", stream.w_top);
    }
    artifacts::write_table(
        out,
        "sweep.csv",
        &[param, "v_dp", "log_gap", "v1", "v2"],
        &rows,
    )?;
    println!("sweep written to {}", out.join("sweep.csv").display());
    Ok(())
}

/// Renders one of the plot kinds from previously written artifacts.
pub fn plot_cmd(kind: &str, input: &Path, layer: Option<usize>, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| ArtifactError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    match kind {
        "value-vs-param" => {
            let mut rdr = csv::Reader::from_path(input).map_err(ArtifactError::from)?;
            let headers = rdr.headers().map_err(ArtifactError::from)?.clone();
            let param = headers.get(0).unwrap_or("param").to_string();
            let mut v_dp = Vec::new();
            let mut v1 = Vec::new();
            let mut v2 = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(ArtifactError::from)?;
                let x: f64 = rec[0].parse().unwrap_or(f64::NAN);
                v_dp.push((x, rec[1].parse().unwrap_or(f64::NAN)));
                v1.push((x, rec[3].parse().unwrap_or(f64::NAN)));
                v2.push((x, rec[4].parse().unwrap_or(f64::NAN)));
            }
            let svg_text = svg::line_chart(
                "value against parameter",
                &param,
                "V",
                &[
                    ("V".to_string(), v_dp),
                    ("upper envelope".to_string(), v1),
                    ("lower envelope".to_string(), v2),
                ],
            );
            let path = out.join("value_vs_param.svg");
            std::fs::write(&path, svg_text).map_err(|e| ArtifactError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            println!("wrote {}", path.display());
        }
        "heatmap" => {
            let dir = input;
            let surface = artifacts::read_surface(dir)?;
            let layer = layer.unwrap_or(surface.n_layers() - 1);
            if layer >= surface.n_layers() {
                return Err(CliError::Usage(format!(
                    "layer {layer} out of range (0..{})",
                    surface.n_layers() - 1
                )));
            }
            if surface.grid.d() != 1 {
                return Err(CliError::Usage("heatmap requires d = 1".into()));
            }
            let xs: Vec<f64> = (0..surface.grid.x_axes[0].count)
                .map(|i| surface.grid.x_axes[0].value(i))
                .collect();
            let r_axis = surface.grid.r_axis();
            let rs: Vec<f64> = (0..r_axis.count).map(|j| r_axis.value(j)).collect();
            // log-gap per (r row, x column); smaller is better.
            let values: Vec<Vec<f64>> = (0..r_axis.count)
                .map(|j| (0..xs.len()).map(|i| surface.w_at(layer, i, j)).collect())
                .collect();
            let svg_text = svg::heatmap(
                &format!("log-gap surface, layer {layer}"),
                "inventory",
                "revenue",
                &xs,
                &rs,
                &values,
            );
            let path = out.join(format!("surface_layer_{layer}.svg"));
            std::fs::write(&path, svg_text).map_err(|e| ArtifactError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            println!("wrote {}", path.display());
        }
        "convergence" => {
            let mut rdr = csv::Reader::from_path(input).map_err(ArtifactError::from)?;
            let mut pts = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(ArtifactError::from)?;
                let layer: f64 = rec[0].parse().unwrap_or(f64::NAN);
                let resid: f64 = rec[2].parse().unwrap_or(f64::NAN);
                pts.push((layer, resid));
            }
            let svg_text = svg::line_chart(
                "sampled one-step residual by layer",
                "layer",
                "residual (log-gap units)",
                &[("residual".to_string(), pts)],
            );
            let path = out.join("convergence.svg");
            std::fs::write(&path, svg_text).map_err(|e| ArtifactError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            println!("wrote {}", path.display());
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown plot kind '{other}' (expected value-vs-param|heatmap|convergence)"
            )))
        }
    }
    Ok(())
}
