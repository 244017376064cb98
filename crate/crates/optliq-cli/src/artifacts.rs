//! File artifacts: surface dumps, sample tables, scoreboards.
//!
//! All data files are deterministic for a given configuration and seed:
//! RFC 4180 CSV with a mandatory header row, shortest-round-trip float
//! formatting, no timestamps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use optliq::dp::{Axis, Layer, SolverGrid, ValueSurface, POLICY_INFEASIBLE};
use optliq::mc::SimResult;
use optliq::verify::CheckReport;

#[derive(Error, Debug)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl ToString) -> ArtifactError {
    ArtifactError::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Sidecar metadata of a surface dump: grid geometry, content hashes, and
/// the hash of the data file itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceMeta {
    pub level: u32,
    pub horizon: f64,
    pub x_axes: Vec<(f64, f64, usize)>,
    pub r_radius: f64,
    pub j_controls: usize,
    pub xi_max: f64,
    pub q_cluster: f64,
    pub quad_order: usize,
    pub offset: f64,
    pub model_hash: String,
    pub utility_hash: String,
    pub grid_hash: String,
    pub truncation_events: u64,
    pub truncation_evals: u64,
    pub data_sha256: String,
}

/// Writes `surface.csv` (node table) and `surface.meta.json` next to it.
pub fn write_surface(dir: &Path, surface: &ValueSurface) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join("surface.csv");
    let grid = &surface.grid;
    let d = grid.d();
    let nr = grid.r_axis().count;
    let r_axis = grid.r_axis();

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["layer".to_string(), "t_remaining".to_string()];
        header.push("x_flat".to_string());
        for k in 0..d {
            header.push(format!("x_{k}"));
        }
        header.extend(
            ["r_index", "r", "log_gap", "value", "policy", "feasible"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for layer in 0..surface.n_layers() {
            let t_rem = layer as f64 * grid.dt();
            for x_flat in 0..grid.n_x_nodes() {
                let x = grid.x_node(x_flat);
                for ir in 0..nr {
                    let wv = surface.w_at(layer, x_flat, ir);
                    let mut rec = vec![layer.to_string(), fmt(t_rem), x_flat.to_string()];
                    for k in 0..d {
                        rec.push(fmt(x[k]));
                    }
                    rec.push(ir.to_string());
                    rec.push(fmt(r_axis.value(ir)));
                    rec.push(fmt(wv));
                    rec.push(fmt(surface.offset - wv.exp()));
                    rec.push(surface.policy_at(layer, x_flat, ir).to_string());
                    rec.push(if wv.is_finite() { "1" } else { "0" }.to_string());
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush().map_err(|e| io_err(&csv_path, e))?;
    }
    fs::write(&csv_path, &buf).map_err(|e| io_err(&csv_path, e))?;

    let meta = SurfaceMeta {
        level: grid.level,
        horizon: grid.horizon,
        x_axes: grid.x_axes.iter().map(|a| (a.min, a.step, a.count)).collect(),
        r_radius: grid.r_radius,
        j_controls: grid.j_controls,
        xi_max: grid.xi_max,
        q_cluster: grid.q_cluster,
        quad_order: grid.quad_order,
        offset: surface.offset,
        model_hash: surface.model_hash.clone(),
        utility_hash: surface.utility_hash.clone(),
        grid_hash: surface.grid_hash.clone(),
        truncation_events: surface.clamp_count,
        truncation_evals: surface.eval_count,
        data_sha256: sha256_hex(&buf),
    };
    let meta_path = dir.join("surface.meta.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| io_err(&meta_path, e))?;
    Ok(csv_path)
}

/// Reads a surface dump back, verifying the data hash recorded in the
/// sidecar. Values and policy reproduce exactly.
pub fn read_surface(dir: &Path) -> Result<ValueSurface, ArtifactError> {
    let meta_path = dir.join("surface.meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: SurfaceMeta = serde_json::from_str(&meta_text)?;
    let csv_path = dir.join("surface.csv");
    let bytes = fs::read(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    if sha256_hex(&bytes) != meta.data_sha256 {
        return Err(format_err(&csv_path, "data hash does not match the sidecar"));
    }

    let axes: Vec<Axis> = meta
        .x_axes
        .iter()
        .map(|&(min, step, count)| Axis { min, step, count })
        .collect();
    let grid = SolverGrid::new(
        meta.level,
        meta.horizon,
        axes,
        meta.r_radius,
        meta.j_controls,
        meta.xi_max,
        meta.q_cluster,
        meta.quad_order,
    )
    .map_err(|e| format_err(&meta_path, e))?;

    let nr = grid.r_axis().count;
    let n_nodes = grid.n_x_nodes() * nr;
    let n_layers = grid.n_steps() + 1;
    let mut layers: Vec<Layer> = (0..n_layers).map(|_| Layer::infeasible(n_nodes)).collect();

    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let d = grid.d();
    for record in rdr.records() {
        let rec = record?;
        let layer: usize = rec[0].parse().map_err(|e| format_err(&csv_path, e))?;
        let x_flat: usize = rec[2].parse().map_err(|e| format_err(&csv_path, e))?;
        let ir: usize = rec[3 + d].parse().map_err(|e| format_err(&csv_path, e))?;
        let log_gap: f64 = rec[5 + d].parse().map_err(|e| format_err(&csv_path, e))?;
        let policy: u16 = rec[7 + d].parse().map_err(|e| format_err(&csv_path, e))?;
        let idx = x_flat * nr + ir;
        layers[layer].w[idx] = log_gap;
        layers[layer].policy[idx] = policy;
    }

    Ok(ValueSurface {
        grid,
        offset: meta.offset,
        layers,
        layer_residuals: vec![],
        layer_seconds: vec![],
        clamp_count: meta.truncation_events,
        eval_count: meta.truncation_evals,
        model_hash: meta.model_hash,
        utility_hash: meta.utility_hash,
        grid_hash: meta.grid_hash,
    })
}

/// Per-layer sampled residuals of a solve (no timings: data files stay
/// byte-identical across runs).
pub fn write_layer_stats(dir: &Path, surface: &ValueSurface) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("layers.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["layer", "t_remaining", "sampled_residual"])?;
    for (layer, resid) in surface.layer_residuals.iter().enumerate() {
        w.write_record(&[
            layer.to_string(),
            fmt(layer as f64 * surface.grid.dt()),
            fmt(*resid),
        ])?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Per-path sample table.
pub fn write_samples(dir: &Path, result: &SimResult) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("samples.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["path", "terminal_revenue", "budget", "fuel_residual"])?;
    for (i, s) in result.samples.iter().enumerate() {
        w.write_record(&[
            i.to_string(),
            fmt(s.terminal_revenue),
            fmt(s.budget),
            fmt(s.fuel_residual),
        ])?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Scoreboard in CSV form.
pub fn write_scoreboard(dir: &Path, reports: &[CheckReport]) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("scoreboard.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "check",
        "property",
        "tested_points",
        "worst_margin",
        "tol_scheme",
        "tol_statistical",
        "verdict",
    ])?;
    for r in reports {
        w.write_record(&[
            r.name.clone(),
            r.property.clone(),
            r.tested_points.to_string(),
            fmt(r.worst_margin),
            fmt(r.tol_scheme),
            fmt(r.tol_statistical),
            r.verdict.to_string(),
        ])?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Scoreboard as pretty text.
pub fn write_scoreboard_text(dir: &Path, reports: &[CheckReport]) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("scoreboard.txt");
    let mut text = String::new();
    for r in reports {
        text.push_str(&format!("{r}\n"));
    }
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Scoreboard as JSON.
pub fn write_scoreboard_json(dir: &Path, reports: &[CheckReport]) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    #[derive(Serialize)]
    struct Row<'a> {
        check: &'a str,
        property: &'a str,
        tested_points: usize,
        worst_margin: f64,
        tol_scheme: f64,
        tol_statistical: f64,
        verdict: String,
    }
    let rows: Vec<Row> = reports
        .iter()
        .map(|r| Row {
            check: &r.name,
            property: &r.property,
            tested_points: r.tested_points,
            worst_margin: r.worst_margin,
            tol_scheme: r.tol_scheme,
            tol_statistical: r.tol_statistical,
            verdict: r.verdict.to_string(),
        })
        .collect();
    let path = dir.join("scoreboard.json");
    let mut text = serde_json::to_string_pretty(&rows)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Generic two-column-plus table writer for sweeps.
pub fn write_table(
    dir: &Path,
    name: &str,
    header: &[&str],
    rows: &[Vec<f64>],
) -> Result<PathBuf, ArtifactError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    for row in rows {
        let rec: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Shortest round-trip formatting; infinities written as inf/-inf.
pub fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

pub use POLICY_INFEASIBLE as _POLICY_INFEASIBLE;
